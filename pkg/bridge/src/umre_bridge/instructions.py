"""Default query-side instruction templates, keyed by task tag and by dataset.

Instructions condition only the query encoding; candidate payloads never carry
them (the export layer enforces this regardless of configuration).
"""

TASK_INSTRUCTIONS: dict[str, str] = {
    "T->T": "Given a web search query, retrieve relevant passages that answer the query.",
    "I->I": "Find a day-to-day image that looks similar to the provided image.",
    "T->I": "Find an image that matches the given caption.",
    "T->VD": "Find a screenshot that relevant to the user's question.",
    "I->T": "Find an image caption describing the following image.",
    "T->IT": "Find a Wikipedia image that answers this question.",
    "IT->T": "Retrieve a Wikipedia paragraph that provides an answer to the given query about the image.",
    "IT->I": "Retrieve a day-to-day image that aligns with the modification instructions of the provided image.",
    "IT->IT": "Retrieve a Wikipedia image-description pair that provides evidence for the question of this image.",
}

DATASET_INSTRUCTIONS: dict[str, str] = {
    "flickr30k-t2i": "Find an image that matches the given caption.",
    "mscoco-t2i": "Identify the image showcasing the described everyday scene.",
    "msmarco": "Given a web search query, retrieve relevant passages that answer the query.",
    "cirr": "Retrieve a day-to-day image that aligns with the modification instructions of the provided image.",
    "okvqa": "Retrieve documents that provide an answer to the question alongside the image.",
    "fashioniq": "Find a fashion image that aligns with the reference image and style note.",
}


def instruction_for(task: str | None = None, dataset: str | None = None) -> str | None:
    """Dataset-specific template when known, else the task default."""
    if dataset is not None and dataset.lower() in DATASET_INSTRUCTIONS:
        return DATASET_INSTRUCTIONS[dataset.lower()]
    if task is not None:
        return TASK_INSTRUCTIONS.get(task)
    return None
