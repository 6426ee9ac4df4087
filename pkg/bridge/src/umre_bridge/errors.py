class BridgeError(Exception):
    """Base class for export failures."""


class JobConfigError(BridgeError):
    pass


class DatasetFormatError(BridgeError):
    pass


class EmbedderOutputError(BridgeError):
    """The embedding callable returned something unusable; carries the item index."""

    def __init__(self, index: int, item_id: str, message: str):
        self.index = index
        self.item_id = item_id
        super().__init__(f"item {index} (id {item_id!r}): {message}")
