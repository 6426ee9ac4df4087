"""umre: dense-retrieval evaluation and contrastive-training engine.

Core layers:

- ``matrix``, ``search``, ``metrics``: embedding kernels, exact top-k, IR metrics
- ``infonce``: contrastive loss with analytic gradients
- ``mining``, ``dataflow``: hard-negative mining and data curation
- ``toytrain``: deterministic desk-scale trainer exercising the full recipe
- ``container``, ``fileformats``, ``manifest``, ``engine``: file formats and runs
- ``service``, ``cli``: FastAPI operational surface and its thin CLI client
"""

__version__ = "0.1.0"

from .matrix import EmbeddingMatrix, cosine, l2_normalize  # noqa: F401
from .search import TopKResult, rank_of, topk  # noqa: F401
