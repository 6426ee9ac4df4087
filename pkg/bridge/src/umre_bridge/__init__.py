"""umre-bridge: export external embedding models into engine file formats."""

__version__ = "0.1.0"

from .export import ExportJob, export, export_qrels  # noqa: F401
from .stub import HashEmbedder  # noqa: F401
