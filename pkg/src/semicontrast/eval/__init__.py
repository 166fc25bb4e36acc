from .embeddings import EmbeddingTable, embedding_separation, export_embeddings, principal_projection
from .metrics import dice_score, mean_over_volumes
from .report import CellResult, MetricsReport, read_report, render_table, write_report

__all__ = [
    "CellResult",
    "EmbeddingTable",
    "MetricsReport",
    "dice_score",
    "embedding_separation",
    "export_embeddings",
    "mean_over_volumes",
    "principal_projection",
    "read_report",
    "render_table",
    "write_report",
]
