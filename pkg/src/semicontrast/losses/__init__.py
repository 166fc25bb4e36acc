from .complexity import count_pairwise_interactions
from .global_loss import global_contrastive_loss
from .local import local_contrastive_loss
from .oracle import reference_global_loss, reference_local_loss
from .sets import (
    STRATEGIES,
    ContrastGroup,
    ContrastSets,
    LocalFeatureMap,
    build_contrast_sets,
    feature_maps,
    grid_positions,
)

__all__ = [
    "STRATEGIES",
    "ContrastGroup",
    "ContrastSets",
    "LocalFeatureMap",
    "build_contrast_sets",
    "count_pairwise_interactions",
    "feature_maps",
    "global_contrastive_loss",
    "grid_positions",
    "local_contrastive_loss",
    "reference_global_loss",
    "reference_local_loss",
]
