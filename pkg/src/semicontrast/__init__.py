"""Semi-supervised contrastive pre-training for dense segmentation."""

__version__ = "0.1.0"
