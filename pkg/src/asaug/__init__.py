"""Entropy-adaptive spatial augmentation for semi-supervised segmentation."""

__version__ = "0.1.0"
