"""U-Netmer: multi-scale patch segmentation with a transformer bottleneck."""

from ._core import (
    DivergenceError,
    IoError,
    Model,
    ValidationError,
    confidence_score,
    coverage_curve,
    dice,
    jaccard,
    lr_at_epoch,
    make_synthetic_dataset,
    pearson,
    pixel_accuracy,
    preprocess,
    protoseg_sa,
    sensitivity,
    specificity,
    split,
    stitch,
)

__all__ = [
    "DivergenceError",
    "IoError",
    "Model",
    "ValidationError",
    "confidence_score",
    "coverage_curve",
    "dice",
    "jaccard",
    "lr_at_epoch",
    "make_synthetic_dataset",
    "pearson",
    "pixel_accuracy",
    "preprocess",
    "protoseg_sa",
    "sensitivity",
    "specificity",
    "split",
    "stitch",
]
