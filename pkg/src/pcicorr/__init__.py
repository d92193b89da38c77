"""Masked maximal correlation with PCI-masks for multi-modal feature learning."""

from .features import FeatureBatch, center, covariance
from .correlation import (
    correlation_loss,
    hadamard_matrix,
    masked_corr,
    soft_hgr,
    total_masked_corr,
)
from .mask import (
    BisectionError,
    MaskFit,
    MaskSet,
    PciMask,
    PgdConfig,
    mask_gradient,
    optimize_mask,
    pgd_step,
    project,
    truncate,
)

__version__ = "0.1.0"

__all__ = [
    "BisectionError",
    "FeatureBatch",
    "MaskFit",
    "MaskSet",
    "PciMask",
    "PgdConfig",
    "center",
    "correlation_loss",
    "covariance",
    "hadamard_matrix",
    "mask_gradient",
    "masked_corr",
    "optimize_mask",
    "pgd_step",
    "project",
    "soft_hgr",
    "total_masked_corr",
    "truncate",
]
