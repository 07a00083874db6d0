"""Blob-chain semantic mask optimization and inpainting orchestration."""

__version__ = "0.1.0"

from .geometry import BlobParams, Covariance2, blob_covariance, chain_centers
from .optim import TrainConfig, default_blob_params, run_optimization
from .renderer import GridSpec, render_mask

__all__ = [
    "BlobParams",
    "Covariance2",
    "GridSpec",
    "TrainConfig",
    "blob_covariance",
    "chain_centers",
    "default_blob_params",
    "render_mask",
    "run_optimization",
]
