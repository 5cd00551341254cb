"""Divide-and-conquer Bayesian kernel machine regression.

Subsets of the data are fitted independently with a Gaussian-process
regression sampler and the subset posteriors are merged through
Wasserstein barycenters or geometric medians.
"""

__version__ = "0.1.0"

from .data import Dataset, ModelConfig, PosteriorDraw, load_csv, standardize  # noqa: E402
from .errors import (DataError, DomainError, FastBKMRError, NumericalError,  # noqa: E402
                     UsageError)

__all__ = [
    "Dataset",
    "ModelConfig",
    "PosteriorDraw",
    "load_csv",
    "standardize",
    "FastBKMRError",
    "UsageError",
    "DataError",
    "DomainError",
    "NumericalError",
    "__version__",
]
