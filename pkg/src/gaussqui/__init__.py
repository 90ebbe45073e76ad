"""Invariants, moments and PPT tests for 1-3 beam Gaussian fields measured by photocounting."""

from .distribution import JointDistribution
from .gauss_core import (
    CovarianceMatrix,
    GaussianStateParams,
    SymplecticSpectrum,
    build_covariance,
    is_physical,
    partial_transpose,
    qui_from_covariance,
    symplectic_eigenvalues,
)
from .moments import IntensityMoments, PhotonMoments, moments_from_params, reduce_to_single_mode

__version__ = "0.1.0"

__all__ = [
    "CovarianceMatrix",
    "GaussianStateParams",
    "IntensityMoments",
    "JointDistribution",
    "PhotonMoments",
    "SymplecticSpectrum",
    "build_covariance",
    "is_physical",
    "moments_from_params",
    "partial_transpose",
    "qui_from_covariance",
    "reduce_to_single_mode",
    "symplectic_eigenvalues",
]
