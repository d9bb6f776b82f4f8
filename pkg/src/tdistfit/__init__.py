"""Maximum-likelihood estimation for the multivariate Student-t distribution.

Fixed-point estimators (EM, aEM, MMF, GMMF, ECME), SQUAREM and DAAREM
acceleration, and Student-t noise estimation for grayscale images.
"""

from .accel import DaaremConfig, ParamVector, Scheme, SquaremConfig, accelerated_fit
from .estimators import AlgorithmKind, FitConfig, FitResult, FitStatus, GaussianLimit, fit, fixed_point_map
from .linalg import NotPositiveDefinite, SpdMatrix, cholesky
from .model import StudentTParams, WeightedSample, neg_log_likelihood, sample
from .noise import GrayImage, HomogeneityTestConfig, NoConstantRegions, estimate_noise, kendall_tau, z_score

__all__ = [
    "AlgorithmKind",
    "DaaremConfig",
    "FitConfig",
    "FitResult",
    "FitStatus",
    "GaussianLimit",
    "GrayImage",
    "HomogeneityTestConfig",
    "NoConstantRegions",
    "NotPositiveDefinite",
    "ParamVector",
    "Scheme",
    "SpdMatrix",
    "SquaremConfig",
    "StudentTParams",
    "WeightedSample",
    "accelerated_fit",
    "cholesky",
    "estimate_noise",
    "fit",
    "fixed_point_map",
    "kendall_tau",
    "neg_log_likelihood",
    "sample",
    "z_score",
]

__version__ = "0.1.0"
