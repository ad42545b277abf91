"""Box-norm and k-support norm toolkit."""

from boxnorm.prox import ProxConfig, prox_sq_box, prox_sq_ksup
from boxnorm.spectral import NormSpec, PenaltySpec, spectral_norm, spectral_prox
from boxnorm.vecnorm import BoxParams, box_norm, k_support_norm

__all__ = [
    "BoxParams",
    "NormSpec",
    "PenaltySpec",
    "ProxConfig",
    "__version__",
    "box_norm",
    "k_support_norm",
    "prox_sq_box",
    "prox_sq_ksup",
    "spectral_norm",
    "spectral_prox",
]

__version__ = "0.1.0"
