"""Bayesian spatially varying changepoint detection on the sphere.

Spectral (spherical harmonic) representations of the latent Gaussian fields,
a multinomial probit changepoint prior sampled entirely by Gibbs steps, and a
spectral AR(1) space-time error process.
"""

from .errors import ConfigError, NumericalError, SingularOperatorError
from .spharm import DHGrid, ErrorOperator, Transform, build_error_operator, build_grid, sht_forward, sht_inverse
from .spectral_prior import MaternSpec

__all__ = [
    "ConfigError",
    "NumericalError",
    "SingularOperatorError",
    "DHGrid",
    "ErrorOperator",
    "Transform",
    "build_error_operator",
    "build_grid",
    "sht_forward",
    "sht_inverse",
    "MaternSpec",
]
