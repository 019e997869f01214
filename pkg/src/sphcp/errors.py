"""Exception types. Invalid arguments raise plain ``ValueError``."""


class ConfigError(ValueError):
    """Bad or unknown configuration key/value."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-finite input, quadrature, convergence)."""


class SingularOperatorError(NumericalError):
    """Cholesky factorization of a (block) operator failed."""
