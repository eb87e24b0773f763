"""Exception types raised across the package."""


class RcpsError(ValueError):
    """Base class for invalid inputs and unsatisfied preconditions."""


class NotContractiveError(RcpsError):
    """Raised when an operation needs spectral radius strictly below one."""


class BurnInError(RcpsError):
    """Raised when the trajectory is too short for the block mixing penalty."""

    def __init__(self, message, product=None):
        super().__init__(message)
        self.product = product


class ConfigError(RcpsError):
    """Raised for malformed or inconsistent experiment configuration."""
