"""Exception types raised by the optimizer and its numeric kernels."""

import numpy as np


class DimensionMismatch(ValueError):
    """An input vector or matrix does not have the expected dimension."""


class NotPositiveDefinite(np.linalg.LinAlgError):
    """A matrix expected to be positive definite failed factorization."""


class CovarianceCollapse(NotPositiveDefinite):
    """The adapted covariance matrix lost positive definiteness.

    Raised by the update routines; callers decide whether to abort. The
    experiment harness turns it into a failed trial.
    """


class InvalidPrior(ValueError):
    """Normal-inverse-Wishart parameters violate their constraints."""


class InvalidConfig(ValueError):
    """Strategy or experiment configuration is inconsistent."""
