"""Natural-gradient updates for a Gaussian search distribution under a
normal-inverse-Wishart (NIW) prior.

Parameters of the Gaussian are kept in block form ``(m, C)``; gradients with
respect to them are :class:`ThetaGradient` pairs ``(d_m, d_C)`` with a
symmetric ``d_C``. The Fisher metric of the Gaussian is block diagonal, with
inverse ``blockdiag(C, 2 C kron C)``, so natural gradients never need the
vectorized ``N^2`` representation.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import multigammaln

from .exceptions import (
    CovarianceCollapse,
    DimensionMismatch,
    InvalidPrior,
    NotPositiveDefinite,
)
from .linalg import cholesky, min_eigenvalue, symmetrize


@dataclass(frozen=True)
class NormalParams:
    """Mean ``m`` and covariance ``C`` of a multivariate normal."""

    m: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(-1)
        C = symmetrize(self.C)
        if C.shape != (m.size, m.size):
            raise DimensionMismatch(f"mean of length {m.size} with C of shape {C.shape}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "C", C)

    @property
    def dim(self):
        return self.m.size


@dataclass(frozen=True)
class NiwPrior:
    """Normal-inverse-Wishart prior ``N(m | delta, C / gamma) W^-1(C | psi, nu)``."""

    delta: np.ndarray
    gamma: float
    psi: np.ndarray
    nu: float

    def __post_init__(self):
        delta = np.array(self.delta, dtype=float).reshape(-1)
        psi = symmetrize(self.psi)
        n = delta.size
        if psi.shape != (n, n):
            raise DimensionMismatch(f"delta of length {n} with psi of shape {psi.shape}")
        if not self.gamma > 0:
            raise InvalidPrior(f"gamma must be positive, got {self.gamma}")
        if not self.nu > n - 1:
            raise InvalidPrior(f"nu must exceed N - 1 = {n - 1}, got {self.nu}")
        if not min_eigenvalue(psi) > 0:
            raise InvalidPrior("psi must be positive definite")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self):
        return self.delta.size


@dataclass(frozen=True)
class ThetaGradient:
    """A (mean, covariance) pair of gradient blocks; ``d_C`` is symmetric."""

    d_m: np.ndarray
    d_C: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d_m", np.asarray(self.d_m, dtype=float))
        object.__setattr__(self, "d_C", symmetrize(self.d_C))

    def __add__(self, other):
        return ThetaGradient(self.d_m + other.d_m, self.d_C + other.d_C)

    def __mul__(self, scale):
        return ThetaGradient(scale * self.d_m, scale * self.d_C)

    __rmul__ = __mul__


def default_weights(lam):
    """Positive log-rank recombination weights, zero-padded to length ``lam``.

    ``mu = lam // 2`` weights proportional to ``ln((lam + 1) / 2) - ln(i)``
    normalized to sum to one; the remaining ``lam - mu`` entries are 0.
    """
    lam = int(lam)
    if lam < 2:
        raise ValueError(f"population size must be at least 2, got {lam}")
    mu = lam // 2
    raw = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
    w = np.zeros(lam)
    w[:mu] = raw / raw.sum()
    return w


def _check_dim(theta, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (theta.dim,):
        raise DimensionMismatch(f"expected a vector of length {theta.dim}, got shape {x.shape}")
    return x


def natural_grad_loglik_normal(theta, x):
    """Natural gradient of ``ln N(x | m, C)`` at ``theta``."""
    d = _check_dim(theta, x) - theta.m
    return ThetaGradient(d, np.outer(d, d) - theta.C)


def niw_logpdf(prior, theta):
    """Log density of the NIW prior at ``theta = (m, C)``."""
    n = theta.dim
    if prior.dim != n:
        raise DimensionMismatch(f"prior of dim {prior.dim} for theta of dim {n}")
    L = cholesky(theta.C)
    logdet_C = 2.0 * np.sum(np.log(np.diag(L)))
    logdet_psi = 2.0 * np.sum(np.log(np.diag(cholesky(prior.psi))))
    diff = theta.m - prior.delta
    # C^-1 via triangular solves against L
    z = np.linalg.solve(L, diff)
    maha = z @ z
    Linv = np.linalg.solve(L, np.eye(n))
    trace_psi_cinv = np.sum(Linv * (Linv @ prior.psi))  # tr(L^-T L^-1 psi)

    gamma, nu = prior.gamma, prior.nu
    log_normal = 0.5 * n * math.log(gamma / (2.0 * math.pi)) - 0.5 * logdet_C - 0.5 * gamma * maha
    log_invwishart = (
        0.5 * nu * logdet_psi
        - 0.5 * nu * n * math.log(2.0)
        - multigammaln(0.5 * nu, n)
        - 0.5 * (nu + n + 1) * logdet_C
        - 0.5 * trace_psi_cinv
    )
    return float(log_normal + log_invwishart)


def _inverse(C):
    L = cholesky(C)
    Linv = np.linalg.solve(L, np.eye(C.shape[0]))
    return symmetrize(Linv.T @ Linv)


def niw_vanilla_grad(prior, theta):
    """Euclidean gradient of :func:`niw_logpdf` with respect to ``(m, C)``.

    The covariance block is the derivative along symmetric perturbations:
    moving ``C`` by ``eps * E`` with symmetric ``E`` changes the log density
    by ``eps * sum(d_C * E)`` to first order.
    """
    n = theta.dim
    Cinv = _inverse(theta.C)
    u = Cinv @ (theta.m - prior.delta)
    d_m = -prior.gamma * u
    d_C = 0.5 * (
        prior.gamma * np.outer(u, u) - (prior.nu + n + 2) * Cinv + Cinv @ prior.psi @ Cinv
    )
    return ThetaGradient(d_m, d_C)


def apply_inverse_fisher(theta, g):
    """Multiply ``g`` by the inverse Fisher matrix of ``N(m, C)``.

    Mean block: ``C d_m``; covariance block: ``2 C d_C C``, the matrix form of
    ``(2 C kron C) vec(d_C)``.
    """
    C = theta.C
    return ThetaGradient(C @ g.d_m, 2.0 * C @ g.d_C @ C)


def niw_natural_grad(prior, theta):
    """Natural gradient of the NIW log density; needs no matrix inverse."""
    n = theta.dim
    diff = theta.m - prior.delta
    d_m = -prior.gamma * diff
    d_C = prior.gamma * np.outer(diff, diff) + prior.psi - (prior.nu + n + 2) * theta.C
    return ThetaGradient(d_m, d_C)


def _check_weights(weights, lam):
    w = np.asarray(weights, dtype=float)
    if w.shape != (lam,):
        raise DimensionMismatch(f"{lam} samples but {w.size} weights")
    return w


def map_igo_update(theta, sorted_samples, weights, prior, c_m, c_mu):
    """One MAP-IGO step for a Gaussian under an NIW prior.

    Parameters
    ----------
    theta : NormalParams
        Current mean and covariance.
    sorted_samples : array_like, shape (lam, N)
        Candidates ordered from best to worst objective value.
    weights : array_like, shape (lam,)
        Rank weights, already normalized to sum to one.
    prior : NiwPrior
    c_m, c_mu : float
        Learning rates for the mean and covariance blocks.

    Returns
    -------
    NormalParams

    Raises
    ------
    CovarianceCollapse
        If the updated covariance is not positive definite.
    """
    X = np.atleast_2d(np.asarray(sorted_samples, dtype=float))
    if X.shape[1] != theta.dim:
        raise DimensionMismatch(f"samples of dim {X.shape[1]} for theta of dim {theta.dim}")
    w = _check_weights(weights, X.shape[0])

    D = X - theta.m
    likelihood = ThetaGradient(w @ D, (D.T * w) @ D - w.sum() * theta.C)
    step = likelihood + niw_natural_grad(prior, theta)

    m_new = theta.m + c_m * step.d_m
    C_new = symmetrize(theta.C + c_mu * step.d_C)
    if not np.all(np.isfinite(C_new)) or min_eigenvalue(C_new) <= 0:
        raise CovarianceCollapse("MAP-IGO update produced a non-PD covariance")
    return NormalParams(m_new, C_new)


def rank_one_prior(m, sigma, C, p_c_next, r, c1, c_mu, nu):
    """NIW prior under which the MAP-IGO step reproduces the rank-one update.

    The prior mean points ``r * sigma`` evolution-path lengths ahead of the
    current mean, ``gamma = c1 / (r^2 c_mu)`` and
    ``psi = (nu + N + 2 - c1 / c_mu) sigma^2 C``. Feed it to
    :func:`map_igo_update` together with the covariance ``sigma^2 C``.
    """
    m = np.asarray(m, dtype=float).reshape(-1)
    p_c_next = np.asarray(p_c_next, dtype=float).reshape(-1)
    n = m.size
    if p_c_next.size != n:
        raise DimensionMismatch("evolution path and mean differ in length")
    if not r > 0 or not c_mu > 0:
        raise InvalidPrior("r and c_mu must be positive")
    coef = nu + n + 2 - c1 / c_mu
    if not coef > 0:
        raise InvalidPrior(
            f"nu + N + 2 - c1/c_mu = {coef} <= 0 makes psi non-positive-definite"
        )
    delta = m + r * sigma * p_c_next
    gamma = c1 / (r**2 * c_mu)
    try:
        return NiwPrior(delta, gamma, coef * sigma**2 * np.asarray(C, dtype=float), nu)
    except NotPositiveDefinite as exc:
        raise InvalidPrior(str(exc)) from exc
