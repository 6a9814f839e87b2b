"""CMA-ES, pure rank-mu CMA-ES and MAP-CMA with cumulative step-size adaptation.

The functional core is :func:`ask` and :func:`tell`, which map an immutable
:class:`SearchDistribution` to a :class:`Population` and back. :class:`CMA`
wraps them into the usual stateful ask-and-tell object::

    es = CMA(mean=np.full(10, 3.0), sigma=2.0, variant="map-cma", r="n", seed=1)
    while es.best_f > 1e-10:
        X = es.ask()
        es.tell(sphere(X))

MAP-CMA differs from CMA-ES only in the mean update, which gains the
momentum term ``(c1 / (r c_mu)) sigma p_c`` built from the freshly updated
evolution path, and in its mean learning rate ``c_m = 1 / (1 + c1 / (c_mu r))``.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np

from .exceptions import CovarianceCollapse, DimensionMismatch, InvalidConfig, NotPositiveDefinite
from .igo_niw import NiwPrior, default_weights
from .linalg import cholesky, default_eig_floor, inv_sqrt_from_eigh, symmetrize


class Variant(str, Enum):
    CMA_ES = "cma-es"
    PURE_RANK_MU = "pure-rank-mu"
    MAP_CMA = "map-cma"


def resolve_r(r, n):
    """Turn a literal or one of ``"1"``, ``"sqrt-n"``, ``"n"`` into a float."""
    if isinstance(r, str):
        key = r.strip().lower()
        symbolic = {"1": 1.0, "sqrt-n": math.sqrt(n), "n": float(n)}
        if key in symbolic:
            return symbolic[key]
        try:
            r = float(key)
        except ValueError:
            raise InvalidConfig(
                f"r must be a positive number or one of '1', 'sqrt-n', 'n'; got {r!r}"
            ) from None
    r = float(r)
    if not r > 0:
        raise InvalidConfig(f"r must be positive, got {r}")
    return r


def expected_norm(n):
    """Approximation of E||N(0, I_n)||."""
    return math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n**2))


@dataclass(frozen=True, eq=False)
class StrategyParams:
    """Fixed strategy parameters of one optimizer run.

    Use :func:`default_strategy_params` unless a test needs a custom set.
    """

    N: int
    lam: int
    weights: np.ndarray
    mu_eff: float
    c_m: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c1: float
    c_mu: float
    chi_n: float
    variant: Variant = Variant.CMA_ES
    r: Optional[float] = None
    use_h_sigma: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "variant", Variant(self.variant))
        if w.shape != (self.lam,):
            raise InvalidConfig(f"need {self.lam} weights, got {w.size}")
        if not 0 < self.c_sigma <= 1 or not 0 < self.c_c <= 1:
            raise InvalidConfig("cumulation rates must lie in (0, 1]")
        if self.c1 < 0 or not self.c_mu > 0 or self.c1 + self.c_mu > 1 + 1e-12:
            raise InvalidConfig("need c1 >= 0, c_mu > 0 and c1 + c_mu <= 1")
        if not math.isclose(self.mu_eff, 1.0 / np.sum(w**2), rel_tol=1e-12):
            raise InvalidConfig("mu_eff must equal 1 / sum(w_i^2)")
        if self.variant is Variant.MAP_CMA and not (self.r is not None and self.r > 0):
            raise InvalidConfig("map-cma needs a positive r")

    @property
    def mu(self):
        return int(np.count_nonzero(self.weights > 0))

    @property
    def momentum_coef(self):
        """Coefficient ``c1 / (r c_mu)`` of ``sigma p_c`` in the mean step (0 for non-MAP)."""
        if self.variant is not Variant.MAP_CMA:
            return 0.0
        return self.c1 / (self.r * self.c_mu)


def default_strategy_params(N, lam=None, variant=Variant.CMA_ES, r=None, use_h_sigma=False):
    """Default hyperparameters for dimension ``N``.

    Parameters
    ----------
    N : int
        Search-space dimension, at least 2.
    lam : int, optional
        Population size; defaults to ``4 + floor(3 ln N)``.
    variant : Variant or str
        ``"cma-es"``, ``"pure-rank-mu"`` or ``"map-cma"``.
    r : float or str, optional
        Prior distance for MAP-CMA (required for it, ignored otherwise).
        Accepts the symbolic values understood by :func:`resolve_r`.
    use_h_sigma : bool
        Stall the rank-one path when the step-size path is too long.
    """
    try:
        variant = Variant(variant)
    except ValueError:
        raise InvalidConfig(f"unknown variant {variant!r}") from None
    if int(N) != N or N < 2:
        raise InvalidConfig(f"N must be an integer >= 2, got {N!r}")
    N = int(N)
    if lam is None:
        lam = 4 + int(math.floor(3 * math.log(N)))
    if int(lam) != lam or lam < 2:
        raise InvalidConfig(f"lambda must be an integer >= 2, got {lam!r}")
    lam = int(lam)
    if variant is Variant.MAP_CMA:
        if r is None:
            raise InvalidConfig("map-cma requires r")
        r = resolve_r(r, N)
    else:
        r = None

    w = default_weights(lam)
    mu_eff = 1.0 / np.sum(w**2)
    c_sigma = (mu_eff + 2) / (N + mu_eff + 5)
    d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (N + 1)) - 1) + c_sigma
    c_c = (4 + mu_eff / N) / (N + 4 + 2 * mu_eff / N)
    c1 = 0.0 if variant is Variant.PURE_RANK_MU else 2 / ((N + 1.3) ** 2 + mu_eff)
    c_mu = min(1 - c1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((N + 2) ** 2 + mu_eff))
    c_m = 1.0 / (1.0 + c1 / (c_mu * r)) if variant is Variant.MAP_CMA else 1.0
    return StrategyParams(
        N=N,
        lam=lam,
        weights=w,
        mu_eff=mu_eff,
        c_m=c_m,
        c_sigma=c_sigma,
        d_sigma=d_sigma,
        c_c=c_c,
        c1=c1,
        c_mu=c_mu,
        chi_n=expected_norm(N),
        variant=variant,
        r=r,
        use_h_sigma=use_h_sigma,
    )


@dataclass(frozen=True, eq=False)
class SearchDistribution:
    """State ``(m, sigma, C, p_sigma, p_c, t)``; candidates follow N(m, sigma^2 C)."""

    m: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    t: int = 0

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(-1)
        n = m.size
        C = symmetrize(self.C)
        p_sigma = np.array(self.p_sigma, dtype=float).reshape(-1)
        p_c = np.array(self.p_c, dtype=float).reshape(-1)
        if C.shape != (n, n) or p_sigma.size != n or p_c.size != n:
            raise DimensionMismatch("mean, covariance and paths disagree in dimension")
        if not self.sigma > 0:
            raise InvalidConfig(f"sigma must be positive, got {self.sigma}")
        for name, value in (("m", m), ("C", C), ("p_sigma", p_sigma), ("p_c", p_c)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "sigma", float(self.sigma))

    @classmethod
    def initial(cls, mean, sigma, C=None):
        """Fresh state with zero paths and, by default, identity covariance."""
        mean = np.asarray(mean, dtype=float).reshape(-1)
        n = mean.size
        C = np.eye(n) if C is None else C
        return cls(mean, sigma, C, np.zeros(n), np.zeros(n), 0)

    @property
    def dim(self):
        return self.m.size

    @cached_property
    def eigh(self):
        """Eigenvalues (ascending) and eigenvectors of ``C``, computed once."""
        return np.linalg.eigh(self.C)

    def min_eigenvalue(self):
        """Smallest eigenvalue of the full covariance ``sigma^2 C``."""
        return self.sigma**2 * float(self.eigh[0][0])


@dataclass(frozen=True, eq=False)
class Population:
    """Candidates ``x = m + sigma * y`` with optional objective values ``f``.

    Row ``i`` is the candidate with original index ``i``.
    """

    x: np.ndarray
    y: np.ndarray
    f: Optional[np.ndarray] = field(default=None)

    @property
    def size(self):
        return self.x.shape[0]

    def evaluated(self, f):
        """Copy of the population carrying objective values ``f``."""
        f = np.asarray(f, dtype=float).reshape(-1)
        if f.size != self.size:
            raise DimensionMismatch(f"{self.size} candidates but {f.size} values")
        return replace(self, f=f)

    def ranking(self):
        """Indices from best to worst; equal values keep their original order."""
        if self.f is None:
            raise ValueError("population has not been evaluated")
        return np.argsort(self.f, kind="stable")


def ask(state, params, rng):
    """Sample ``params.lam`` candidates from ``N(m, sigma^2 C)``.

    Raises :class:`CovarianceCollapse` if ``C`` has no Cholesky factor.
    """
    try:
        L = cholesky(state.C)
    except NotPositiveDefinite as exc:
        raise CovarianceCollapse(str(exc)) from exc
    z = rng.standard_normal((params.lam, state.dim))
    y = z @ L.T
    x = state.m + state.sigma * y
    return Population(x, y)


def _h_sigma(p_sigma, state, params):
    if not params.use_h_sigma:
        return 1.0
    decay = 1.0 - (1.0 - params.c_sigma) ** (2 * (state.t + 1))
    bound = math.sqrt(decay) * (1.4 + 2.0 / (params.N + 1)) * params.chi_n
    return 1.0 if np.linalg.norm(p_sigma) < bound else 0.0


def _check(state, params, pop):
    if pop.f is None:
        raise ValueError("tell needs an evaluated population")
    if pop.size != params.lam or pop.x.shape[1] != state.dim or state.dim != params.N:
        raise DimensionMismatch(
            f"population {pop.x.shape} does not match lambda={params.lam}, N={params.N}"
        )


def _paths(state, params, ys):
    """Updated (p_sigma, p_c, h_sigma) from the ranked steps ``ys``."""
    w = params.weights
    y_w = w @ ys
    cs, cc = params.c_sigma, params.c_c
    C_inv_sqrt = inv_sqrt_from_eigh(*state.eigh, default_eig_floor(state.C)).matrix
    p_sigma = (1 - cs) * state.p_sigma + math.sqrt(cs * (2 - cs) * params.mu_eff) * (C_inv_sqrt @ y_w)
    h = _h_sigma(p_sigma, state, params)
    p_c = (1 - cc) * state.p_c + h * math.sqrt(cc * (2 - cc) * params.mu_eff) * y_w
    return p_sigma, p_c, h


def _finish(state, params, m, C, p_sigma, p_c):
    t = state.t + 1
    C = symmetrize(C)
    if not np.all(np.isfinite(C)):
        raise CovarianceCollapse(f"covariance has non-finite entries at t={t}")
    eig = np.linalg.eigh(C)
    if eig[0][0] <= 0:
        raise CovarianceCollapse(f"covariance lost positive definiteness at t={t}")
    log_sigma = math.log(state.sigma) + (params.c_sigma / params.d_sigma) * (
        np.linalg.norm(p_sigma) / params.chi_n - 1
    )
    # sigma beyond ~1e300 makes sigma^2 C overflow
    if not (log_sigma < 690 and np.all(np.isfinite(m))):
        raise CovarianceCollapse(f"step-size or mean diverged at t={t}")
    sigma = math.exp(log_sigma)
    new = SearchDistribution(m, sigma, C, p_sigma, p_c, t)
    new.__dict__["eigh"] = eig
    return new


def tell(state, params, pop):
    """One generation update from an evaluated population.

    Order of operations: rank, update both paths, then the mean (whose
    MAP-CMA momentum term uses the new ``p_c``), the covariance, and the
    step-size. Returns the successor state; ``state`` is left untouched.

    Raises
    ------
    CovarianceCollapse
        If the updated ``C`` is not positive definite.
    """
    _check(state, params, pop)
    order = pop.ranking()
    xs, ys = pop.x[order], pop.y[order]
    w = params.weights
    C = state.C

    p_sigma, p_c, h = _paths(state, params, ys)

    mean_step = w @ (xs - state.m)
    if params.variant is Variant.MAP_CMA:
        mean_step = mean_step + params.momentum_coef * state.sigma * p_c
    m = state.m + params.c_m * mean_step

    rank_mu = (ys.T * w) @ ys - w.sum() * C
    C_new = C + params.c_mu * rank_mu
    if params.c1 > 0:
        stall = (1 - h) * params.c1 * params.c_c * (2 - params.c_c)
        C_new = C_new + params.c1 * (np.outer(p_c, p_c) - C) + stall * C

    return _finish(state, params, m, C_new, p_sigma, p_c)


PriorSource = Union[NiwPrior, Callable[[SearchDistribution, np.ndarray], NiwPrior]]


def tell_with_prior(state, params, pop, prior):
    """Generation update with an explicit NIW prior on ``(m, sigma^2 C)``.

    Instead of a rank-one term, the covariance receives the prior's natural
    gradient, divided by ``sigma^2``; the mean receives ``-gamma (m - delta)``.
    Paths and step-size follow :func:`tell`. ``params.c1`` only enters the
    optional ``h_sigma`` stall compensation.

    ``prior`` is an :class:`NiwPrior` or a callable ``prior(state, p_c_next)``
    for priors that depend on the freshly updated evolution path, such as
    :func:`mapcma.igo_niw.rank_one_prior`.
    """
    _check(state, params, pop)
    order = pop.ranking()
    xs, ys = pop.x[order], pop.y[order]
    w = params.weights
    C, sigma, n = state.C, state.sigma, state.dim

    p_sigma, p_c, h = _paths(state, params, ys)
    if callable(prior):
        prior = prior(state, p_c)
    if prior.dim != n:
        raise DimensionMismatch(f"prior of dim {prior.dim} for N={n}")

    diff = state.m - prior.delta
    m = state.m + params.c_m * (w @ (xs - state.m) - prior.gamma * diff)

    prior_term = (
        prior.gamma * np.outer(diff, diff) / sigma**2
        + prior.psi / sigma**2
        - (prior.nu + n + 2) * C
    )
    C_new = C + params.c_mu * ((ys.T * w) @ ys - w.sum() * C + prior_term)
    if params.c1 > 0:
        C_new = C_new + (1 - h) * params.c1 * params.c_c * (2 - params.c_c) * C

    return _finish(state, params, m, C_new, p_sigma, p_c)


class CMA:
    """Stateful ask-and-tell optimizer.

    Parameters
    ----------
    mean : array_like
        Initial mean; its length sets the dimension.
    sigma : float
        Initial step-size.
    variant : {"cma-es", "pure-rank-mu", "map-cma"}
    r : float or str, optional
        MAP-CMA prior distance, e.g. ``1``, ``"sqrt-n"`` or ``"n"``.
    lam : int, optional
        Population size.
    seed : int or numpy.random.Generator, optional
    use_h_sigma : bool
    """

    def __init__(self, mean, sigma, variant=Variant.CMA_ES, r=None, lam=None, seed=None,
                 use_h_sigma=False, C=None):
        self.state = SearchDistribution.initial(mean, sigma, C)
        self.params = default_strategy_params(
            self.state.dim, lam=lam, variant=variant, r=r, use_h_sigma=use_h_sigma
        )
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.evaluations = 0
        self.best_x = None
        self.best_f = math.inf
        self._pending = None

    @property
    def mean(self):
        return self.state.m

    @property
    def sigma(self):
        return self.state.sigma

    def ask(self):
        """New candidate solutions as a ``(lam, N)`` array."""
        self._pending = ask(self.state, self.params, self.rng)
        return self._pending.x.copy()

    def tell(self, f):
        """Update from the objective values of the last :meth:`ask` batch."""
        if self._pending is None:
            raise RuntimeError("tell called before ask")
        pop = self._pending.evaluated(f)
        self._pending = None
        self.evaluations += pop.size
        i = int(np.argmin(pop.f))
        if pop.f[i] < self.best_f:
            self.best_f = float(pop.f[i])
            self.best_x = pop.x[i].copy()
        self.state = tell(self.state, self.params, pop)
        return self.state
