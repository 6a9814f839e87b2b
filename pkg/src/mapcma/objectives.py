"""Benchmark objective functions and their experiment metadata.

All six functions are minimized with optimal value 0. They accept either a
single point of shape ``(dim,)`` or a batch of shape ``(k, dim)`` and return a
float or an array of ``k`` values, respectively.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch


def sphere(x):
    x = np.asarray(x, dtype=float)
    return np.sum(x**2, axis=-1)


def ellipsoid(x):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    coef = 10.0 ** (6.0 * np.arange(n) / (n - 1))
    return np.sum(coef * x**2, axis=-1)


def cigar(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0] ** 2 + 1e6 * np.sum(x[..., 1:] ** 2, axis=-1)


def rosenbrock(x):
    x = np.asarray(x, dtype=float)
    head, tail = x[..., :-1], x[..., 1:]
    return np.sum(100.0 * (head**2 - tail) ** 2 + (head - 1.0) ** 2, axis=-1)


def ackley(x):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    rms = np.sqrt(np.sum(x**2, axis=-1) / n)
    mean_cos = np.sum(np.cos(2.0 * math.pi * x), axis=-1) / n
    return 20.0 - 20.0 * np.exp(-0.2 * rms) + math.e - np.exp(mean_cos)


def rastrigin(x):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    return 10.0 * n + np.sum(x**2 - 10.0 * np.cos(2.0 * math.pi * x), axis=-1)


FUNCTIONS = {
    "sphere": sphere,
    "ellipsoid": ellipsoid,
    "cigar": cigar,
    "rosenbrock": rosenbrock,
    "ackley": ackley,
    "rastrigin": rastrigin,
}

# (a, b) of the uniform box the initial mean is drawn from
INIT_BOXES = {
    "sphere": (1.0, 5.0),
    "ellipsoid": (1.0, 5.0),
    "cigar": (1.0, 5.0),
    "rastrigin": (1.0, 5.0),
    "rosenbrock": (-2.0, 2.0),
    "ackley": (1.0, 30.0),
}


@dataclass(frozen=True)
class Objective:
    """A named benchmark function bound to a dimension.

    >>> Objective("rosenbrock", 3)(np.ones(3))
    0.0
    """

    name: str
    dim: int

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ValueError(
                f"unknown objective {self.name!r}; expected one of {sorted(FUNCTIONS)}"
            )
        if int(self.dim) != self.dim or self.dim < 2:
            raise ValueError(f"dim must be an integer >= 2, got {self.dim!r}")

    @property
    def init_box(self):
        return INIT_BOXES[self.name]

    @property
    def optimum(self):
        """Location of the global minimizer."""
        if self.name == "rosenbrock":
            return np.ones(self.dim)
        return np.zeros(self.dim)

    def __call__(self, x):
        return evaluate(self, x)


def evaluate(obj, x):
    """Value of ``obj`` at ``x`` (or at each row of ``x``).

    Does not count evaluations; budgets are tracked by the caller.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != obj.dim:
        raise DimensionMismatch(
            f"{obj.name} expects vectors of length {obj.dim}, got shape {x.shape}"
        )
    value = FUNCTIONS[obj.name](x)
    return float(value) if x.ndim == 1 else value


class EvalBudgetCounter:
    """Counts evaluations against a fixed budget."""

    def __init__(self, max_evals):
        if max_evals < 1:
            raise ValueError("max_evals must be positive")
        self.max = int(max_evals)
        self.count = 0

    def add(self, n):
        self.count += int(n)
        return self.count

    @property
    def exhausted(self):
        return self.count >= self.max

    def __repr__(self):
        return f"EvalBudgetCounter(count={self.count}, max={self.max})"
