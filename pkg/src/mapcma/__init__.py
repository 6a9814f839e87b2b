"""CMA-ES with a maximum-a-posteriori momentum update (MAP-CMA)."""

from .cma import (
    CMA,
    Population,
    SearchDistribution,
    StrategyParams,
    Variant,
    ask,
    default_strategy_params,
    tell,
    tell_with_prior,
)
from .exceptions import (
    CovarianceCollapse,
    DimensionMismatch,
    InvalidConfig,
    InvalidPrior,
    NotPositiveDefinite,
)
from .harness import TrialConfig, run_experiment, run_trial, sp1
from .objectives import Objective, evaluate

__version__ = "0.1.0"
