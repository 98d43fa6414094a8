"""Treatment effects when the policy also moves who participates.

Modules: ``dgp`` (structural model), ``oracle`` (exact estimands), ``synth``
(simulated cohorts and the dataset format), ``estimators`` (finite-sample
estimators), ``mc`` (Monte Carlo harness) and ``cli``.
"""
from .dgp import (
    Binned,
    DGPSpec,
    Discrete,
    Exponential,
    Identity,
    LogisticInTheta,
    LogNormal,
    NoisyProxy,
    OutcomeFunction,
    PiecewiseConstant,
    RatioShift,
    two_type_spec,
    validate_spec,
)
from .oracle import QuadratureConfig, estimand_report
from .synth import Dataset, SampleConfig, read_dataset, simulate, write_dataset

__version__ = "0.1.0"
