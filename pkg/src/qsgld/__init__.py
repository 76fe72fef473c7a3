"""Quantized stochastic gradient Langevin dynamics: optimizers, noise diagnostics and an SDE reference."""

from .errors import ConfigError, DataError, DimensionError, FormatError, NumericalError, QsgldError, RangeError, UsageError
from .numerics import RngStream, autocorrelation, axpy, ks_statistic, l2_norm, sample_stats
from .quantizer import (
    C0,
    CompensationConfig,
    ErrorSamples,
    QuantizationSchedule,
    QuantizedVector,
    compensation,
    qp_at,
    quantize_scalar,
    quantize_vector,
    quantized_step,
)
from .optimizers import OptimizerConfig, OptimizerState, TrajectoryRecord, init_state, run, search_direction, step
from .objectives import Analytic, Dataset, MlpObjective, MlpSpec, Quadratic, StochasticBatches, eval_analytic
from .langevin import SdeConfig, ou_second_moment, simulate_sde, weak_error_scan
from .diagnostics import clt_test, correlation_test, paralysis_probe, wnh_test

__version__ = "0.1.0"
