"""Euler-Maruyama reference for the Langevin SDE and an empirical weak-error scan.

The reference process is ``dX = -grad f(X) dt + sqrt(cq) * sigma(t) dB``.
On the quadratic with constant ``sigma`` this is an Ornstein-Uhlenbeck
process whose moments are known in closed form, which makes it a clean
oracle for how closely quantized descent tracks the SDE as ``lam`` shrinks.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, UsageError
from .numerics import RngStream, as_vector
from .objectives import Analytic, StochasticBatches
from .optimizers import OptimizerConfig, init_state, step
from .quantizer import C0, CompensationConfig, QuantizationSchedule, quantize_scalar

__all__ = [
    "SdeConfig",
    "schedule_sigma",
    "simulate_sde",
    "ou_second_moment",
    "step_variance_qp",
    "matched_qp",
    "WeakErrorReport",
    "weak_error_scan",
    "scan_setup",
    "TEST_FUNCTIONS",
]


@dataclass(frozen=True)
class SdeConfig:
    """``sigma_fn`` may be a callable of time or a constant."""

    cq: float = 1.0
    sigma_fn: object = 1.0
    dt: float = 1e-3
    horizon: float = 1.0

    def __post_init__(self):
        if self.cq < 0:
            raise UsageError("cq must be nonnegative")
        if not self.dt > 0:
            raise UsageError("dt must be positive")
        if not self.horizon >= self.dt:
            raise UsageError("horizon must be at least dt")

    def sigma(self, t):
        return float(self.sigma_fn(t)) if callable(self.sigma_fn) else float(self.sigma_fn)

    @property
    def steps(self):
        return int(round(self.horizon / self.dt))


def schedule_sigma(schedule, lam):
    """``sigma(t) = base**-p`` with ``p`` frozen per epoch of ``batches_per_epoch*lam`` time."""
    def sigma(t):
        tau = int(math.floor(t / lam + 1e-9))
        return float(schedule.base) ** -schedule.exponent(tau)
    return sigma


def _grad_rows(objective, X):
    if hasattr(objective, "grad_rows"):
        return objective.grad_rows(X)
    if X.ndim == 1:
        return objective.value_grad(X)[1]
    return np.stack([objective.value_grad(row)[1] for row in X])


def simulate_sde(cfg, objective, x0, rng, increments=None):
    """Terminal state of an Euler-Maruyama path (or of many paths at once).

    ``x0`` may be a vector or an ``(n_paths, d)`` array.  ``increments``, if
    given, supplies the standard normals as an array of shape
    ``(steps,) + x0.shape``; otherwise they are drawn from ``rng``.
    """
    x = np.array(x0, dtype=np.float64)
    if x.ndim == 1:
        as_vector(x, "x0")
    n = cfg.steps
    if increments is not None and increments.shape != (n,) + x.shape:
        raise UsageError(f"increments must have shape {(n,) + x.shape}")
    sq = math.sqrt(cfg.cq * cfg.dt)
    for k in range(n):
        z = increments[k] if increments is not None else rng.normal(size=x.shape)
        x = x - _grad_rows(objective, x) * cfg.dt + sq * cfg.sigma(k * cfg.dt) * z
    if not np.all(np.isfinite(x)):
        raise NumericalError("SDE path left the finite range")
    return x


def ou_second_moment(t, x0, sigma):
    """``E X_t**2`` for ``dX = -X dt + sigma dB`` started at ``x0``."""
    if t < 0:
        raise UsageError("t must be nonnegative")
    e = math.exp(-2.0 * t)
    return x0 * x0 * e + 0.5 * sigma * sigma * (1.0 - e)


def step_variance_qp(lam, cq=1.0, sigma=1.0):
    """Resolution from the relation ``1/Q_p = lam * sqrt(cq/c0) * sigma``.

    The relation equates the per-step rounding variance ``c0/Q_p**2`` with
    ``lam**2 * cq * sigma**2``.  A diffusion over time ``lam`` needs variance
    ``lam * cq * sigma**2`` instead, so this resolution makes the injected
    noise vanish like ``sqrt(lam)`` relative to the SDE.  :func:`matched_qp`
    gives the diffusion-matched resolution used by :func:`weak_error_scan`.
    """
    return 1.0 / (lam * math.sqrt(cq / C0) * sigma)


def matched_qp(lam, diffusion, noise_cells=1.0):
    """Resolution and gradient-noise scale that match a diffusion over one step.

    Gaussian gradient noise of ``noise_cells`` grid cells per step smooths the
    rounding so the error factor is uniform and independent of the input.
    The per-step variance is then ``(noise_cells**2 + c0)/Q_p**2``, which is
    set equal to ``lam * diffusion**2``.  Returns ``(qp, grad_noise_std)``.
    """
    if not (lam > 0 and diffusion > 0 and noise_cells >= 0):
        raise UsageError("lam and diffusion must be positive, noise_cells nonnegative")
    qp = math.sqrt((noise_cells**2 + C0) / (lam * diffusion**2))
    return qp, noise_cells / (qp * lam)


TEST_FUNCTIONS = {
    "x2": lambda x: x * x,
    "x1": lambda x: x,
    "constant": lambda x: np.ones_like(x),
}


def _exact_moment(g, t, x0, sigma):
    if g == "x2":
        return ou_second_moment(t, x0, sigma)
    if g == "x1":
        return x0 * math.exp(-t)
    return 1.0


@dataclass
class WeakErrorReport:
    test_fn: str
    lambda_values: list
    errors: list
    stderr: list
    fitted_order: float
    qp_values: list = field(default_factory=list)
    raw_errors: list = field(default_factory=list)
    epoch_error_sums: list = field(default_factory=list)

    def monotone(self, k=2.0):
        """Errors shrink with ``lam`` up to ``k`` combined standard errors."""
        e, s = self.errors, self.stderr
        return all(e[i + 1] <= e[i] + k * math.hypot(s[i], s[i + 1]) for i in range(len(e) - 1))

    def as_dict(self):
        return {
            "test_fn": self.test_fn,
            "lambda_values": list(self.lambda_values),
            "errors": list(self.errors),
            "stderr": list(self.stderr),
            "fitted_order": self.fitted_order,
            "qp_values": list(self.qp_values),
            "raw_errors": list(self.raw_errors),
        }


def scan_setup(lam, seeds, x0=1.0, diffusion=1.0, noise_cells=1.0):
    """Optimizer config, replica objective and start vector for one ``lam`` of the scan."""
    B = int(round(1.0 / lam))
    qp, noise = matched_qp(lam, diffusion, noise_cells)
    cfg = OptimizerConfig(
        "qsgld", lam,
        schedule=QuantizationSchedule(eta=qp, kind="constant", batches_per_epoch=B),
        compensation=CompensationConfig(enabled=False),
    )
    return cfg, StochasticBatches(Analytic("quadratic", seeds), B, noise), np.full(seeds, float(x0))


def weak_error_scan(objective="quadratic", g="x2", lambdas=(1 / 8, 1 / 16, 1 / 32), seeds=10_000,
                    horizon=1.0, rng=None, x0=1.0, cq=1.0, sigma=1.0, noise_cells=1.0):
    """Weak error of quantized descent against the OU process on the 1-D quadratic.

    For each ``lam`` the scan runs ``seeds`` independent replicas of qsgld
    (stacked as the coordinates of one separable vector, compensation off)
    with ``1/lam`` batches per epoch up to ``horizon``.  The resolution and
    gradient noise come from :func:`matched_qp`.

    Each replica is paired with an exact OU chain driven by the increments
    the optimizer actually injected, ``Y' = exp(-lam) Y + c * w``.  Since
    ``E g(Y_T)`` equals the closed-form moment, the reported error
    ``|mean(g(X_T) - g(Y_T))|`` estimates ``|E g(X_T) - E g(X(T))|`` with far
    less Monte-Carlo noise than comparing ``mean(g(X_T))`` to the formula
    directly (that comparison is kept in ``raw_errors``).
    """
    if objective != "quadratic":
        raise UsageError("weak_error_scan supports the quadratic objective only")
    if g not in TEST_FUNCTIONS:
        raise UsageError(f"unknown test function {g!r}")
    lambdas = [float(v) for v in lambdas]
    if len(lambdas) < 3:
        raise UsageError("need at least three lambda values")
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise UsageError("lambda values must be strictly decreasing")
    if seeds < 1000:
        raise UsageError("need at least 1000 seeds")
    rng = rng if rng is not None else RngStream(0)
    fn = TEST_FUNCTIONS[g]
    diffusion = math.sqrt(cq) * sigma
    report = WeakErrorReport(g, lambdas, [], [], float("nan"))
    for lam in lambdas:
        cfg, obj, start = scan_setup(lam, seeds, x0, diffusion, noise_cells)
        B, qp = obj.batch_count, cfg.schedule.eta
        steps = int(round(horizon / lam))
        state = init_state(cfg, start)
        xq0 = quantize_scalar(x0, qp)[0]
        y = state.x.copy()
        decay = math.exp(-lam)
        scale = math.sqrt(-math.expm1(-2.0 * lam) / (2.0 * lam))
        sums, acc = [], _Sum()
        for k in range(steps):
            _, grad = obj.loss_grad(state.x, k % B, rng)
            new = step(cfg, state, grad, acc)
            y = decay * y + scale * (new.x - (1.0 - lam) * state.x)
            state = new
            if (k + 1) % B == 0:
                sums.append(acc.pop())
        diff = fn(state.x) - fn(y)
        exact = _exact_moment(g, horizon, xq0, diffusion)
        report.errors.append(abs(float(np.mean(diff))))
        report.stderr.append(float(np.std(diff, ddof=1) / math.sqrt(seeds)))
        report.raw_errors.append(float(np.mean(fn(state.x))) - exact)
        report.qp_values.append(qp)
        report.epoch_error_sums.append(sums)
    e = np.array(report.errors)
    if np.all(e > 0):
        report.fitted_order = float(np.polyfit(np.log(lambdas), np.log(e), 1)[0])
    return report


class _Sum:
    def __init__(self):
        self.total = 0.0

    def append(self, errors):
        self.total += float(np.sum(errors.epsilon))

    def pop(self):
        t, self.total = self.total, 0.0
        return t
