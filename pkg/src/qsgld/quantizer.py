"""Grid quantization, the increasing-resolution schedule and the compensation term.

A value on the grid of resolution ``qp`` is stored as an integer numerator
``n`` with ``x = n / qp``.  Rounding is round-half-down,
``n = ceil(qp*x - 1/2)``, so the error factor ``eps = n - qp*x`` always
lies in ``[-1/2, 1/2)``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DimensionError, RangeError, UsageError
from .numerics import as_vector

__all__ = [
    "C0",
    "DEFAULT_ETA",
    "DEFAULT_BIG_C",
    "QuantizationSchedule",
    "QuantizedVector",
    "QuantizationErrorSample",
    "QuantizationErrors",
    "ErrorSamples",
    "CompensationConfig",
    "quantize_scalar",
    "quantize_vector",
    "qp_at",
    "compensation",
    "quantized_step",
]

# variance of a uniform(-1/2, 1/2) error factor
C0 = 1.0 / 12.0
DEFAULT_ETA = 2.0**9.5
DEFAULT_BIG_C = 2.0**-19

# numerators must stay exactly representable as int64
_NUMER_LIMIT = 2.0**62

_LOGS = {"natural": math.log, "log2": math.log2, "log10": math.log10}
KINDS = ("power-of-base", "capped-sqrt-log", "constant")


@dataclass(frozen=True)
class QuantizationSchedule:
    """Parameters of the quantization-parameter schedule ``Q_p(tau)``.

    ``kind="power-of-base"`` gives ``eta * base**p`` with
    ``p = max(0, floor(0.5 * log_base(log(tau + 2))))``;
    ``kind="capped-sqrt-log"`` gives ``max(1, floor(sqrt(log(t_e + 2) / big_c)))``.
    ``kind="constant"`` pins ``Q_p = eta`` (used for fixed-resolution studies).
    All kinds are evaluated at the start of the epoch containing ``tau`` so the
    resolution is constant over the ``batches_per_epoch`` steps of an epoch.
    ``log`` picks the inner logarithm (natural by default).
    """

    eta: float = DEFAULT_ETA
    base: int = 2
    big_c: float = DEFAULT_BIG_C
    batches_per_epoch: int = 1
    kind: str = "power-of-base"
    log: str = "natural"

    def __post_init__(self):
        if not self.eta > 0:
            raise UsageError("eta must be positive")
        if int(self.base) != self.base or self.base < 2:
            raise UsageError("base must be an integer >= 2")
        if not self.big_c > 0:
            raise UsageError("big_c must be positive")
        if int(self.batches_per_epoch) != self.batches_per_epoch or self.batches_per_epoch < 1:
            raise UsageError("batches_per_epoch must be a positive integer")
        if self.kind not in KINDS:
            raise UsageError(f"unknown schedule kind {self.kind!r}")
        if self.log not in _LOGS:
            raise UsageError(f"unknown log convention {self.log!r}")

    def exponent(self, tau):
        """Grid exponent ``p`` (power-of-base kind) at step ``tau``."""
        t = self.epoch_of(tau) * self.batches_per_epoch
        inner = _LOGS[self.log](t + 2)
        return max(0, math.floor(0.5 * math.log(inner, self.base)))

    def epoch_of(self, tau):
        if tau < 0:
            raise UsageError("tau must be nonnegative")
        return int(tau) // self.batches_per_epoch

    def qp_at(self, tau):
        if self.kind == "constant":
            self.epoch_of(tau)
            return float(self.eta)
        if self.kind == "power-of-base":
            return float(self.eta * self.base ** self.exponent(tau))
        t_e = self.epoch_of(tau)
        q = math.floor(math.sqrt(_LOGS[self.log](t_e + 2) / self.big_c))
        return float(max(1, q))


def qp_at(schedule, tau):
    return schedule.qp_at(tau)


@dataclass(frozen=True)
class QuantizedVector:
    """Vector on the grid of spacing ``1/qp``, stored as int64 numerators."""

    numer: np.ndarray
    qp: float

    @property
    def values(self):
        return self.numer / self.qp

    @property
    def dim(self):
        return self.numer.shape[0]

    def __len__(self):
        return self.dim

    def regrid(self, qp):
        """Project onto a new grid; exact when the new grid contains the old one."""
        if qp == self.qp:
            return self
        q, _ = quantize_vector(self.values, qp)
        return q


@dataclass(frozen=True)
class QuantizationErrorSample:
    epsilon_factor: float
    qp: float
    step_index: int

    @property
    def error(self):
        return self.epsilon_factor / self.qp


@dataclass(frozen=True)
class QuantizationErrors:
    """Error factors of one quantized vector, one per coordinate."""

    epsilon: np.ndarray
    qp: float
    step_index: int = 0

    def __len__(self):
        return self.epsilon.shape[0]

    def __iter__(self):
        for e in self.epsilon:
            yield QuantizationErrorSample(float(e), self.qp, self.step_index)


def _check_qp(qp):
    if not (qp > 0 and math.isfinite(qp)):
        raise UsageError(f"qp must be positive and finite, got {qp}")


def _round_numer(y):
    if np.any(np.abs(y) >= _NUMER_LIMIT):
        raise RangeError("value too large for the grid at this resolution")
    return np.ceil(y - 0.5)


def quantize_scalar(x, qp):
    """Return ``(xq, eps)`` with ``xq = x + eps/qp`` on the grid ``Z/qp``."""
    _check_qp(qp)
    if not math.isfinite(x):
        raise UsageError("x must be finite")
    y = qp * x
    n = float(_round_numer(np.float64(y)))
    return n / qp, n - y


def quantize_vector(x, qp, step_index=0):
    """Componentwise quantization; returns the grid vector and its error factors."""
    _check_qp(qp)
    x = as_vector(x)
    y = qp * x
    n = _round_numer(y)
    return QuantizedVector(n.astype(np.int64), float(qp)), QuantizationErrors(n - y, float(qp), step_index)


@dataclass(frozen=True)
class CompensationConfig:
    """Sigmoid-decayed boost ``lam * expit(-kappa*(tau - tau0)) * h/|h|``."""

    kappa: float = 2.0
    tau0: int = 0
    lam: float = 0.01
    enabled: bool = True

    def __post_init__(self):
        if not self.kappa > 0:
            raise UsageError("kappa must be positive")
        if self.tau0 < 0:
            raise UsageError("tau0 must be nonnegative")
        if not self.lam > 0:
            raise UsageError("lam must be positive")

    def factor(self, tau):
        return float(special.expit(-self.kappa * (tau - self.tau0)))


def compensation(cfg, tau, h):
    """Compensation vector for search direction ``h``; zero when ``h == 0`` or disabled."""
    h = as_vector(h, "h")
    if h.size == 0:
        raise DimensionError("h must be nonempty")
    norm = float(np.linalg.norm(h))
    if not cfg.enabled or norm == 0.0:
        return np.zeros_like(h)
    return (cfg.lam * cfg.factor(tau) / norm) * h


def quantized_step(h, lam, r, qp, step_index=0):
    """Quantize ``lam*h + r``; returns ``(step, errors)``."""
    h = as_vector(h, "h")
    r = as_vector(r, "r")
    if h.shape != r.shape:
        raise DimensionError(f"dimension mismatch: {h.shape[0]} vs {r.shape[0]}")
    return quantize_vector(lam * h + r, qp, step_index)


class ErrorSamples:
    """Collector of quantization error factors with an optional row cap.

    Without ``limit`` every factor is kept.  With ``limit`` the sink keeps a
    uniform reservoir sample of at most ``limit`` rows, drawing replacement
    positions from ``rng`` (an :class:`~qsgld.numerics.RngStream`).
    Iterating yields :class:`QuantizationErrorSample` objects.
    """

    def __init__(self, limit=None, rng=None):
        if limit is not None and limit < 1:
            raise UsageError("limit must be positive")
        if limit is not None and rng is None:
            raise UsageError("a capped sink needs an rng for reservoir sampling")
        self.limit = limit
        self.rng = rng
        self.seen = 0
        self._chunks = []
        if limit is not None:
            self._eps = np.empty(limit)
            self._qp = np.empty(limit)
            self._step = np.empty(limit, dtype=np.int64)

    def append(self, errors):
        eps = np.asarray(errors.epsilon, dtype=np.float64)
        k = eps.size
        if self.limit is None:
            self._chunks.append(errors)
            self.seen += k
            return
        start = self.seen
        fill = max(0, min(k, self.limit - start))
        if fill:
            sl = slice(start, start + fill)
            self._eps[sl] = eps[:fill]
            self._qp[sl] = errors.qp
            self._step[sl] = errors.step_index
        if fill < k:
            idx = np.arange(start + fill, start + k)
            j = self.rng.generator.integers(0, idx + 1)
            keep = j < self.limit
            pos = j[keep]
            self._eps[pos] = eps[fill:][keep]
            self._qp[pos] = errors.qp
            self._step[pos] = errors.step_index
        self.seen += k

    def __len__(self):
        return self.seen if self.limit is None else min(self.seen, self.limit)

    def arrays(self):
        """Return ``(step, qp, epsilon)`` arrays of the retained rows."""
        if self.limit is not None:
            n = len(self)
            return self._step[:n].copy(), self._qp[:n].copy(), self._eps[:n].copy()
        if not self._chunks:
            return np.empty(0, dtype=np.int64), np.empty(0), np.empty(0)
        step = np.concatenate([np.full(len(c), c.step_index, dtype=np.int64) for c in self._chunks])
        qp = np.concatenate([np.full(len(c), c.qp) for c in self._chunks])
        eps = np.concatenate([c.epsilon for c in self._chunks])
        return step, qp, eps

    @property
    def epsilon(self):
        return self.arrays()[2]

    def __iter__(self):
        step, qp, eps = self.arrays()
        for s, q, e in zip(step, qp, eps):
            yield QuantizationErrorSample(float(e), float(q), int(s))
