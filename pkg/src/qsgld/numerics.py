"""Flat-vector arithmetic, seeded random streams and small statistics helpers.

Parameter vectors are plain 1-D ``float64`` numpy arrays; :func:`as_vector`
is the single gate that validates them.
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DimensionError, NumericalError, UsageError

__all__ = [
    "as_vector",
    "axpy",
    "l2_norm",
    "RngStream",
    "SampleStats",
    "sample_stats",
    "ks_statistic",
    "autocorrelation",
    "parse_cdf",
]

RNG_ALGORITHM = "philox4x64-10"


def as_vector(values, name="x"):
    """Return ``values`` as a finite 1-D float64 array (copying only if needed)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} contains NaN or Inf")
    return arr


def _same_dim(x, y):
    if x.shape != y.shape:
        raise DimensionError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")


def axpy(a, x, y):
    """Return ``a*x + y`` as a new vector; inputs are left untouched."""
    if not math.isfinite(a):
        raise NumericalError("scalar a must be finite")
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    _same_dim(x, y)
    return a * x + y


def l2_norm(x):
    x = as_vector(x)
    if x.size == 0:
        raise DimensionError("l2_norm of an empty vector")
    # scale by the largest entry so squares neither overflow nor underflow
    m = float(np.max(np.abs(x)))
    if m == 0.0:
        return 0.0
    return m * float(np.linalg.norm(x / m))


@dataclass
class RngStream:
    """Seeded random stream backed by the counter-based Philox generator.

    Two streams with the same ``seed`` produce bit-identical sequences.
    Child streams for parallel work come from :meth:`spawn`, never from a
    shared global generator.
    """

    seed: int
    algorithm_id: str = RNG_ALGORITHM
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.algorithm_id != RNG_ALGORITHM:
            raise UsageError(f"unknown RNG algorithm {self.algorithm_id!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        self.generator = np.random.Generator(np.random.Philox(self.seed))

    def spawn(self, n):
        """Return ``n`` independent child streams derived from this seed."""
        children = np.random.SeedSequence(self.seed).spawn(n)
        return [RngStream(int(c.generate_state(1, np.uint64)[0])) for c in children]

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def permutation(self, n):
        return self.generator.permutation(n)


@dataclass(frozen=True)
class SampleStats:
    count: int
    mean: float
    variance: float
    min: float
    max: float


def sample_stats(samples):
    """Count, mean, unbiased variance and range of ``samples``.

    numpy reductions use pairwise summation, which keeps the variance
    accurate to well below 1e-3 relative for the sample sizes used here.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise UsageError("need at least two samples")
    mean = float(np.mean(x))
    var = float(np.sum((x - mean) ** 2) / (x.size - 1))
    return SampleStats(int(x.size), mean, var, float(x.min()), float(x.max()))


_UNIFORM_RE = re.compile(r"^\s*uniform\s*\(\s*([^,]+)\s*,\s*([^)]+)\)\s*$")


def parse_cdf(cdf):
    """Resolve a distribution id into a vectorised CDF callable.

    Accepted ids: ``"standard-normal"``, ``"uniform(a,b)"``, a tuple
    ``("uniform", a, b)``, or any callable.
    """
    if callable(cdf):
        return cdf
    if isinstance(cdf, tuple) and cdf and cdf[0] == "uniform":
        a, b = float(cdf[1]), float(cdf[2])
    elif cdf == "standard-normal":
        return special.ndtr
    else:
        m = _UNIFORM_RE.match(str(cdf))
        if m is None:
            raise UsageError(f"unknown distribution id {cdf!r}")
        a, b = float(m.group(1)), float(m.group(2))
    if not b > a:
        raise UsageError("uniform(a,b) needs b > a")
    return lambda x: np.clip((np.asarray(x) - a) / (b - a), 0.0, 1.0)


def ks_statistic(samples, cdf, min_samples=10):
    """Kolmogorov-Smirnov sup-distance between sorted samples and a reference CDF."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    if n < min_samples:
        raise UsageError(f"ks_statistic needs at least {min_samples} samples, got {n}")
    if n > 1 and np.any(np.diff(x) < 0):
        raise UsageError("samples must be sorted ascending")
    f = parse_cdf(cdf)(x)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    return float(min(1.0, max(d_plus, d_minus, 0.0)))


def autocorrelation(samples, lag):
    """Sample autocorrelation at ``lag``; a zero-variance series gives 0."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if lag < 1:
        raise UsageError("lag must be a positive integer")
    if x.size <= lag + 1:
        raise UsageError(f"need more than lag+1={lag + 1} samples, got {x.size}")
    d = x - x.mean()
    denom = float(np.dot(d, d))
    if denom == 0.0:
        return 0.0
    return float(np.dot(d[:-lag], d[lag:]) / denom)
