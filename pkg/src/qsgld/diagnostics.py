"""Statistical checks of the quantization-noise model on harvested error samples.

``wnh_test`` asks whether error factors look like i.i.d. uniform(-1/2, 1/2)
noise.  ``correlation_test`` measures ``E[input * error | output level k]``.
``clt_test`` checks that per-epoch error sums are Gaussian, and
``paralysis_probe`` counts quantized updates that vanish entirely.

Error pairs use the convention ``error = input - output`` so that plain
rounding has positive conditional correlation ``c0 / Q_p**2``.
"""

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .errors import UsageError
from .numerics import RngStream, autocorrelation, ks_statistic
from .quantizer import C0, CompensationConfig, ErrorSamples, compensation, quantize_vector, quantized_step

__all__ = [
    "WnhThresholds",
    "WnhReport",
    "wnh_test",
    "ks_threshold",
    "CorrelationReport",
    "correlation_test",
    "uncompensated_pairs",
    "dithered_pairs",
    "compensated_pairs",
    "clt_test",
    "paralysis_probe",
]

KS_FLOOR = 0.02
VAR_FLOOR = 0.02
AUTOCORR_FLOOR = 0.02
# std of the sample variance of uniform(-1/2,1/2), relative to c0, times sqrt(n)
_VAR_SPREAD = math.sqrt(1.0 / 80.0 - C0 * C0) / C0


def ks_threshold(n, level=0.999):
    """KS rejection threshold: a fixed floor or the exact ``level`` quantile, whichever is larger."""
    return max(KS_FLOOR, float(stats.kstwo.ppf(level, n)))


@dataclass(frozen=True)
class WnhThresholds:
    """``None`` means scale with the sample size (never below the fixed floors)."""

    ks: float = None
    var_tol: float = None
    autocorr: float = None
    mean_z: float = 3.0

    def resolve(self, n):
        return (
            self.ks if self.ks is not None else ks_threshold(n),
            self.var_tol if self.var_tol is not None else max(VAR_FLOOR, 5.0 * _VAR_SPREAD / math.sqrt(n)),
            self.autocorr if self.autocorr is not None else max(AUTOCORR_FLOOR, 4.0 / math.sqrt(n)),
            self.mean_z,
        )


@dataclass(frozen=True)
class WnhReport:
    n: int
    uniform_ks: float
    mean_z: float
    var_ratio: float
    lag1_autocorr: float
    passed: bool
    ks_threshold: float
    var_tolerance: float
    autocorr_threshold: float

    def as_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _factors(samples, tau0, realized):
    if isinstance(samples, ErrorSamples):
        step, qp, eps = samples.arrays()
    elif isinstance(samples, np.ndarray) or (samples and not hasattr(samples[0], "epsilon_factor")):
        arr = np.asarray(samples, dtype=np.float64)
        if realized:
            raise UsageError("realized errors need their qp; pass QuantizationErrorSample objects")
        return arr.ravel()
    else:
        step = np.array([s.step_index for s in samples], dtype=np.int64)
        qp = np.array([s.qp for s in samples])
        eps = np.array([s.epsilon_factor for s in samples])
    keep = step >= tau0
    eps, qp = eps[keep], qp[keep]
    if realized:
        if qp.size and np.any(qp != qp[0]):
            raise UsageError("realized errors with mixed qp cannot be pooled; use error factors")
        eps = eps * (qp[0] if qp.size else 1.0)
    return eps


def wnh_test(samples, thresholds=None, tau0=0, realized=False):
    """White-noise check of quantization error factors.

    ``samples`` is an :class:`ErrorSamples` sink, a sequence of
    :class:`QuantizationErrorSample`, or a plain array of error factors.
    Samples with ``step_index < tau0`` are dropped.  With ``realized=True``
    the values are taken to be ``eps/qp`` and are rescaled by their common qp.
    """
    eps = _factors(samples, tau0, realized)
    n = eps.size
    if n < 1000:
        raise UsageError(f"wnh_test needs at least 1000 samples, got {n}")
    ks_thr, var_tol, ac_thr, z_thr = (thresholds or WnhThresholds()).resolve(n)
    ks = ks_statistic(np.sort(eps), "uniform(-0.5,0.5)")
    mean_z = float(np.mean(eps) / math.sqrt(C0 / n))
    var_ratio = float(np.var(eps, ddof=1) / C0)
    ac = autocorrelation(eps, 1)
    ok = ks < ks_thr and abs(mean_z) < z_thr and abs(var_ratio - 1.0) < var_tol and abs(ac) < ac_thr
    return WnhReport(n, ks, mean_z, var_ratio, ac, bool(ok), ks_thr, var_tol, ac_thr)


@dataclass(frozen=True)
class CorrelationReport:
    conditioned_level: int
    correlation_estimate: float
    predicted: float
    compensated: bool
    stderr: float
    n: int
    passed: bool

    def as_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def correlation_test(pairs, qp, k, compensated, min_n=10_000):
    """Estimate ``E[input * error | output = k/qp]`` and compare with theory.

    ``pairs`` is an ``(n, 2)`` array of ``(input, error)`` with
    ``error = input - output``.  The prediction is ``c0/qp**2`` for plain
    rounding and 0 for the compensated or dithered constructions; the check
    passes when the estimate is within 3 standard errors.
    """
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise UsageError("pairs must be an (n, 2) array")
    n = pairs.shape[0]
    if n < min_n:
        raise UsageError(f"correlation_test needs at least {min_n} pairs, got {n}")
    prod = pairs[:, 0] * pairs[:, 1]
    est = float(np.mean(prod))
    se = float(np.std(prod, ddof=1) / math.sqrt(n))
    pred = 0.0 if compensated else C0 / qp**2
    return CorrelationReport(int(k), est, pred, bool(compensated), se, n, bool(abs(est - pred) < 3.0 * se))


def _cell(n, qp, k, rng):
    return (k + rng.uniform(-0.5, 0.5, size=n)) / qp


def uncompensated_pairs(n, qp, k, rng):
    """Inputs uniform over the level-``k`` cell, paired with their rounding error."""
    x = _cell(n, qp, k, rng)
    q, _ = quantize_vector(x, qp)
    return np.column_stack([x, x - q.values])


def dithered_pairs(n, qp, k, rng):
    """Inputs in the level-``k`` cell quantized after adding a one-cell uniform dither.

    The error is ``x - Q(x + z)`` and the conditioning is on the level of
    the undithered input.
    """
    x = _cell(n, qp, k, rng)
    z = rng.uniform(-0.5, 0.5, size=n) / qp
    q, _ = quantize_vector(x + z, qp)
    return np.column_stack([x, x - q.values])


def compensated_pairs(n, qp, k, rng, d=2, lam=None, tau=0, tau0=1000, kappa=2.0, spread=6.0):
    """Pairs from the real compensated update ``Q(lam*h + r(tau, h))``.

    Search directions ``h`` are drawn uniformly from a box whose scaled
    size ``lam*|h_i|`` spans ``spread`` grid cells.  Coordinates whose
    quantized update lands on level ``k`` contribute the pair
    ``(lam*h_i, x_i - Q(x_i))`` where ``x = lam*h + r`` is the quantizer input.
    Draws continue until ``n`` pairs are collected.
    """
    lam = 1.0 / qp if lam is None else lam
    cfg = CompensationConfig(kappa=kappa, tau0=tau0, lam=lam)
    half = spread / (qp * lam)
    out, got = [], 0
    while got < n:
        H = rng.uniform(-half, half, size=(max(1024, n // d), d))
        norms = np.linalg.norm(H, axis=1, keepdims=True)
        R = np.where(norms > 0, lam * cfg.factor(tau) * H / np.where(norms > 0, norms, 1.0), 0.0)
        X = lam * H + R
        q, _ = quantize_vector(X.ravel(), qp)
        sel = q.numer == k
        u = (lam * H).ravel()[sel]
        e = (X.ravel() - q.values)[sel]
        out.append(np.column_stack([u, e]))
        got += u.size
    return np.concatenate(out)[:n]


def clt_test(epoch_sums, b, c0=C0, threshold=0.02):
    """KS distance of standardized epoch error sums ``S / sqrt(b*c0)`` from N(0, 1).

    ``b`` is the number of error factors in each sum (batches per epoch
    times the dimension for vector runs).
    """
    s = np.asarray(epoch_sums, dtype=np.float64)
    if s.size < 1000:
        raise UsageError(f"clt_test needs at least 1000 epoch sums, got {s.size}")
    if b < 1:
        raise UsageError("b must be positive")
    if b < 32:
        warnings.warn(f"b={b} < 32: the central-limit regime is not reached", stacklevel=2)
    z = np.sort(s / math.sqrt(b * c0))
    ks = ks_statistic(z, "standard-normal")
    return ks, bool(ks < threshold)


def paralysis_probe(qp, lam, grad_scale, compensated, n=10_000, d=2, rng=None, tau=0, tau0=10**6,
                    kappa=2.0, h=None):
    """Fraction of small-gradient updates that quantize to exactly zero.

    Directions ``h`` have coordinates uniform in ``[-grad_scale, grad_scale]``
    unless given explicitly as an ``(n, d)`` array.  With compensation the
    boost has size ``lam`` (sigmoid factor near 1 for ``tau << tau0``); it
    guarantees a nonzero step when ``lam >= 1/qp`` and ``d <= 3`` because the
    largest coordinate of ``h/|h|`` is at least ``1/sqrt(d)``.
    """
    if h is None:
        if not grad_scale * lam < 0.5 / qp:
            raise UsageError("grad_scale * lam must be below half a grid cell")
        rng = rng if rng is not None else RngStream(0)
        h = rng.uniform(-grad_scale, grad_scale, size=(n, d))
    h = np.asarray(h, dtype=np.float64)
    cfg = CompensationConfig(kappa=kappa, tau0=tau0, lam=lam, enabled=bool(compensated))
    zero = 0
    for row in h:
        r = compensation(cfg, tau, row)
        upd, _ = quantized_step(row, lam, r, qp, tau)
        zero += not np.any(upd.numer)
    return zero / h.shape[0]
