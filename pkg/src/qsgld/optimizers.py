"""Quantized Langevin-type optimizers and the classical baselines behind one interface.

``qsgld`` and ``qsld-adam`` move on a grid: the update ``lam*h + r`` is
quantized at the current resolution before it is added, so the state stays
grid-aligned and the rounding error plays the role of injected noise.  The
baselines (``sgd``, ``asgd``, ``adam``, ``adamw``, ``nadam``, ``radam``)
follow their usual textbook / PyTorch update rules.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, NumericalError, UsageError
from .numerics import as_vector
from .quantizer import CompensationConfig, QuantizationSchedule, compensation, quantize_vector, quantized_step

__all__ = [
    "ALGORITHMS",
    "QUANTIZED",
    "DIVERGENCE_LIMIT",
    "OptimizerConfig",
    "OptimizerState",
    "TrajectoryRecord",
    "Trajectory",
    "init_state",
    "search_direction",
    "step",
    "run",
]

QUANTIZED = ("qsgld", "qsld-adam")
ALGORITHMS = QUANTIZED + ("sgd", "asgd", "adam", "adamw", "nadam", "radam")
MOMENT = ("qsld-adam", "adam", "adamw", "nadam", "radam")
DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "qsgld"
    lam: float = 0.01
    schedule: QuantizationSchedule = field(default_factory=QuantizationSchedule)
    compensation: CompensationConfig = field(default_factory=lambda: CompensationConfig(enabled=False))
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    psi: float = 0.004

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {self.algorithm!r}")
        if not self.lam > 0:
            raise UsageError("lam must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise UsageError("beta1 and beta2 must lie in (0, 1)")
        if not self.eps > 0:
            raise UsageError("eps must be positive")
        if self.weight_decay < 0:
            raise UsageError("weight_decay must be nonnegative")

    @property
    def quantized(self):
        return self.algorithm in QUANTIZED

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class OptimizerState:
    """Mutable per-run state.

    ``x`` is where the next gradient is evaluated.  For quantized algorithms
    it is ``grid.values``.  ``params`` is the reported iterate, which differs
    from ``x`` only for ``asgd`` (running average of the inner iterates).
    """

    x: np.ndarray
    tau: int = 0
    m: np.ndarray = None
    v: np.ndarray = None
    grid: object = None
    avg: np.ndarray = None
    mu_prod: float = 1.0

    @property
    def params(self):
        return self.avg if self.avg is not None else self.x

    @property
    def dim(self):
        return self.x.shape[0]

    def copy(self):
        def c(a):
            return None if a is None else a.copy()
        return OptimizerState(self.x.copy(), self.tau, c(self.m), c(self.v), self.grid, c(self.avg), self.mu_prod)


def init_state(cfg, x0):
    x0 = as_vector(x0, "x0").copy()
    st = OptimizerState(x0)
    if cfg.algorithm in MOMENT:
        st.m = np.zeros_like(x0)
        st.v = np.zeros_like(x0)
    if cfg.quantized:
        st.grid, _ = quantize_vector(x0, cfg.schedule.qp_at(0))
        st.x = st.grid.values
    return st


def _check_grad(state, grad):
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.x.shape:
        raise DimensionError(f"gradient has shape {grad.shape}, state has {state.x.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite gradient at step {state.tau}")
    return grad


def _moments(cfg, state, grad):
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    t = state.tau + 1
    return state.m / (1.0 - cfg.beta1**t), state.v / (1.0 - cfg.beta2**t)


def search_direction(cfg, state, grad):
    """Descent direction ``h`` for the quantized algorithms; updates moments in place."""
    grad = _check_grad(state, grad)
    if cfg.algorithm == "qsld-adam":
        m_hat, v_hat = _moments(cfg, state, grad)
        return -m_hat / (np.sqrt(v_hat) + cfg.eps)
    if cfg.algorithm == "qsgld":
        return -grad
    raise UsageError(f"{cfg.algorithm} has no quantized search direction")


def _nadam_mu(cfg, t):
    return cfg.beta1 * (1.0 - 0.5 * 0.96 ** (t * cfg.psi))


def _baseline(cfg, st, g):
    lam, t = cfg.lam, st.tau + 1
    if cfg.algorithm == "sgd":
        st.x = st.x - lam * g
    elif cfg.algorithm == "asgd":
        st.x = st.x - lam * g
        st.avg = st.x.copy() if st.avg is None else st.avg + (st.x - st.avg) / t
    elif cfg.algorithm in ("adam", "adamw"):
        m_hat, v_hat = _moments(cfg, st, g)
        upd = m_hat / (np.sqrt(v_hat) + cfg.eps)
        if cfg.algorithm == "adamw":
            upd = upd + cfg.weight_decay * st.x
        st.x = st.x - lam * upd
    elif cfg.algorithm == "nadam":
        st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g
        st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * g * g
        mu, mu_next = _nadam_mu(cfg, t), _nadam_mu(cfg, t + 1)
        st.mu_prod *= mu
        denom = np.sqrt(st.v / (1.0 - cfg.beta2**t)) + cfg.eps
        m_hat = mu_next * st.m / (1.0 - st.mu_prod * mu_next) + (1.0 - mu) * g / (1.0 - st.mu_prod)
        st.x = st.x - lam * m_hat / denom
    elif cfg.algorithm == "radam":
        st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g
        st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * g * g
        m_hat = st.m / (1.0 - cfg.beta1**t)
        b2t = cfg.beta2**t
        rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0
        rho = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        if rho > 5.0:
            rect = math.sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho))
            st.x = st.x - lam * m_hat * rect * math.sqrt(1.0 - b2t) / (np.sqrt(st.v) + cfg.eps)
        else:
            st.x = st.x - lam * m_hat


def step(cfg, state, grad, error_sink=None):
    """One update; returns a new state and leaves ``state`` untouched.

    Quantization error factors of the update are appended to ``error_sink``
    (anything with an ``append`` method) for the quantized algorithms.
    """
    st = state.copy()
    grad = _check_grad(st, grad)
    if cfg.quantized:
        h = search_direction(cfg, st, grad)
        qp = cfg.schedule.qp_at(st.tau)
        grid = st.grid.regrid(qp)
        if cfg.compensation.enabled:
            r = compensation(cfg.compensation, st.tau, h)
        else:
            r = np.zeros_like(h)
        upd, errors = quantized_step(h, cfg.lam, r, qp, st.tau)
        st.grid = type(grid)(grid.numer + upd.numer, qp)
        st.x = st.grid.values
        if error_sink is not None:
            error_sink.append(errors)
    else:
        _baseline(cfg, st, grad)
    st.tau += 1
    if not np.all(np.isfinite(st.x)):
        raise NumericalError(f"iterate became non-finite at step {state.tau}")
    return st


@dataclass(frozen=True)
class TrajectoryRecord:
    """Per-epoch summary; ``epoch`` counts from 0 and ``qp`` is the epoch's resolution."""

    epoch: int
    train_loss: float
    eval_loss: float = None
    accuracy: float = None
    qp: float = None
    grad_norm: float = 0.0
    error_sum: float = None
    wall_ms: int = 0
    diverged: bool = False


class Trajectory(list):
    """List of :class:`TrajectoryRecord` with the final optimizer state attached."""

    state = None

    @property
    def diverged(self):
        return bool(self) and self[-1].diverged


class _EpochSink:
    def __init__(self, inner):
        self.inner = inner
        self.total = 0.0

    def append(self, errors):
        self.total += float(np.sum(errors.epsilon))
        if self.inner is not None:
            self.inner.append(errors)


def _bad(value):
    return not math.isfinite(value) or abs(value) > DIVERGENCE_LIMIT


def run(cfg, objective, x0, epochs, rng, error_sink=None):
    """Train for ``epochs`` epochs of ``objective.batch_count`` steps each.

    Returns a :class:`Trajectory`.  A loss above ``DIVERGENCE_LIMIT`` or a
    non-finite value ends the run early with a record flagged ``diverged``.
    """
    x0 = as_vector(x0, "x0")
    if x0.size != objective.dim:
        raise DimensionError(f"x0 has dimension {x0.size}, objective has {objective.dim}")
    if epochs < 0:
        raise UsageError("epochs must be nonnegative")
    B = objective.batch_count
    if cfg.quantized and cfg.schedule.batches_per_epoch != B:
        cfg = cfg.with_(schedule=replace(cfg.schedule, batches_per_epoch=B))
    state = init_state(cfg, x0)
    out = Trajectory()
    for epoch in range(epochs):
        t0 = time.perf_counter()
        objective.begin_epoch(rng)
        sink = _EpochSink(error_sink) if cfg.quantized else None
        qp = cfg.schedule.qp_at(epoch * B) if cfg.quantized else None
        norms = []
        diverged = False
        for b in range(B):
            loss, g = objective.loss_grad(state.x, b, rng)
            if _bad(loss) or not np.all(np.isfinite(g)):
                diverged = True
                break
            norms.append(float(np.linalg.norm(g)))
            try:
                state = step(cfg, state, g, sink)
            except NumericalError:
                diverged = True
                break
        train = objective.full_loss(state.params) if not diverged else float("nan")
        diverged = diverged or _bad(train)
        ev, acc = (None, None) if diverged else objective.evaluate(state.params)
        out.append(TrajectoryRecord(
            epoch=epoch,
            train_loss=train,
            eval_loss=ev,
            accuracy=acc,
            qp=qp,
            grad_norm=float(np.mean(norms)) if norms else float("nan"),
            error_sum=sink.total if sink is not None else None,
            wall_ms=int(round((time.perf_counter() - t0) * 1000)),
            diverged=diverged,
        ))
        if diverged:
            break
    out.state = state
    return out
