"""Differentiable objectives: analytic test functions, a small MLP classifier, datasets.

Every objective exposes the same minimal surface used by the optimizer loop:

* ``dim`` and ``batch_count`` attributes,
* ``begin_epoch(rng)`` to draw the epoch's mini-batch schedule,
* ``loss_grad(x, b, rng)`` for mini-batch ``b`` of the current epoch,
* ``full_loss(x)`` for the whole training objective,
* ``evaluate(x)`` returning ``(eval_loss, accuracy)`` or ``(None, None)``.
"""

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DataError, FormatError, UsageError
from .numerics import as_vector

__all__ = [
    "ANALYTIC",
    "eval_analytic",
    "grad_rows",
    "Analytic",
    "Quadratic",
    "StochasticBatches",
    "Dataset",
    "MlpSpec",
    "mlp_param_count",
    "mlp_init",
    "mlp_forward",
    "mlp_loss_grad",
    "MlpObjective",
    "make_blobs",
    "load_idx",
    "make_batches",
]

RASTRIGIN_A = 10.0


def _quadratic(x):
    return 0.5 * float(x @ x), x.copy()


def _rosenbrock(x):
    if x.size < 2:
        raise UsageError("rosenbrock needs d >= 2")
    a, b = x[:-1], x[1:]
    t = b - a * a
    value = float(np.sum(100.0 * t * t + (1.0 - a) ** 2))
    g = np.zeros_like(x)
    g[:-1] = -400.0 * a * t - 2.0 * (1.0 - a)
    g[1:] += 200.0 * t
    return value, g


def _rastrigin(x):
    w = 2.0 * np.pi * x
    value = float(RASTRIGIN_A * x.size + np.sum(x * x - RASTRIGIN_A * np.cos(w)))
    return value, 2.0 * x + 2.0 * np.pi * RASTRIGIN_A * np.sin(w)


ANALYTIC = {"quadratic": _quadratic, "rosenbrock": _rosenbrock, "rastrigin": _rastrigin}


def grad_rows(name, X):
    """Gradient of a named test function for every row of ``X`` at once."""
    X = np.asarray(X, dtype=np.float64)
    if name == "quadratic":
        return X.copy()
    if name == "rastrigin":
        return 2.0 * X + 2.0 * np.pi * RASTRIGIN_A * np.sin(2.0 * np.pi * X)
    if name == "rosenbrock":
        a, b = X[..., :-1], X[..., 1:]
        t = b - a * a
        G = np.zeros_like(X)
        G[..., :-1] = -400.0 * a * t - 2.0 * (1.0 - a)
        G[..., 1:] += 200.0 * t
        return G
    raise UsageError(f"unknown analytic objective {name!r}")


def eval_analytic(name, x):
    """Value and gradient of a named test function at ``x``."""
    try:
        fn = ANALYTIC[name]
    except KeyError:
        raise UsageError(f"unknown analytic objective {name!r}") from None
    x = as_vector(x)
    if x.size == 0:
        raise UsageError("x must be nonempty")
    return fn(x)


class _Deterministic:
    """Shared plumbing for full-batch objectives."""

    batch_count = 1
    kind = "analytic"

    def begin_epoch(self, rng):
        pass

    def loss_grad(self, x, b=0, rng=None):
        return self.value_grad(x)

    def full_loss(self, x):
        return self.value_grad(x)[0]

    def evaluate(self, x):
        return None, None


class Analytic(_Deterministic):
    def __init__(self, name, dim):
        if name not in ANALYTIC:
            raise UsageError(f"unknown analytic objective {name!r}")
        if name == "rosenbrock" and dim < 2:
            raise UsageError("rosenbrock needs d >= 2")
        if dim < 1:
            raise UsageError("dim must be positive")
        self.name = name
        self.dim = int(dim)

    def value_grad(self, x):
        return eval_analytic(self.name, x)

    def grad_rows(self, X):
        return grad_rows(self.name, X)


class Quadratic(_Deterministic):
    """Diagonal quadratic ``0.5 * sum(M_i x_i**2)``; strongly convex for ``M_i > 0``."""

    name = "quadratic"

    def __init__(self, curvatures):
        self.curvatures = as_vector(curvatures, "curvatures")
        if np.any(self.curvatures <= 0):
            raise UsageError("curvatures must be positive")
        self.dim = self.curvatures.size

    def value_grad(self, x):
        g = self.curvatures * x
        return 0.5 * float(x @ g), g

    def grad_rows(self, X):
        return self.curvatures * np.asarray(X, dtype=np.float64)


class StochasticBatches:
    """Wrap a full-batch objective so each mini-batch gradient carries Gaussian noise.

    The epoch is split into ``batch_count`` steps; each step sees
    ``grad + noise_std * z`` with ``z`` standard normal from the run's stream.
    """

    kind = "analytic"

    def __init__(self, base, batch_count, noise_std):
        if batch_count < 1:
            raise UsageError("batch_count must be positive")
        if noise_std < 0:
            raise UsageError("noise_std must be nonnegative")
        self.base = base
        self.dim = base.dim
        self.batch_count = int(batch_count)
        self.noise_std = float(noise_std)
        self.name = getattr(base, "name", "analytic")

    def begin_epoch(self, rng):
        pass

    def loss_grad(self, x, b=0, rng=None):
        value, g = self.base.value_grad(x)
        if self.noise_std > 0:
            if rng is None:
                raise UsageError("stochastic batches need an rng")
            g = g + self.noise_std * rng.normal(size=g.shape)
        return value, g

    def full_loss(self, x):
        return self.base.full_loss(x)

    def evaluate(self, x):
        return None, None


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise UsageError("features must be an n x p matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise UsageError("labels must have one entry per row of features")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DataError("labels must lie in [0, classes)")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.classes)


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activation: str = "tanh"
    loss: str = "cross-entropy"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise UsageError("need at least input and output widths, all positive")
        if self.activation not in ("relu", "tanh"):
            raise UsageError(f"unknown activation {self.activation!r}")
        if self.loss != "cross-entropy":
            raise UsageError(f"unknown loss {self.loss!r}")
        object.__setattr__(self, "layer_widths", widths)


def mlp_param_count(spec):
    w = spec.layer_widths
    return sum(a * b + b for a, b in zip(w[:-1], w[1:]))


def _unpack(spec, params):
    layers, k = [], 0
    for a, b in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        W = params[k:k + a * b].reshape(a, b)
        k += a * b
        layers.append((W, params[k:k + b]))
        k += b
    return layers


def mlp_init(spec, rng):
    """Glorot-uniform weights and zero biases."""
    chunks = []
    for a, b in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        lim = math.sqrt(6.0 / (a + b))
        chunks.append(rng.uniform(-lim, lim, size=a * b))
        chunks.append(np.zeros(b))
    return np.concatenate(chunks)


def _act(spec, z):
    return np.tanh(z) if spec.activation == "tanh" else np.maximum(z, 0.0)


def _act_grad(spec, a, z):
    return 1.0 - a * a if spec.activation == "tanh" else (z > 0).astype(float)


def mlp_forward(spec, params, features):
    """Logits of the network for each row of ``features``."""
    h = features
    layers = _unpack(spec, params)
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            h = _act(spec, h)
    return h


def _check_batch(spec, params, batch):
    if params.size != mlp_param_count(spec):
        raise UsageError(f"expected {mlp_param_count(spec)} parameters, got {params.size}")
    if batch.n == 0:
        raise UsageError("batch is empty")
    if batch.p != spec.layer_widths[0] or batch.classes != spec.layer_widths[-1]:
        raise UsageError("batch shape does not match the network widths")


def mlp_loss_grad(spec, params, batch):
    """Mean cross-entropy over ``batch`` and its gradient by backpropagation."""
    params = as_vector(params, "params")
    _check_batch(spec, params, batch)
    layers = _unpack(spec, params)
    acts, pre = [batch.features], []
    for i, (W, b) in enumerate(layers):
        z = acts[-1] @ W + b
        pre.append(z)
        acts.append(_act(spec, z) if i < len(layers) - 1 else z)
    logits = acts[-1]
    logp = logits - special.logsumexp(logits, axis=1, keepdims=True)
    n = batch.n
    rows = np.arange(n)
    loss = float(-np.mean(logp[rows, batch.labels]))

    delta = np.exp(logp)
    delta[rows, batch.labels] -= 1.0
    delta /= n
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append((acts[i].T @ delta, delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ W.T) * _act_grad(spec, acts[i], pre[i - 1])
    flat = []
    for gW, gb in reversed(grads):
        flat.append(gW.ravel())
        flat.append(gb)
    return max(loss, 0.0), np.concatenate(flat)


def make_batches(n, batch_size, rng):
    """Shuffled partition of ``range(n)`` into ``ceil(n / batch_size)`` index arrays.

    The last batch keeps the remainder rather than being dropped.
    """
    if isinstance(n, Dataset):
        n = n.n
    if batch_size < 1 or batch_size > n:
        raise UsageError("batch_size must lie in [1, n]")
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


class MlpObjective:
    """Mini-batched cross-entropy of an MLP over a training set."""

    kind = "mlp-classifier"
    name = "mlp"

    def __init__(self, spec, train, batch_size, test=None):
        if train.p != spec.layer_widths[0] or train.classes != spec.layer_widths[-1]:
            raise UsageError("dataset shape does not match the network widths")
        self.spec = spec
        self.train = train
        self.test = test
        self.batch_size = int(batch_size)
        self.dim = mlp_param_count(spec)
        self.batch_count = math.ceil(train.n / self.batch_size)
        self._batches = [np.arange(train.n)[i:i + self.batch_size]
                         for i in range(0, train.n, self.batch_size)]

    def begin_epoch(self, rng):
        self._batches = make_batches(self.train.n, self.batch_size, rng)

    def loss_grad(self, x, b=0, rng=None):
        return mlp_loss_grad(self.spec, x, self.train.subset(self._batches[b]))

    def full_loss(self, x):
        return mlp_loss_grad(self.spec, x, self.train)[0]

    def accuracy(self, x, ds):
        pred = np.argmax(mlp_forward(self.spec, x, ds.features), axis=1)
        return float(np.mean(pred == ds.labels))

    def evaluate(self, x):
        if self.test is None or self.test.n == 0:
            return None, None
        loss = mlp_loss_grad(self.spec, x, self.test)[0]
        return loss, self.accuracy(x, self.test)


def make_blobs(n, rng, sigma=0.5, center=1.0):
    """Two Gaussian classes centred at ``+-[center, center]``, alternating labels."""
    labels = np.arange(n) % 2
    sign = np.where(labels == 0, -1.0, 1.0)[:, None]
    features = sign * center + sigma * rng.normal(size=(n, 2))
    return Dataset(features, labels.astype(np.int64), 2)


_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801


def _read_header(buf, magic, ndim, what):
    if len(buf) < 4 + 4 * ndim:
        raise FormatError(f"{what} file truncated in header", offset=len(buf))
    got = struct.unpack_from(">I", buf, 0)[0]
    if got != magic:
        raise FormatError(f"{what} file has magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    return struct.unpack_from(f">{ndim}I", buf, 4)


def load_idx(images_path, labels_path, limit=None):
    """Load an IDX image/label pair; pixels are scaled to ``[0, 1]``."""
    with open(images_path, "rb") as fh:
        img = fh.read()
    with open(labels_path, "rb") as fh:
        lab = fh.read()
    count, rows, cols = _read_header(img, _IMAGES_MAGIC, 3, "images")
    (lcount,) = _read_header(lab, _LABELS_MAGIC, 1, "labels")
    if lcount != count:
        raise FormatError(f"label count {lcount} differs from image count {count}", offset=4)
    if limit is not None:
        if limit < 0:
            raise UsageError("limit must be nonnegative")
        if limit == 0:
            warnings.warn("limit=0 gives an empty dataset", stacklevel=2)
        count = min(count, limit)
    p = rows * cols
    need_img = 16 + count * p
    if len(img) < need_img:
        raise FormatError("images file truncated", offset=len(img))
    if len(lab) < 8 + count:
        raise FormatError("labels file truncated", offset=len(lab))
    pixels = np.frombuffer(img, dtype=np.uint8, count=count * p, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    classes = max(10, int(labels.max()) + 1) if count else 10
    return Dataset(pixels.reshape(count, p) / 255.0, labels, classes)
