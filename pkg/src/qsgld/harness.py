"""Experiment orchestration: TOML configs, seeded runs, CSV artifacts and summaries.

Config grammar (TOML)::

    epochs = 200
    seeds = [0, 1, 2]
    output_dir = "out"            # QSGLD_OUT overrides, --out overrides both
    collect_errors = false

    [objective]
    kind = "analytic"             # or "mlp"
    name = "rastrigin"            # quadratic | rosenbrock | rastrigin
    dim = 2
    init_range = 5.12             # x0 ~ uniform(-r, r) per seed, unless x0 = [...]
    batch_count = 1               # > 1 with noise_std > 0 gives noisy mini-batches
    noise_std = 0.0

    [[optimizer]]
    algorithm = "qsgld"
    label = "qsgld"               # file prefix, defaults to the algorithm
    lam = 0.01
    schedule = { kind = "power-of-base", eta = 724.077, base = 2 }
    compensation = { enabled = true, kappa = 2.0, tau0 = 20, lam = 0.01 }

For ``kind = "mlp"`` the objective takes ``widths``, ``activation``,
``batch_size`` and either ``dataset = "blobs"`` (with ``n_train``,
``n_test``) or ``dataset = "idx"`` (with ``train_images``, ``train_labels``
and optional ``test_images``, ``test_labels``, ``limit``).
"""

import csv
import io
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, FormatError, UsageError
from .langevin import SdeConfig
from .numerics import RngStream
from .objectives import Analytic, MlpObjective, MlpSpec, StochasticBatches, load_idx, make_blobs, mlp_init
from .optimizers import ALGORITHMS, OptimizerConfig, TrajectoryRecord, run
from .quantizer import DEFAULT_BIG_C, DEFAULT_ETA, CompensationConfig, ErrorSamples, QuantizationSchedule

__all__ = [
    "SCHEMA_LINE",
    "HEADER",
    "ERROR_HEADER",
    "ExperimentConfig",
    "TrajectoryRecord",
    "load_config",
    "parse_config",
    "build_objective",
    "initial_point",
    "run_experiment",
    "write_trajectory",
    "read_trajectory",
    "write_error_samples",
    "read_error_samples",
    "compare_runs",
    "format_summary",
    "DEFAULTS",
    "format_defaults",
]

SCHEMA_LINE = "#schema=1"
HEADER = ("epoch", "train_loss", "eval_loss", "accuracy", "qp", "grad_norm", "error_sum", "wall_ms")
ERROR_HEADER = ("step", "qp", "epsilon")
DIVERGED_LINE = "#diverged"
DEFAULT_SAMPLE_LIMIT = 10**6


@dataclass
class ExperimentConfig:
    objective: dict
    optimizers: list
    epochs: int
    seeds: list
    output_dir: str = "out"
    collect_errors: bool = False
    sde_reference: SdeConfig = None
    labels: list = field(default_factory=list)

    def __post_init__(self):
        if not self.optimizers:
            raise ConfigError("at least one [[optimizer]] is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.labels:
            self.labels = [o.algorithm for o in self.optimizers]
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("optimizer labels must be unique; set label = ... to disambiguate")


def _build(cls, table, where):
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    names = {f.name for f in fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _optimizer(table, i):
    where = f"optimizer[{i}]"
    table = dict(table)
    label = table.pop("label", None)
    if "algorithm" not in table:
        raise ConfigError(f"{where}.algorithm is required")
    if table["algorithm"] not in ALGORITHMS:
        raise ConfigError(f"{where}.algorithm: unknown {table['algorithm']!r}, expected one of {ALGORITHMS}")
    if "schedule" in table:
        table["schedule"] = _build(QuantizationSchedule, table["schedule"], f"{where}.schedule")
    if "compensation" in table:
        table["compensation"] = _build(CompensationConfig, table["compensation"], f"{where}.compensation")
    return _build(OptimizerConfig, table, where), label or table["algorithm"]


_TOP = {"epochs", "seeds", "output_dir", "collect_errors", "objective", "optimizer", "sde_reference"}


def parse_config(data):
    """Validate a decoded TOML document into an :class:`ExperimentConfig`."""
    unknown = set(data) - _TOP
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {sorted(unknown)}")
    for key in ("objective", "optimizer", "epochs", "seeds"):
        if key not in data:
            raise ConfigError(f"missing required field {key!r}")
    opts = data["optimizer"]
    if isinstance(opts, dict):
        opts = [opts]
    built = [_optimizer(t, i) for i, t in enumerate(opts)]
    seeds = data["seeds"]
    if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a list of nonnegative integers")
    obj = dict(data["objective"])
    if obj.get("kind", "analytic") not in ("analytic", "mlp"):
        raise ConfigError(f"objective.kind: unknown {obj.get('kind')!r}")
    sde = data.get("sde_reference")
    return ExperimentConfig(
        objective=obj,
        optimizers=[b[0] for b in built],
        labels=[b[1] for b in built],
        epochs=int(data["epochs"]),
        seeds=seeds,
        output_dir=os.environ.get("QSGLD_OUT", data.get("output_dir", "out")),
        collect_errors=bool(data.get("collect_errors", False)),
        sde_reference=_build(SdeConfig, sde, "sde_reference") if sde is not None else None,
    )


def load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(data)


def build_objective(spec, rng):
    """Instantiate the objective described by a config ``[objective]`` table."""
    spec = dict(spec)
    kind = spec.pop("kind", "analytic")
    try:
        if kind == "analytic":
            base = Analytic(spec.get("name", "quadratic"), int(spec.get("dim", 2)))
            B, noise = int(spec.get("batch_count", 1)), float(spec.get("noise_std", 0.0))
            return StochasticBatches(base, B, noise) if (B > 1 or noise > 0) else base
        mlp = MlpSpec(tuple(spec.get("widths", (2, 16, 2))), spec.get("activation", "tanh"))
        if spec.get("dataset", "blobs") == "blobs":
            data_rng = RngStream(int(spec.get("data_seed", 12345)))
            train = make_blobs(int(spec.get("n_train", 512)), data_rng)
            test = make_blobs(int(spec.get("n_test", 512)), data_rng)
        else:
            limit = spec.get("limit")
            train = load_idx(spec["train_images"], spec["train_labels"], limit)
            test = (load_idx(spec["test_images"], spec["test_labels"], limit)
                    if "test_images" in spec else None)
        return MlpObjective(mlp, train, int(spec.get("batch_size", 64)), test)
    except KeyError as exc:
        raise ConfigError(f"objective: missing field {exc.args[0]!r}") from None
    except UsageError as exc:
        raise ConfigError(f"objective: {exc}") from None


def initial_point(spec, objective, rng):
    if "x0" in spec:
        x0 = np.asarray(spec["x0"], dtype=np.float64)
        if x0.shape != (objective.dim,):
            raise ConfigError(f"objective.x0 must have {objective.dim} entries")
        return x0
    if isinstance(objective, MlpObjective):
        return mlp_init(objective.spec, rng)
    r = float(spec.get("init_range", 1.0))
    return rng.uniform(-r, r, size=objective.dim)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trajectory(path, records):
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in records:
        w.writerow([_fmt(getattr(r, k)) for k in HEADER])
    if records and records[-1].diverged:
        buf.write(DIVERGED_LINE + "\n")
    Path(path).write_text(buf.getvalue())


def _num(s, cast=float):
    return None if s == "" else cast(s)


def read_trajectory(path):
    """Parse a trajectory CSV back into records; raises FormatError on schema mismatch."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SCHEMA_LINE:
        raise FormatError(f"{path}: first line must be {SCHEMA_LINE!r}", offset=0)
    if len(lines) < 2 or tuple(lines[1].split(",")) != HEADER:
        raise FormatError(f"{path}: header does not match schema 1", offset=len(lines[0]) + 1)
    diverged = lines[-1] == DIVERGED_LINE
    body = lines[2:-1] if diverged else lines[2:]
    out = []
    for i, row in enumerate(csv.reader(body)):
        if len(row) != len(HEADER):
            raise FormatError(f"{path}: row {i + 3} has {len(row)} fields")
        out.append(TrajectoryRecord(
            epoch=int(row[0]), train_loss=float(row[1]), eval_loss=_num(row[2]), accuracy=_num(row[3]),
            qp=_num(row[4]), grad_norm=float(row[5]), error_sum=_num(row[6]), wall_ms=int(row[7]),
            diverged=diverged and i == len(body) - 1,
        ))
    return out


def write_error_samples(path, sink):
    step, qp, eps = sink.arrays()
    order = np.lexsort((np.arange(step.size), step))
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    buf.write(",".join(ERROR_HEADER) + "\n")
    for s, q, e in zip(step[order], qp[order], eps[order]):
        buf.write(f"{int(s)},{float(q)!r},{float(e)!r}\n")
    Path(path).write_text(buf.getvalue())


def read_error_samples(path):
    """Return ``(step, qp, epsilon)`` arrays from an error-sample CSV."""
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        header = fh.readline().rstrip("\n")
        if first != SCHEMA_LINE or tuple(header.split(",")) != ERROR_HEADER:
            raise FormatError(f"{path}: not an error-sample CSV with schema 1", offset=0)
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0), np.empty(0)
    return data[:, 0].astype(np.int64), data[:, 1], data[:, 2]


@dataclass(frozen=True)
class RunOutput:
    label: str
    seed: int
    path: Path
    error_path: Path
    diverged: bool


def _one(cfg, opt, label, seed, out_dir, limit):
    init_rng, train_rng, sample_rng = RngStream(seed).spawn(3)
    objective = build_objective(cfg.objective, init_rng)
    x0 = initial_point(cfg.objective, objective, init_rng)
    sink = ErrorSamples(limit=limit, rng=sample_rng) if cfg.collect_errors and opt.quantized else None
    traj = run(opt, objective, x0, cfg.epochs, train_rng, error_sink=sink)
    path = out_dir / f"{label}_seed{seed}.csv"
    write_trajectory(path, traj)
    err_path = None
    if sink is not None:
        err_path = out_dir / f"{label}_seed{seed}_errors.csv"
        write_error_samples(err_path, sink)
    return RunOutput(label, seed, path, err_path, traj.diverged)


def run_experiment(cfg, threads=1, limit_samples=DEFAULT_SAMPLE_LIMIT, output_dir=None, seeds=None):
    """Run every (optimizer, seed) pair; each writes its own CSV. Returns the run outputs."""
    out_dir = Path(output_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(opt, label, seed) for opt, label in zip(cfg.optimizers, cfg.labels)
            for seed in (seeds if seeds is not None else cfg.seeds)]
    if threads <= 1:
        return [_one(cfg, o, lab, s, out_dir, limit_samples) for o, lab, s in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_one, cfg, o, lab, s, out_dir, limit_samples) for o, lab, s in jobs]
        return [f.result() for f in futures]


def _label_of(path):
    stem = Path(path).stem
    return stem.rsplit("_seed", 1)[0] if "_seed" in stem else stem


def compare_runs(csv_paths, threshold=None):
    """Per-label summary across seeds.

    Columns: ``optimizer, runs, median_final_loss, best_accuracy,
    median_epochs_to_threshold`` (the last is empty without ``threshold`` or
    when no run reaches it).
    """
    if not csv_paths:
        raise UsageError("compare_runs needs at least one CSV")
    groups = {}
    for p in csv_paths:
        groups.setdefault(_label_of(p), []).append(read_trajectory(p))
    rows = []
    for label in sorted(groups):
        runs = [r for r in groups[label] if r]
        finals = [r[-1].train_loss for r in runs]
        accs = [rec.accuracy for r in runs for rec in r if rec.accuracy is not None]
        hit = []
        if threshold is not None:
            for r in runs:
                first = next((rec.epoch for rec in r if rec.train_loss <= threshold), None)
                if first is not None:
                    hit.append(first)
        rows.append({
            "optimizer": label,
            "runs": len(groups[label]),
            "median_final_loss": float(np.median(finals)) if finals else math.nan,
            "best_accuracy": max(accs) if accs else None,
            "median_epochs_to_threshold": float(np.median(hit)) if hit else None,
        })
    return rows


SUMMARY_HEADER = ("optimizer", "runs", "median_final_loss", "best_accuracy", "median_epochs_to_threshold")


def summary_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in rows:
        w.writerow([_fmt(r[k]) if not isinstance(r[k], str) else r[k] for k in SUMMARY_HEADER])
    return buf.getvalue()


def format_summary(rows):
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)
    table = [SUMMARY_HEADER] + [tuple(cell(r[k]) for k in SUMMARY_HEADER) for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(SUMMARY_HEADER))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table)


DEFAULTS = (
    ("eta^2", "2^19", DEFAULT_ETA**2),
    ("C", "1/eta^2 = 2^-19", DEFAULT_BIG_C),
    ("b", "2", 2),
    ("kappa", "2.0 or 4.0", 2.0),
    ("tau0", "5-20% of total steps", None),
    ("lambda", "0.01", 0.01),
    ("beta1", "0.9", 0.9),
    ("beta2", "0.999", 0.999),
    ("epsilon", "1e-8", 1e-8),
)


def format_defaults():
    lines = ["Recommended hyperparameters", ""]
    for name, text, _ in DEFAULTS:
        lines.append(f"  {name:<8} {text}")
    lines += ["", "Resolution schedule: Q_p = eta * b^p, p = max(0, floor(0.5 * log_b ln(t + 2)))",
              "Capped variant:      Q_p = floor(sqrt(ln(t_e + 2) / C))"]
    return "\n".join(lines)
