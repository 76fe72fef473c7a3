"""Command-line entry point: ``qsgld {run,diagnose,weak-error,compare,list-defaults}``.

Exit codes: 0 success, 2 bad config or usage, 3 a run diverged.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, harness
from .errors import ConfigError, FormatError, QsgldError, UsageError
from .langevin import weak_error_scan
from .numerics import RngStream
from .quantizer import QuantizationErrorSample

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


def _cmd_run(args):
    cfg = harness.load_config(args.config)
    seeds = [args.seed] if args.seed is not None else None
    outs = harness.run_experiment(cfg, threads=args.threads, limit_samples=args.limit_samples,
                                  output_dir=args.out, seeds=seeds)
    for o in outs:
        flag = "  DIVERGED" if o.diverged else ""
        print(f"{o.path}{flag}")
        if o.error_path:
            print(o.error_path)
    return EXIT_DIVERGED if any(o.diverged for o in outs) else EXIT_OK


def _write_json(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _cmd_diagnose(args):
    if args.errors:
        step, qp, eps = harness.read_error_samples(args.errors)
        samples = [QuantizationErrorSample(e, q, s) for s, q, e in zip(step, qp, eps)]
        rep = diagnostics.wnh_test(samples, tau0=args.tau0)
        _write_json(rep.as_dict(), args.out)
        return EXIT_OK
    if args.trajectory:
        recs = harness.read_trajectory(args.trajectory)
        sums = [r.error_sum for r in recs if r.error_sum is not None]
        ks, ok = diagnostics.clt_test(sums, args.batches)
        _write_json({"ks_vs_normal": ks, "pass": ok, "epochs": len(sums), "b": args.batches}, args.out)
        return EXIT_OK
    rng = RngStream(args.seed if args.seed is not None else 0)
    gen = {"uncompensated": diagnostics.uncompensated_pairs,
           "dithered": diagnostics.dithered_pairs,
           "compensated": diagnostics.compensated_pairs}[args.variant]
    pairs = gen(args.n, args.qp, args.k, rng)
    rep = diagnostics.correlation_test(pairs, args.qp, args.k, args.variant != "uncompensated")
    out = rep.as_dict()
    out["variant"] = args.variant
    _write_json(out, args.out)
    return EXIT_OK


def _cmd_weak_error(args):
    rng = RngStream(args.seed if args.seed is not None else 0)
    rep = weak_error_scan("quadratic", args.g, args.lambdas, args.seeds, args.horizon, rng)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "weak_error.json").write_text(json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n")
        lines = ["lambda,qp,error,stderr,raw_error"]
        for row in zip(rep.lambda_values, rep.qp_values, rep.errors, rep.stderr, rep.raw_errors):
            lines.append(",".join(repr(float(v)) for v in row))
        (out / "weak_error.csv").write_text("\n".join(lines) + "\n")
    print(json.dumps(rep.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_compare(args):
    rows = harness.compare_runs(args.csv, threshold=args.threshold)
    if args.out:
        Path(args.out).write_text(harness.summary_csv(rows))
    print(harness.format_summary(rows))
    return EXIT_OK


def _cmd_list_defaults(args):
    print(harness.format_defaults())
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override / choose the seed")
    common.add_argument("--out", default=None, help="output directory or file")
    common.add_argument("--threads", type=int, default=1, help="worker threads for run fan-out")
    common.add_argument("--limit-samples", type=int, default=harness.DEFAULT_SAMPLE_LIMIT,
                        help="cap on error-sample rows per run (reservoir sampled)")

    p = argparse.ArgumentParser(prog="qsgld", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run an experiment config")
    r.add_argument("--config", required=True)
    r.set_defaults(func=_cmd_run)

    d = sub.add_parser("diagnose", parents=[common], help="noise-model diagnostics as JSON")
    d.add_argument("--config", default=None, help="unused; accepted for symmetry")
    src = d.add_mutually_exclusive_group()
    src.add_argument("--errors", help="error-sample CSV for the white-noise test")
    src.add_argument("--trajectory", help="trajectory CSV for the epoch-sum CLT test")
    d.add_argument("--tau0", type=int, default=0, help="drop error samples before this step")
    d.add_argument("--batches", type=int, default=256, help="error factors per epoch sum")
    d.add_argument("--variant", choices=["uncompensated", "dithered", "compensated"], default="uncompensated")
    d.add_argument("--qp", type=float, default=10.0)
    d.add_argument("--k", type=int, default=0)
    d.add_argument("--n", type=int, default=100_000)
    d.set_defaults(func=_cmd_diagnose)

    w = sub.add_parser("weak-error", parents=[common], help="weak-error scan against the OU oracle")
    w.add_argument("--config", default=None, help="unused; accepted for symmetry")
    w.add_argument("--lambdas", type=float, nargs="+", default=[1 / 8, 1 / 16, 1 / 32])
    w.add_argument("--seeds", type=int, default=10_000, help="replicas per lambda")
    w.add_argument("--horizon", type=float, default=1.0)
    w.add_argument("--g", choices=["x2", "x1", "constant"], default="x2")
    w.set_defaults(func=_cmd_weak_error)

    c = sub.add_parser("compare", parents=[common], help="summarize trajectory CSVs")
    c.add_argument("csv", nargs="*")
    c.add_argument("--threshold", type=float, default=None, help="loss level for epochs-to-threshold")
    c.set_defaults(func=_cmd_compare)

    ld = sub.add_parser("list-defaults", help="print the recommended hyperparameters")
    ld.set_defaults(func=_cmd_list_defaults)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QsgldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
