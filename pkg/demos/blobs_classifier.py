"""Train a small MLP on two Gaussian blobs with quantized and classic optimizers.

Uses the experiment harness end to end: a config dict is validated, every
(optimizer, seed) pair runs and writes a trajectory CSV, and the summary
table is printed at the end.
"""

import argparse

from qsgld.harness import compare_runs, format_summary, parse_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/blobs_demo")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()

    comp = {"kappa": 2.0, "tau0": 40, "lam": 0.01}
    cfg = parse_config({
        "epochs": args.epochs,
        "seeds": [0, 1, 2],
        "objective": {"kind": "mlp", "widths": [2, 16, 2], "dataset": "blobs", "batch_size": 64},
        "optimizer": [
            {"algorithm": "qsld-adam", "lam": 0.01, "compensation": comp},
            {"algorithm": "adam", "lam": 0.01},
            {"algorithm": "qsgld", "lam": 0.01, "compensation": comp},
            {"algorithm": "sgd", "lam": 0.01},
        ],
    })
    outs = run_experiment(cfg, threads=args.threads, output_dir=args.out)
    print(format_summary(compare_runs([o.path for o in outs])))


if __name__ == "__main__":
    main()
