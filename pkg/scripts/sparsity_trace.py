"""Per-epoch sparsity and lambda trace for each gater kind on synthetic clusters.

Usage: python scripts/sparsity_trace.py [--epochs 50] [--out runs/sparsity-trace]

Shows how the penalty weight and the measured fraction of open gates evolve
for KL-controlled sigmoid gates and L1-controlled rectifier gates.
"""
import argparse
import csv
from pathlib import Path

from stochgrad.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]

RUNS = {
    "st-kl-adaptive": ["--unit", "st", "--penalty", "kl", "--adapt-lambda", "on"],
    "st-kl-fixed": ["--unit", "st", "--penalty", "kl", "--adapt-lambda", "off"],
    "sbn-kl-fixed": ["--unit", "sbn", "--lr-gater", "0.1", "--adapt-lambda", "off"],
    "noisy-rect-l1-adaptive": ["--unit", "noisy-rect"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "sparsity-trace")
    args = ap.parse_args()
    base = ["train", "--config", str(ROOT / "configs" / "clusters_sparsity.cfg"),
            "--epochs", str(args.epochs), "--seed", str(args.seed)]
    for name, flags in RUNS.items():
        target = args.out / name
        # the shared config selects kl; the rectifier run needs its own penalty
        extra = ["--penalty", "auto", "--adapt-lambda", "auto"] if "noisy-rect" in name else []
        cli(base + flags + extra + ["--out", str(target)])
        with open(target / "train.csv") as fh:
            rows = list(csv.DictReader(fh))
        last = rows[-1]
        print(f"{name:>24}: final s_e {float(last['s_e']):.4f}  lambda {float(last['lambda']):.3g}  "
              f"valid error {last['valid_error']}")


if __name__ == "__main__":
    main()
