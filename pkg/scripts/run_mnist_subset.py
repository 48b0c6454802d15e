"""Train every gater kind on the bundled MNIST subset and tabulate the results.

Usage: python scripts/run_mnist_subset.py [--out runs/mnist-subset] [--units st sbn ...]

Each unit runs from configs/mnist_subset_<unit>.cfg through the regular CLI,
so every run directory holds config.json, train.csv, checkpoint.npz and
summary.json; the script then writes table.csv with one row per unit.
"""
import argparse
import csv
import json
import sys
from pathlib import Path

from stochgrad.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]
UNITS = ("st", "noisy-rect", "sts", "sbn")


def run(out: Path, units) -> list:
    rows = []
    for unit in units:
        cfg = ROOT / "configs" / f"mnist_subset_{unit}.cfg"
        target = out / unit
        code = cli(["train", "--config", str(cfg), "--out", str(target),
                    "--images", str(ROOT / "data/mnist-subset/images-idx3-ubyte.gz"),
                    "--labels", str(ROOT / "data/mnist-subset/labels-idx1-ubyte.gz")])
        if code != 0:
            sys.exit(f"{unit}: training failed with exit code {code}")
        s = json.loads((target / "summary.json").read_text())
        rows.append({"unit": unit, "valid_error": s["valid"]["error"], "valid_s_e": s["valid"]["s_e"],
                     "final_train_s_e": s["final_train_s_e"], "epochs_run": s["epochs_run"],
                     "mac_ratio": s["valid"]["mac_ratio"]})
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "mnist-subset")
    ap.add_argument("--units", nargs="+", choices=UNITS, default=list(UNITS))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rows = run(args.out, args.units)
    with open(args.out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['unit']:>10}  valid error {r['valid_error']:.4f}  train s_e {r['final_train_s_e']:.3f}  "
              f"epochs {r['epochs_run']}")


if __name__ == "__main__":
    main()
