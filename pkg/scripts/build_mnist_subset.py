"""Build IDX files for the 10,000-digit MNIST sample shipped in the ``mnist`` npm package.

Usage::

    npm pack mnist                      # fetches mnist-<version>.tgz
    python scripts/build_mnist_subset.py mnist-1.1.0.tgz data/mnist-subset

The package stores one JSON file per digit class with pixel intensities
already divided by 255 and rounded to three decimals; multiplying by 255 and
rounding recovers the original bytes exactly. Digits are interleaved in a
seeded order so the files carry no class ordering.
"""
import argparse
import json
import tarfile
from pathlib import Path

import numpy as np

from stochgrad.data import Dataset, write_idx
from stochgrad.mathcore import RngStream


def read_npm_tarball(path):
    xs, ys = [], []
    with tarfile.open(path) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            pixels = np.asarray(json.load(member)["data"], dtype=np.float64).reshape(-1, 784)
            xs.append(pixels)
            ys.append(np.full(len(pixels), digit))
    return np.vstack(xs), np.concatenate(ys)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("tarball")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    x, y = read_npm_tarball(args.tarball)
    order = RngStream(args.seed).permutation(len(y))
    ds = Dataset(np.rint(x[order] * 255.0) / 255.0, y[order], "mnist-subset")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(ds, out / "images-idx3-ubyte.gz", out / "labels-idx1-ubyte.gz")
    print(f"wrote {len(ds)} digits to {out}; class counts {np.bincount(ds.labels).tolist()}")


if __name__ == "__main__":
    main()
