"""IDX (MNIST) parsing and writing, synthetic clusters and deterministic splits."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mathcore import RngStream, stream_id

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxParseError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(f"inputs {self.inputs.shape} and labels {self.labels.shape} are not aligned")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx, name: str = "") -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], name or self.name)

    @property
    def classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise IdxParseError(f"{path}: truncated header at offset 0")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxParseError(f"{path}: unexpected magic 0x{found:08x} at offset 0 (expected 0x{magic:08x})")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxParseError(f"{path}: truncated dimension header at offset 4")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise IdxParseError(f"{path}: truncated data at offset {len(raw)}, expected {header + size} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Raw ``uint8`` array of shape (n, rows, cols)."""
    return _parse_idx(_read_bytes(path), IMAGE_MAGIC, 3, path)


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(_read_bytes(path), LABEL_MAGIC, 1, path)


def load_idx(images_path, labels_path, name: str = "") -> Dataset:
    """Images flattened row-wise and divided by 255."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxParseError(f"{images.shape[0]} images but {labels.shape[0]} labels (header offset 4)")
    return Dataset(images.reshape(images.shape[0], -1) / 255.0, labels.astype(np.int64), name)


def write_idx(dataset: Dataset, images_path, labels_path, shape=(28, 28)) -> None:
    """Write pixels (rounded back to bytes) and labels as IDX, gzipped for ``.gz`` paths."""
    n = len(dataset)
    rows, cols = shape
    pixels = np.rint(dataset.inputs * 255.0)
    if pixels.min(initial=0) < 0 or pixels.max(initial=0) > 255:
        raise ValueError("pixel values must lie in [0, 1]")
    img = struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + pixels.astype(np.uint8).tobytes()
    lab = struct.pack(">II", LABEL_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    for path, raw in ((images_path, img), (labels_path, lab)):
        path = Path(path)
        if path.suffix == ".gz":
            # fixed mtime keeps the gzip bytes reproducible
            with open(path, "wb") as raw_fh, gzip.GzipFile(fileobj=raw_fh, mode="wb", mtime=0) as fh:
                fh.write(raw)
        else:
            path.write_bytes(raw)


def synth_gaussian_clusters(n: int, classes: int = 10, d: int = 20, separation: float = 10.0,
                            seed: int = 0, sd: float = 1.0) -> Dataset:
    """Isotropic Gaussian blobs around random centers.

    Centers are drawn on a sphere of radius ``separation * sd / sqrt(2)`` so
    that any two are roughly ``separation`` standard deviations apart.
    Each input column is then min-max scaled into [0, 1].
    """
    if n <= 0 or classes <= 0 or d <= 0:
        raise ValueError("n, classes and d must be positive")
    rng = RngStream(seed, stream_id("clusters", n, classes, d))
    dirs = rng.normal((classes, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = dirs * separation * sd / np.sqrt(2.0)
    labels = np.arange(n) % classes
    x = centers[labels] + sd * rng.normal((n, d))
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    x = (x - lo) / span
    return Dataset(x, labels, f"clusters-{classes}x{d}")


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle with ``seed`` and cut into train/valid/test by ``fractions``."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(dataset)
    order = RngStream(seed, stream_id("split")).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    n_valid = min(n_valid, n - n_train)
    cuts = (order[:n_train], order[n_train:n_train + n_valid], order[n_train + n_valid:])
    return tuple(dataset.subset(c, f"{dataset.name}:{tag}")
                 for c, tag in zip(cuts, ("train", "valid", "test")))


def load_mnist_dir(directory, name: str = "mnist") -> dict:
    """Standard files: 50k/10k train/valid from the training file plus the official test set."""
    directory = Path(directory)

    def find(stem):
        for cand in (directory / stem, directory / (stem + ".gz")):
            if cand.exists():
                return cand
        raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")

    full = load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"), name)
    test = load_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"), name + ":test")
    return {"train": full.subset(slice(0, 50000), name + ":train"),
            "valid": full.subset(slice(50000, None), name + ":valid"),
            "test": test}
