"""Dataset ingestion: IDX image/label files and synthetic Gaussian blobs."""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_core import make_rng


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Samples ``x`` of shape (N, C, H, W) in [0, 1] and integer labels ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise DatasetFormatError(f"{len(self.x)} samples but {len(self.y)} labels")

    def __len__(self):
        return len(self.x)

    @property
    def classes(self) -> int:
        return int(self.y.max()) + 1 if len(self.y) else 0

    def split(self, test_fraction: float = 0.2):
        """Deterministic head/tail split (synthetic data is already shuffled)."""
        n_test = int(round(len(self) * test_fraction))
        cut = len(self) - n_test
        return Dataset(self.x[:cut], self.y[:cut]), Dataset(self.x[cut:], self.y[cut:])


_IDX_DTYPES = {
    0x08: np.dtype(">u1"), 0x09: np.dtype(">i1"), 0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.newbyteorder("="): k for k, v in _IDX_DTYPES.items()}


def _open(path):
    path = os.fspath(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (big-endian header: two zero bytes, dtype code, ndim)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DatasetFormatError(f"{path}: bad IDX magic")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise DatasetFormatError(f"{path}: unknown IDX dtype code 0x{code:02x}")
    header = 4 + 4 * ndim
    if ndim == 0 or len(raw) < header:
        raise DatasetFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header != expected:
        raise DatasetFormatError(f"{path}: payload is {len(raw) - header} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype)
    if code is None:
        raise DatasetFormatError(f"dtype {array.dtype} has no IDX code")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header + array.astype(array.dtype.newbyteorder(">")).tobytes())


def load_idx_pair(images_path, labels_path) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise DatasetFormatError("label file must be one-dimensional")
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.ndim == 3:
        images = images[:, None]
    elif images.ndim != 4:
        raise DatasetFormatError(f"image file must have 3 or 4 dimensions, got {images.ndim}")
    if np.issubdtype(images.dtype, np.integer):
        x = images.astype(np.float64) / 255.0
    else:
        x = np.clip(images.astype(np.float64), 0.0, 1.0)
    return Dataset(x, labels.astype(np.int64))


def parse_synthetic_spec(spec: str) -> dict:
    """``synthetic:classes=4,dim=16,n=10000,seed=7[,noise=0.15]`` to a dict."""
    if not spec.startswith("synthetic:"):
        raise ValueError(f"not a synthetic spec: {spec!r}")
    params = {"classes": 4, "dim": 16, "n": 10000, "seed": 7, "noise": 0.15}
    body = spec[len("synthetic:"):].strip()
    for item in filter(None, (p.strip() for p in body.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in params:
            raise ValueError(f"bad synthetic spec entry {item!r}")
        try:
            params[key] = float(value) if key == "noise" else int(value)
        except ValueError:
            raise ValueError(f"bad value for {key}: {value!r}") from None
    if params["classes"] < 2 or params["dim"] < 1 or params["n"] < 1 or params["noise"] < 0:
        raise ValueError(f"invalid synthetic parameters {params}")
    return params


def synthetic_blobs(classes: int = 4, dim: int = 16, n: int = 10000, seed: int = 7,
                    noise: float = 0.15) -> Dataset:
    """Gaussian blobs around uniform class centres, clipped to [0, 1].

    Samples are shaped ``(1, s, s)`` when ``dim == s * s`` and ``(1, 1, dim)``
    otherwise.
    """
    rng = make_rng(seed)
    centres = rng.uniform(0.0, 1.0, size=(classes, dim))
    y = rng.integers(0, classes, size=n)
    x = np.clip(centres[y] + rng.normal(0.0, noise, size=(n, dim)), 0.0, 1.0)
    side = math.isqrt(dim)
    shape = (1, side, side) if side * side == dim else (1, 1, dim)
    return Dataset(x.reshape((n,) + shape), y.astype(np.int64))


def load_dataset(source: str) -> Dataset:
    """Load ``synthetic:<params>``, ``<images>,<labels>`` IDX paths, or a
    directory holding one ``*images*`` and one ``*labels*`` IDX file."""
    if source.startswith("synthetic:"):
        return synthetic_blobs(**parse_synthetic_spec(source))
    if "," in source:
        images, labels = (s.strip() for s in source.split(",", 1))
        for p in (images, labels):
            if not Path(p).exists():
                raise FileNotFoundError(p)
        return load_idx_pair(images, labels)
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(source)
    if path.is_dir():
        images = sorted(p for p in path.iterdir() if "images" in p.name)
        labels = sorted(p for p in path.iterdir() if "labels" in p.name)
        if len(images) != 1 or len(labels) != 1:
            raise DatasetFormatError(f"{source}: expected exactly one images and one labels file")
        return load_idx_pair(images[0], labels[0])
    raise DatasetFormatError(f"{source}: give a directory, an 'images,labels' pair, or a synthetic spec")
