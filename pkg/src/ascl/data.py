"""Desk-scale datasets: seeded synthetic generators, an on-disk format,
and light augmentation. Features always live in [0, 1]."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, FormatError

__all__ = [
    "Dataset",
    "Batch",
    "AugmentationSpec",
    "make_blobs",
    "make_two_moons",
    "augment",
    "save_dataset",
    "load_dataset",
    "dataset_to_csv",
    "dataset_from_csv",
    "iter_batches",
]

DATASET_MAGIC = b"ASCLDS1\x00"
_SPLITS = ("train", "test")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ContractError("features must be a nonempty (M, D) array")
        if self.labels.shape != (self.features.shape[0],):
            raise ContractError("labels must align with features")
        if np.any(self.features < 0.0) or np.any(self.features > 1.0):
            raise ContractError("features must lie in [0, 1]")
        if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
            raise ContractError("labels must lie in [0, num_classes)")
        if self.split not in _SPLITS:
            raise ContractError(f"split must be one of {_SPLITS}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class Batch:
    """Paired benign samples, labels, and adversarial counterparts."""

    x: np.ndarray
    y: np.ndarray
    x_adv: np.ndarray = None


@dataclass(frozen=True)
class AugmentationSpec:
    """Horizontal flips and integer-pixel shifts for image-shaped rows."""

    horizontal_flip: bool = False
    shift_fraction: float = 0.10
    apply_probability: float = 0.5
    image_shape: tuple = None

    def __post_init__(self):
        if not 0.0 <= self.shift_fraction < 1.0:
            raise ConfigError("shift_fraction must be in [0, 1)")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ConfigError("apply_probability must be in [0, 1]")

    @property
    def is_noop(self) -> bool:
        return not self.horizontal_flip and self.shift_fraction == 0.0


def _squash_unit(x):
    lo = x.min(axis=0, keepdims=True)
    hi = x.max(axis=0, keepdims=True)
    span = hi - lo
    flat = span < 1e-12
    span = np.where(flat, 1.0, span)
    out = (x - lo) / span
    return np.where(flat, 0.5, out)


def make_blobs(num_classes, per_class, dims, spread, seed, split="train", name="blobs") -> Dataset:
    """Gaussian clusters around mutually equidistant seeded centers,
    squashed into the unit cube. Deterministic per seed."""
    if num_classes < 1 or per_class < 1 or dims < 1 or spread < 0:
        raise ContractError("blob parameters must be positive (spread nonnegative)")
    rng = np.random.default_rng(seed)
    if num_classes <= dims:
        # random rotation of unit basis vectors: pairwise distance sqrt(2)
        q, r = np.linalg.qr(rng.standard_normal((dims, dims)))
        q *= np.sign(np.diag(r))
        centers = q[:num_classes]
    else:
        centers = rng.standard_normal((num_classes, dims))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    feats = np.concatenate([
        centers[c] + spread * rng.standard_normal((per_class, dims))
        for c in range(num_classes)
    ])
    labels = np.repeat(np.arange(num_classes), per_class)
    return Dataset(_squash_unit(feats), labels, num_classes, name=name, split=split)


def make_two_moons(size, noise, seed, split="train", name="moons") -> Dataset:
    """Two interleaved half-circles in the unit square; labels split
    ceil(size/2) / floor(size/2)."""
    if size < 2 or noise < 0:
        raise ContractError("size must be >= 2 and noise nonnegative")
    rng = np.random.default_rng(seed)
    n_out = (size + 1) // 2
    n_in = size // 2
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=1)
    inner = np.stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=1)
    feats = np.concatenate([outer, inner]) + noise * rng.standard_normal((size, 2))
    labels = np.concatenate([np.zeros(n_out, dtype=np.intp), np.ones(n_in, dtype=np.intp)])
    return Dataset(_squash_unit(feats), labels, 2, name=name, split=split)


def augment(features, spec: AugmentationSpec, rng) -> np.ndarray:
    """Apply flips/shifts to a batch of flattened images; outputs stay in
    [0, 1] and shifts zero-pad at the borders."""
    x = np.asarray(features, dtype=np.float64)
    if spec.is_noop:
        return x.copy()
    if spec.image_shape is None:
        raise ConfigError("flip/shift augmentation needs image_shape")
    h, w = spec.image_shape
    if h * w != x.shape[1]:
        raise ConfigError(f"image_shape {spec.image_shape} does not match width {x.shape[1]}")
    imgs = x.reshape(-1, h, w).copy()
    max_dy = int(spec.shift_fraction * h)
    max_dx = int(spec.shift_fraction * w)
    for i in range(imgs.shape[0]):
        if spec.horizontal_flip and rng.random() < spec.apply_probability:
            imgs[i] = imgs[i][:, ::-1]
        if max_dy or max_dx:
            dy = int(rng.integers(-max_dy, max_dy + 1)) if max_dy else 0
            dx = int(rng.integers(-max_dx, max_dx + 1)) if max_dx else 0
            shifted = np.zeros_like(imgs[i])
            src = imgs[i][max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
            shifted[max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)] = src
            imgs[i] = shifted
    return imgs.reshape(x.shape[0], -1)


def flip_horizontal(features, image_shape) -> np.ndarray:
    """Deterministic flip of every row; involution used by tests."""
    h, w = image_shape
    x = np.asarray(features, dtype=np.float64)
    return x.reshape(-1, h, w)[:, :, ::-1].reshape(x.shape[0], -1)


# -- on-disk format --------------------------------------------------------
#
# Little-endian: magic "ASCLDS1\0", u32 M, u32 D, u32 C, u8 split
# (0=train, 1=test), then M records of D f64 features plus a u32 label.


def save_dataset(ds: Dataset, path):
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        m, d = ds.features.shape
        fh.write(struct.pack("<IIIB", m, d, ds.num_classes, _SPLITS.index(ds.split)))
        for i in range(m):
            fh.write(np.ascontiguousarray(ds.features[i], dtype="<f8").tobytes())
            fh.write(struct.pack("<I", int(ds.labels[i])))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic at byte 0: {blob[:8]!r}")
    header_end = 8 + struct.calcsize("<IIIB")
    if len(blob) < header_end:
        raise FormatError(f"truncated header at byte {len(blob)}")
    m, d, c, split_code = struct.unpack_from("<IIIB", blob, 8)
    if split_code >= len(_SPLITS):
        raise FormatError(f"bad split code {split_code} at byte {8 + 12}")
    record = 8 * d + 4
    expected = header_end + m * record
    if len(blob) != expected:
        raise FormatError(
            f"payload size mismatch: have {len(blob)} bytes, header implies {expected}"
            f" (first missing byte at {min(len(blob), expected)})")
    feats = np.empty((m, d), dtype=np.float64)
    labels = np.empty(m, dtype=np.intp)
    off = header_end
    for i in range(m):
        feats[i] = np.frombuffer(blob, dtype="<f8", count=d, offset=off)
        off += 8 * d
        (labels[i],) = struct.unpack_from("<I", blob, off)
        off += 4
    name = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    try:
        return Dataset(feats, labels, c, name=name, split=_SPLITS[split_code])
    except ContractError as e:
        raise FormatError(f"invalid payload after byte {header_end}: {e}") from e


def dataset_to_csv(ds: Dataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(ds.dim)] + ["label"])
        for row, lab in zip(ds.features, ds.labels):
            writer.writerow([f"{v:.17g}" for v in row] + [int(lab)])


def dataset_from_csv(path, num_classes=None, split="train") -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise FormatError("csv must end with a 'label' column")
        rows = [r for r in reader if r]
    if not rows:
        raise FormatError("csv has no data rows")
    feats = np.array([[float(v) for v in r[:-1]] for r in rows])
    labels = np.array([int(r[-1]) for r in rows], dtype=np.intp)
    c = num_classes if num_classes is not None else int(labels.max()) + 1
    name = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return Dataset(feats, labels, c, name=name, split=split)


def iter_batches(ds: Dataset, batch_size, rng=None):
    """Yield (x, y) batches; shuffled when an rng is given."""
    order = np.arange(len(ds))
    if rng is not None:
        rng.shuffle(order)
    for lo in range(0, len(ds), batch_size):
        idx = order[lo:lo + batch_size]
        yield ds.features[idx], ds.labels[idx]
