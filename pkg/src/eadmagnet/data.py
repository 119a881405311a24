"""Dataset ingestion: MNIST IDX, CIFAR-10 binary batches, and generators.

All loaders return flat [0,1]^p float64 examples (raw byte / 255) with
integer labels in [0, K). Splitting is deterministic: the validation split
is the last 10% of the train file, never shuffled (shuffling happens seeded
at training time).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 channel-planar pixels


class DataFormatError(ValueError):
    """A dataset container violated its declared format."""


@dataclass
class Dataset:
    images: np.ndarray            # (n, p) float64 in [0,1]
    labels: np.ndarray            # (n,) int
    image_shape: tuple            # (h, w, c)
    k: int
    name: str = "dataset"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataFormatError("image/label count mismatch")

    def __len__(self):
        return len(self.images)

    def split_validation(self, fraction: float = 0.1) -> tuple["Dataset", "Dataset"]:
        """Deterministic tail split: last `fraction` becomes validation."""
        n_val = int(len(self) * fraction)
        n_train = len(self) - n_val
        head = Dataset(self.images[:n_train], self.labels[:n_train],
                       self.image_shape, self.k, self.name)
        tail = Dataset(self.images[n_train:], self.labels[n_train:],
                       self.image_shape, self.k, self.name + "-val")
        return head, tail

    def take(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.image_shape,
                       self.k, self.name)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataFormatError(f"truncated file while reading {what}")
    return buf


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Parse the big-endian IDX pair (magic 2051 images / 2049 labels)."""
    with open(images_path, "rb") as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"bad magic {magic} in {images_path} (expected {IDX_IMAGES_MAGIC})")
        raw = _read_exact(fh, n * rows * cols, "image pixels")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)
    with open(labels_path, "rb") as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"bad magic {magic} in {labels_path} (expected {IDX_LABELS_MAGIC})")
        labels = np.frombuffer(_read_exact(fh, n_labels, "labels"), dtype=np.uint8)
    if n != n_labels:
        raise DataFormatError(f"count mismatch: {n} images vs {n_labels} labels")
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64),
                   (rows, cols, 1), k=int(labels.max()) + 1 if n else 10, name="mnist")


def save_mnist_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray,
                   image_shape=(28, 28)) -> None:
    """Write an IDX pair (pixels quantized back to bytes)."""
    n = len(images)
    rows, cols = image_shape
    pixels = np.clip(np.round(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_cifar10_bin(path) -> Dataset:
    """Parse one CIFAR-10 binary batch (3073-byte records, channel-planar)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise DataFormatError(
            f"file length {len(raw)} is not a multiple of {CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= 10:
        raise DataFormatError(f"label {labels.max()} out of range for CIFAR-10")
    # channel-planar R,G,B -> interleaved (h, w, c), flattened row-major
    planes = records[:, 1:].reshape(-1, 3, 32, 32)
    images = planes.transpose(0, 2, 3, 1).reshape(-1, 32 * 32 * 3)
    return Dataset(images.astype(np.float64) / 255.0, labels, (32, 32, 3),
                   k=10, name="cifar10")


# ---------------------------------------------------------------------------
# generated datasets


@dataclass
class SyntheticSpec:
    """Gaussian blobs: one cluster centre per class inside [0,1]^dim."""

    classes: int = 3
    dim: int = 16
    noise_sigma: float = 0.08
    count: int = 600
    seed: int = 0
    centers: np.ndarray | None = None

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.classes < 2:
            raise ValueError("need at least 2 classes")


def synthetic_blobs(spec: SyntheticSpec) -> Dataset:
    """Seed-deterministic clustered data, clipped to the unit box."""
    rng = np.random.default_rng(spec.seed)
    centers = spec.centers
    if centers is None:
        centers = rng.uniform(0.15, 0.85, size=(spec.classes, spec.dim))
    centers = np.asarray(centers, dtype=np.float64)
    if len(np.unique(centers, axis=0)) != len(centers):
        raise ValueError("cluster centers must be distinct")
    labels = rng.integers(0, spec.classes, size=spec.count)
    images = centers[labels] + rng.normal(scale=spec.noise_sigma,
                                          size=(spec.count, spec.dim))
    side = int(np.sqrt(spec.dim))
    shape = (side, side, 1) if side * side == spec.dim else (spec.dim,)
    return Dataset(np.clip(images, 0.0, 1.0), labels.astype(np.int64),
                   shape, k=spec.classes, name="synthetic")


def synthetic_digits(n_train: int = 10000, n_test: int = 2000, seed: int = 0
                     ) -> tuple[Dataset, Dataset]:
    """Deterministic 28x28 handwritten-digit corpus for offline runs.

    Upscales scikit-learn's bundled 8x8 digits to 28x28 and applies seeded
    random shifts/rotations/scalings, so arbitrarily many distinct variants
    exist. Train and test variants come from disjoint base images, keeping
    held-out accuracy honest. Stands in for MNIST wherever real IDX files
    are unavailable.
    """
    from scipy import ndimage
    from sklearn.datasets import load_digits

    base = load_digits()
    images8 = base.images / 16.0
    labels = base.target
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(images8))
    test_base, train_base = order[:300], order[300:]

    def render(pool, count, rng):
        idx = pool[rng.integers(0, len(pool), size=count)]
        out = np.empty((count, 28 * 28))
        for row, i in enumerate(idx):
            glyph = ndimage.zoom(images8[i], 2.5, order=3)  # 20x20 glyph
            img = np.zeros((28, 28))
            img[4:24, 4:24] = glyph
            angle = rng.uniform(-12.0, 12.0)
            img = ndimage.rotate(img, angle, reshape=False, order=1, mode="constant")
            shift = rng.uniform(-2.0, 2.0, size=2)
            img = ndimage.shift(img, shift, order=1, mode="constant")
            img += rng.normal(scale=0.02, size=img.shape)
            # contrast remap: true-black background and saturated strokes,
            # matching handwritten-digit statistics (a smooth corpus would
            # let narrow autoencoders identity-map arbitrary images)
            img = np.clip((img - 0.3) / 0.35, 0.0, 1.0)
            out[row] = img.reshape(-1)
        return out, labels[idx].astype(np.int64)

    train_x, train_y = render(train_base, n_train, np.random.default_rng(seed + 1))
    test_x, test_y = render(test_base, n_test, np.random.default_rng(seed + 2))
    train = Dataset(train_x, train_y, (28, 28, 1), k=10, name="digits")
    test = Dataset(test_x, test_y, (28, 28, 1), k=10, name="digits-test")
    return train, test
