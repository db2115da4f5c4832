"""Datasets: IDX (MNIST-style) files and synthetic Gaussian blobs."""
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError, ShapeError, TruncatedFileError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Rows of ``features`` paired with ``labels``.

    ``labels`` is an int vector for classification, or an ``n x m`` float
    matrix of regression targets (``num_classes`` is then 1 so every sample
    shares one approximator embedding row).
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError("features must be a 2-D matrix")
        if self.labels.shape[0] != self.features.shape[0]:
            raise ConsistencyError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.is_classification:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ValueError("labels must lie in [0, num_classes)")

    def __len__(self):
        return self.features.shape[0]

    @property
    def is_classification(self):
        return self.labels.ndim == 1

    @property
    def loss(self):
        return "nll" if self.is_classification else "mse"

    @property
    def output_size(self):
        return self.num_classes if self.is_classification else self.labels.shape[1]

    @property
    def classes(self):
        """Class index per sample as seen by the approximator."""
        if self.is_classification:
            return self.labels
        return np.zeros(len(self), dtype=np.int64)


def _read_header(data, path, magic, n_dims):
    need = 4 * (1 + n_dims)
    if len(data) < need:
        raise TruncatedFileError(f"{path}: {len(data)} bytes, header needs {need}")
    values = struct.unpack(f">{1 + n_dims}I", data[:need])
    if values[0] != magic:
        raise FormatError(f"{path}: magic 0x{values[0]:08X}, expected 0x{magic:08X}")
    return values[1:], data[need:]


def read_idx_images(path):
    with open(path, "rb") as f:
        data = f.read()
    (count, rows, cols), body = _read_header(data, path, IDX_IMAGES_MAGIC, 3)
    need = count * rows * cols
    if len(body) < need:
        raise TruncatedFileError(f"{path}: expected {need} pixel bytes, found {len(body)}")
    return np.frombuffer(body[:need], dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path):
    with open(path, "rb") as f:
        data = f.read()
    (count,), body = _read_header(data, path, IDX_LABELS_MAGIC, 1)
    if len(body) < count:
        raise TruncatedFileError(f"{path}: expected {count} label bytes, found {len(body)}")
    return np.frombuffer(body[:count], dtype=np.uint8).copy()


def load_idx(images_path, labels_path):
    """Images scaled to [0, 1] and flattened, paired with their labels."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    num_classes = int(labels.max()) + 1 if labels.size else 0
    meta = {"source": "idx", "images": str(images_path), "labels": str(labels_path),
            "shape": images.shape[1:]}
    return Dataset(features, labels.astype(np.int64), num_classes, meta)


def write_idx(images, labels, images_path, labels_path):
    """Write ``uint8`` images (count x rows x cols) and labels in IDX layout."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def class_counts(n, proportions):
    """Largest-remainder split of ``n`` into integer counts per class."""
    p = np.asarray(proportions, dtype=np.float64)
    p = p / p.sum()
    raw = n * p
    counts = np.floor(raw).astype(np.int64)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


@dataclass
class SynthSpec:
    """Gaussian blobs with class means evenly spaced on a circle.

    ``hard_fraction`` of each class is moved to a rare sub-cluster on the
    opposite side of the circle at ``hard_distance`` times the radius.  For
    two classes that puts each rare cluster beyond the other class, so a
    linear boundary cannot fit it and uniform sampling rarely visits it.
    """

    n: int = 1024
    dims: int = 2
    classes: int = 2
    noise: float = 1.0
    radius: float = 3.0
    hard_fraction: float = 0.0
    hard_distance: float = 2.0
    proportions: tuple = None

    def validate(self):
        if self.classes < 2:
            raise ConfigError("need at least two classes", "dataset.classes")
        if self.n < self.classes:
            raise ConfigError(f"n={self.n} is smaller than the number of classes", "dataset.n")
        if self.dims < 2:
            raise ConfigError("need at least two dimensions", "dataset.dims")
        if self.noise < 0 or self.radius < 0 or self.hard_distance < 0:
            raise ConfigError("noise and radius must be non-negative", "dataset")
        if not 0.0 <= self.hard_fraction < 1.0:
            raise ConfigError("hard_fraction must lie in [0, 1)", "dataset.hard_fraction")
        if self.proportions is not None:
            if len(self.proportions) != self.classes or min(self.proportions) <= 0:
                raise ConfigError("one positive proportion per class required", "dataset.proportions")


def synth_dataset(spec, seed):
    spec.validate()
    rng = np.random.default_rng(seed)
    props = spec.proportions or (1.0,) * spec.classes
    counts = class_counts(spec.n, props)
    angles = 2.0 * np.pi * np.arange(spec.classes) / spec.classes

    def centre(angle):
        c = np.zeros(spec.dims)
        c[0] = spec.radius * np.cos(angle)
        c[1] = spec.radius * np.sin(angle)
        return c

    rows, labels, hard = [], [], []
    for cls, count in enumerate(counts):
        n_hard = int(round(spec.hard_fraction * count))
        centres = np.empty((count, spec.dims))
        centres[: count - n_hard] = centre(angles[cls])
        centres[count - n_hard:] = spec.hard_distance * centre(angles[cls] + np.pi)
        rows.append(centres + spec.noise * rng.standard_normal((count, spec.dims)))
        labels.append(np.full(count, cls))
        hard.append(np.arange(count) >= count - n_hard)
    X = np.concatenate(rows)
    y = np.concatenate(labels)
    is_hard = np.concatenate(hard)
    order = rng.permutation(spec.n)
    meta = {"source": "synthetic", "seed": seed, "hard": is_hard[order]}
    return Dataset(X[order], y[order], spec.classes, meta)
