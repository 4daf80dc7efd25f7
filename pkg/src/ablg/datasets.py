"""Labeled datasets and the bundled synthetic image set.

The synthetic set is 10 classes of small grayscale images: each class is a
fixed smoothed random template plus per-sample Gaussian noise. Clean labels
are easy to generalize from; corrupted labels can only be memorized through
the per-sample noise, which is what the zoo experiments need.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DomainError
from .rng import rng_for


@dataclass
class LabeledDataset:
    x: np.ndarray                 # (n, *sample_shape), float32 or uint8
    labels: np.ndarray            # effective labels (possibly corrupted), int64
    original_labels: np.ndarray   # labels before any corruption, int64
    n_classes: int
    split: str = "train"          # "train" | "test"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.original_labels = np.asarray(self.original_labels, dtype=np.int64)
        if self.split not in ("train", "test"):
            raise ConfigError(f"split must be 'train' or 'test', got {self.split!r}")
        n = self.x.shape[0]
        if self.labels.shape != (n,) or self.original_labels.shape != (n,):
            raise ConfigError("label arrays must match the sample count")
        for arr in (self.labels, self.original_labels):
            if arr.size and (arr.min() < 0 or arr.max() >= self.n_classes):
                raise ConfigError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.x.shape[1:])

    def as_float(self) -> np.ndarray:
        """Samples as float32; uint8 payloads are scaled to [0, 1]."""
        if self.x.dtype == np.uint8:
            return self.x.astype(np.float32) / 255.0
        return self.x.astype(np.float32, copy=False)

    def class_indices(self, j: int) -> np.ndarray:
        """Indices of samples whose effective label is class j."""
        if not 0 <= j < self.n_classes:
            raise DomainError(f"class {j} out of range for N={self.n_classes}")
        return np.flatnonzero(self.labels == j)

    def class_subset(self, j: int) -> np.ndarray:
        """Float samples of class j (by effective label)."""
        idx = self.class_indices(j)
        if idx.size == 0:
            raise DomainError(f"class {j} has no samples")
        return self.as_float()[idx]

    def with_labels(self, labels: np.ndarray) -> "LabeledDataset":
        return replace(self, labels=np.asarray(labels, dtype=np.int64))


def _box_blur(img: np.ndarray) -> np.ndarray:
    """3x3 box blur with edge padding, per channel."""
    pad = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            out += pad[:, di:di + img.shape[1], dj:dj + img.shape[2]]
    return out / 9.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 10
    shape: tuple = (1, 12, 12)
    train_per_class: int = 64
    test_per_class: int = 64
    noise: float = 1.0
    seed: int = 0


def class_templates(spec: SyntheticSpec) -> np.ndarray:
    """Per-class smoothed random templates, standardized to zero mean, unit std."""
    rng = rng_for(spec.seed, "templates")
    t = rng.normal(size=(spec.n_classes, *spec.shape))
    t = np.stack([_box_blur(ti) for ti in t])
    t -= t.mean(axis=(1, 2, 3), keepdims=True)
    t /= t.std(axis=(1, 2, 3), keepdims=True)
    return t.astype(np.float32)


def _sample_split(spec: SyntheticSpec, templates: np.ndarray, per_class: int,
                  split: str) -> LabeledDataset:
    rng = rng_for(spec.seed, "samples", split)
    labels = np.repeat(np.arange(spec.n_classes), per_class)
    eps = rng.normal(size=(labels.size, *spec.shape))
    x = (templates[labels] + spec.noise * eps).astype(np.float32)
    return LabeledDataset(x, labels, labels.copy(), spec.n_classes, split=split)


def make_synthetic(spec: SyntheticSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Build (train, test) splits sharing class templates but with fresh noise."""
    if spec.n_classes < 2 or spec.train_per_class < 1 or spec.test_per_class < 1:
        raise ConfigError("synthetic dataset needs >= 2 classes and >= 1 sample per class")
    if max(spec.shape[1], spec.shape[2]) > 16:
        raise ConfigError(f"synthetic images are capped at 16x16, got {spec.shape}")
    templates = class_templates(spec)
    train = _sample_split(spec, templates, spec.train_per_class, "train")
    test = _sample_split(spec, templates, spec.test_per_class, "test")
    return train, test
