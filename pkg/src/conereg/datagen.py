"""Synthetic datasets with a bimodal size attribute, plus CSV ingestion.

Each example carries a class label and a raw size score drawn from a
two-component Gaussian mixture.  The size mode leaves a linear footprint in
feature space (a centered offset along a direction orthogonal to the class
centers, so a bias-free readout can recover it) and shrinks the class
separation for large-mode examples, making that group harder unless the
model encodes size.  The mode choice may correlate with the class.  Size
labels come from thresholding the raw scores, by default at their empirical
mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GenSpec:
    n_samples: int = 10_000
    n_features: int = 20
    n_classes: int = 3
    size_means: tuple[float, float] = (1.0, 2.0)  # (small mode, large mode)
    size_stds: tuple[float, float] = (0.15, 0.15)
    size_weight: float = 0.3  # probability of the large mode
    class_sep: float = 2.0
    noise_rate: float = 0.0  # label flip probability
    size_class_corr: float = 0.0  # shifts the large-mode probability by class
    large_sep_scale: float = 0.6  # class-separation multiplier for the large mode
    size_offset: float = 1.0  # centered feature offset between the size modes
    feature_noise: float = 0.4
    size_threshold: float | None = None  # None: empirical mean
    seed: int = 0

    def validate(self) -> None:
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if self.n_classes < 1 or self.n_classes > self.n_samples:
            raise ValueError("n_classes must be in [1, n_samples]")
        if min(self.size_stds) <= 0:
            raise ValueError("size_stds must be positive")
        if not 0.0 < self.size_weight < 1.0:
            raise ValueError("size_weight must lie in (0, 1)")
        if not 0.0 <= self.noise_rate < 0.5:
            raise ValueError("noise_rate must lie in [0, 0.5)")
        if self.large_sep_scale <= 0:
            raise ValueError("large_sep_scale must be positive")


@dataclass(eq=False)
class LabeledDataset:
    features: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,) ints in [0, k)
    raw_size: np.ndarray  # (N,)
    size_label: np.ndarray  # (N,) values in {+1, -1}

    def __post_init__(self):
        n = self.features.shape[0]
        if not (len(self.labels) == len(self.raw_size) == len(self.size_label) == n):
            raise ValueError("all dataset columns must have the same length")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def pos_indices(self) -> np.ndarray:
        return np.flatnonzero(self.size_label > 0)

    @property
    def neg_indices(self) -> np.ndarray:
        return np.flatnonzero(self.size_label < 0)


def subset(dataset: LabeledDataset, indices) -> LabeledDataset:
    """View of the given rows; size labels are kept, not recomputed."""
    return LabeledDataset(
        features=dataset.features[indices],
        labels=dataset.labels[indices],
        raw_size=dataset.raw_size[indices],
        size_label=dataset.size_label[indices],
    )


def binarize_size(raw_size, threshold: float | None = None) -> np.ndarray:
    """+1 above the threshold, -1 at or below it (ties map to -1).

    The default threshold is the empirical mean, which makes the labels
    invariant under shifting all raw sizes by a constant.
    """
    raw = np.asarray(raw_size, dtype=float)
    if raw.size == 0:
        raise ValueError("raw_size must be nonempty")
    if threshold is None:
        threshold = raw.mean()
    return np.where(raw > threshold, 1, -1).astype(np.int64)


def generate(spec: GenSpec) -> LabeledDataset:
    """Sample a dataset from the spec; a pure function of its fields."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, d, k = spec.n_samples, spec.n_features, spec.n_classes

    # Orthonormal class directions plus one extra direction carrying the
    # size footprint; random unit vectors when they do not fit.
    raw_dirs = rng.standard_normal((d, k + 1))
    if k + 1 <= d:
        dirs, _ = np.linalg.qr(raw_dirs)
    else:
        dirs = raw_dirs / np.linalg.norm(raw_dirs, axis=0)
    centers = spec.class_sep * dirs[:, :k].T
    size_dir = dirs[:, k]

    clusters = rng.integers(0, k, size=n)
    shift = 0.5 * spec.size_class_corr * np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    p_large = np.clip(spec.size_weight + shift, 0.02, 0.98)
    large = rng.random(n) < p_large[clusters]

    means = np.where(large, spec.size_means[1], spec.size_means[0])
    stds = np.where(large, spec.size_stds[1], spec.size_stds[0])
    raw_size = rng.normal(means, stds)

    sep = np.where(large, spec.large_sep_scale, 1.0)
    offset = np.where(large, 0.5 * spec.size_offset, -0.5 * spec.size_offset)
    features = (
        sep[:, None] * centers[clusters]
        + offset[:, None] * size_dir
        + spec.feature_noise * rng.standard_normal((n, d))
    )

    labels = clusters.copy()
    flip = rng.random(n) < spec.noise_rate
    offsets = rng.integers(1, max(k, 2), size=n)
    labels[flip] = (labels[flip] + offsets[flip]) % k

    return LabeledDataset(
        features=features,
        labels=labels,
        raw_size=raw_size,
        size_label=binarize_size(raw_size, spec.size_threshold),
    )


_FLOAT_FMT = "%.17g"  # round-trips float64 exactly


def save_csv(dataset: LabeledDataset, path) -> None:
    """Write columns f0..f{d-1}, label, raw_size with one header row."""
    d = dataset.features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(d)] + ["label", "raw_size"])
        for i in range(len(dataset)):
            row = [_FLOAT_FMT % v for v in dataset.features[i]]
            row.append(str(int(dataset.labels[i])))
            row.append(_FLOAT_FMT % dataset.raw_size[i])
            writer.writerow(row)


def load_csv(path, size_threshold: float | None = None) -> LabeledDataset:
    """Read a dataset saved by :func:`save_csv`; size labels are recomputed.

    Raises a parse error naming the offending line for malformed rows or an
    inconsistent column count.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty file: missing header row") from None
        if len(header) < 3 or header[-2] != "label" or header[-1] != "raw_size":
            raise ValueError("header must end with 'label', 'raw_size' columns")
        d = len(header) - 2
        features, labels, raw_size = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"line {lineno}: expected {len(header)} columns, got {len(row)}"
                )
            try:
                features.append([float(v) for v in row[:d]])
                labels.append(int(row[d]))
                raw_size.append(float(row[d + 1]))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
    if not features:
        raise ValueError("no data rows: dataset is empty")
    raw = np.asarray(raw_size)
    return LabeledDataset(
        features=np.asarray(features),
        labels=np.asarray(labels, dtype=np.int64),
        raw_size=raw,
        size_label=binarize_size(raw, size_threshold),
    )
