"""Synthetic two-modality datasets, CSV ingestion and minibatch iteration."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from .numkit import ContractError


@dataclass(frozen=True)
class MultimodalBatch:
    x_a: np.ndarray
    x_v: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not (self.x_a.shape[0] == self.x_v.shape[0] == self.labels.shape[0]):
            raise ContractError("modalities and labels must have the same number of rows")
        if self.x_a.ndim != 2 or self.x_v.ndim != 2 or self.labels.ndim != 1:
            raise ContractError("features must be 2-D and labels 1-D")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def take(self, idx) -> "MultimodalBatch":
        return MultimodalBatch(self.x_a[idx], self.x_v[idx], self.labels[idx])

    @property
    def d_a(self) -> int:
        return self.x_a.shape[1]

    @property
    def d_v(self) -> int:
        return self.x_v.shape[1]


@dataclass(frozen=True)
class Splits:
    train: MultimodalBatch
    val: MultimodalBatch
    test: MultimodalBatch
    n_classes: int


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 6
    d_a: int = 24
    d_v: int = 24
    separation_a: float = 2.0
    separation_v: float = 0.8
    noise_std: float = 1.0
    label_noise: float = 0.0
    n_train: int = 1800
    n_val: int = 200
    n_test: int = 2000
    seed: int = 0

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ContractError("need at least 2 classes")
        if min(self.n_train, self.n_val, self.n_test) <= 0:
            raise ContractError("split sizes must be positive")
        if self.d_a < self.n_classes or self.d_v < self.n_classes:
            raise ContractError("feature dims must be at least the number of classes")
        if self.separation_a < 0 or self.separation_v < 0 or self.noise_std <= 0:
            raise ContractError("separations must be >= 0 and noise_std > 0")
        if not 0.0 <= self.label_noise < 1.0:
            raise ContractError("label_noise must lie in [0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


def class_means(n_classes: int, dim: int, separation: float) -> np.ndarray:
    """Scaled one-hot corners: class c sits at ``separation * e_c``."""
    means = np.zeros((n_classes, dim))
    means[np.arange(n_classes), np.arange(n_classes)] = separation
    return means


def standardize(splits: Splits) -> Splits:
    """Zero-mean, unit-variance features using train statistics only."""
    def fit(x):
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        return mu, sd

    mu_a, sd_a = fit(splits.train.x_a)
    mu_v, sd_v = fit(splits.train.x_v)

    def apply(b: MultimodalBatch) -> MultimodalBatch:
        return MultimodalBatch((b.x_a - mu_a) / sd_a, (b.x_v - mu_v) / sd_v, b.labels)

    return Splits(apply(splits.train), apply(splits.val), apply(splits.test), splits.n_classes)


def generate_synthetic(spec: SyntheticSpec) -> Splits:
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    n = spec.n_train + spec.n_val + spec.n_test
    m = spec.n_classes
    y = rng.integers(0, m, size=n)
    x_a = class_means(m, spec.d_a, spec.separation_a)[y] + spec.noise_std * rng.standard_normal((n, spec.d_a))
    x_v = class_means(m, spec.d_v, spec.separation_v)[y] + spec.noise_std * rng.standard_normal((n, spec.d_v))
    flip = rng.random(n) < spec.label_noise
    labels = np.where(flip, rng.integers(0, m, size=n), y)

    full = MultimodalBatch(x_a, x_v, labels.astype(np.int64))
    cut1, cut2 = spec.n_train, spec.n_train + spec.n_val
    raw = Splits(full.take(slice(0, cut1)), full.take(slice(cut1, cut2)), full.take(slice(cut2, n)), m)
    return standardize(raw)


def csv_header(d_a: int, d_v: int) -> list[str]:
    return ["label"] + [f"a_{i}" for i in range(d_a)] + [f"v_{i}" for i in range(d_v)]


def write_csv(path: Union[str, Path], batch: MultimodalBatch) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(batch.d_a, batch.d_v))
        for i in range(len(batch)):
            w.writerow([int(batch.labels[i])] + [repr(float(v)) for v in batch.x_a[i]]
                       + [repr(float(v)) for v in batch.x_v[i]])


def _parse_header(header: list[str]) -> tuple[int, int]:
    if not header or header[0] != "label":
        raise ContractError("line 1: header must start with 'label'")
    cols = header[1:]
    d_a = 0
    while d_a < len(cols) and cols[d_a] == f"a_{d_a}":
        d_a += 1
    rest = cols[d_a:]
    for j, name in enumerate(rest):
        if name != f"v_{j}":
            raise ContractError(f"line 1: unexpected column {name!r}")
    if d_a == 0 or not rest:
        raise ContractError("line 1: header needs at least one a_ and one v_ column")
    return d_a, len(rest)


def load_csv(path: Union[str, Path], n_classes: int | None = None) -> MultimodalBatch:
    """Read a ``label,a_0..,v_0..`` file. Errors name the offending line."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError("no data rows")
    d_a, d_v = _parse_header(rows[0])
    width = 1 + d_a + d_v
    labels, xs = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise ContractError(f"line {lineno}: expected {width} fields, got {len(row)}")
        try:
            label = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ContractError(f"line {lineno}: {exc}") from None
        if label < 0 or (n_classes is not None and label >= n_classes):
            raise ContractError(f"line {lineno}: label {label} out of range")
        if not np.all(np.isfinite(vals)):
            raise ContractError(f"line {lineno}: non-finite value")
        labels.append(label)
        xs.append(vals)
    if not labels:
        raise ContractError("no data rows")
    x = np.asarray(xs, dtype=np.float64)
    return MultimodalBatch(x[:, :d_a], x[:, d_a:], np.asarray(labels, dtype=np.int64))


def split_loaded(batch: MultimodalBatch, n_classes: int, val_fraction: float, test_fraction: float,
                 seed: int = 0) -> Splits:
    """Shuffle a loaded dataset into disjoint train/val/test splits and standardize."""
    n = len(batch)
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    n_val = int(round((n - n_test) * val_fraction))
    test, val, train = perm[:n_test], perm[n_test:n_test + n_val], perm[n_test + n_val:]
    if min(len(train), len(val), len(test)) == 0:
        raise ContractError("dataset too small for the requested split fractions")
    return standardize(Splits(batch.take(train), batch.take(val), batch.take(test), n_classes))


def minibatches(n: int, m: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Index arrays for one epoch: a fresh permutation cut into size-``m`` chunks.

    A trailing chunk smaller than 2 is dropped.
    """
    if m < 2:
        raise ContractError("batch size must be at least 2")
    if n < 2:
        raise ContractError("split has fewer than 2 samples")
    perm = rng.permutation(n)
    for start in range(0, n, m):
        idx = perm[start:start + m]
        if len(idx) < 2:
            break
        yield idx
