"""Dataset generators, CSV loading and retain/forget/test partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAX_LABEL = 1000


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        x, y = self.features, self.labels
        if x.ndim != 2 or x.shape[0] < 1:
            raise ConfigError("features must be a non-empty 2-D array")
        if y.shape != (x.shape[0],):
            raise ConfigError("one label per row required")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if np.any(x < 0) or np.any(x > 1):
            raise ConfigError("features must lie in [0, 1]")
        if np.any(y < 0) or np.any(y >= self.num_classes):
            raise ConfigError("labels out of range")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class UnlearnTask:
    """Index partition of a dataset into retain, forget and test sets."""

    dataset: Dataset
    retain_idx: np.ndarray
    forget_idx: np.ndarray
    test_idx: np.ndarray
    mode: str = "sample"
    forget_class: int | None = None
    forget_fraction: float = 1.0

    @property
    def train_idx(self) -> np.ndarray:
        return np.sort(np.concatenate([self.retain_idx, self.forget_idx]))

    def xy(self, which: str):
        idx = getattr(self, f"{which}_idx") if which != "train" else self.train_idx
        return self.dataset.features[idx], self.dataset.labels[idx]


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    """Per-column min-max scaling; constant columns map to 0."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def gen_blobs(num_classes: int, per_class: int, dim: int, spread: float, seed: int = 0) -> Dataset:
    """Isotropic Gaussian clusters around uniformly drawn centers."""
    if num_classes < 2 or per_class < 2 or dim < 1 or not spread > 0:
        raise ConfigError(f"invalid blob configuration ({num_classes}, {per_class}, {dim}, {spread})")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(num_classes, dim))
    x = np.concatenate([c + spread * rng.standard_normal((per_class, dim)) for c in centers])
    y = np.repeat(np.arange(num_classes), per_class)
    return Dataset(minmax_normalize(x), y, num_classes, f"blobs{num_classes}x{per_class}")


def gen_moons(per_class: int, noise: float, seed: int = 0) -> Dataset:
    """Two interleaved half circles in 2-D with Gaussian jitter."""
    if per_class < 2 or noise < 0:
        raise ConfigError(f"invalid moons configuration ({per_class}, {noise})")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, np.pi, per_class)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    x = np.concatenate([upper, lower]) + noise * rng.standard_normal((2 * per_class, 2))
    y = np.repeat([0, 1], per_class)
    return Dataset(minmax_normalize(x), y, 2, f"moons{per_class}")


def load_csv(path) -> Dataset:
    """Read ``f1,...,fd,label`` rows after a single header line."""
    path = Path(path)
    rows, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty file")
        width = len(header)
        if width < 2:
            raise ConfigError(f"{path}: header needs at least one feature and a label column")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ConfigError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
            try:
                feats = [float(c) for c in row[:-1]]
                label = float(row[-1])
            except ValueError as exc:
                raise ConfigError(f"{path}: row {lineno} has a non-numeric cell ({exc})") from exc
            if label != int(label) or label < 0 or label >= MAX_LABEL:
                raise ConfigError(f"{path}: row {lineno} label {row[-1]!r} must be an integer in [0, {MAX_LABEL})")
            if not all(np.isfinite(feats)):
                raise ConfigError(f"{path}: row {lineno} has a non-finite feature")
            rows.append(feats)
            labels.append(int(label))
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    return Dataset(minmax_normalize(np.array(rows)), y, int(y.max()) + 1, path.stem)


def iris_path() -> Path:
    return Path(str(resources.files("unlearnlab") / "data" / "iris.csv"))


def load_iris() -> Dataset:
    return load_csv(iris_path())


def split_unlearn(
    dataset: Dataset,
    mode: str = "sample",
    forget_class: int = 0,
    forget_fraction: float = 0.5,
    test_fraction: float = 0.2,
    seed: int = 0,
) -> UnlearnTask:
    """Class-stratified test split, then a forget set drawn from one class.

    In ``class`` mode the whole training portion of ``forget_class`` is
    forgotten and ``forget_fraction`` is ignored.
    """
    if mode not in ("sample", "class"):
        raise ConfigError(f"unknown unlearning mode {mode!r}")
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must lie in (0, 1)")
    if not 0 < forget_fraction <= 1:
        raise ConfigError("forget_fraction must lie in (0, 1]")
    if not 0 <= forget_class < dataset.num_classes:
        raise ConfigError(f"forget_class {forget_class} outside [0, {dataset.num_classes})")
    if not np.any(dataset.labels == forget_class):
        raise ConfigError(f"forget_class {forget_class} absent from {dataset.name}")
    rng = np.random.default_rng(seed)
    test, train_by_class = [], {}
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size == 0:
            continue
        n_test = int(round(test_fraction * members.size))
        perm = rng.permutation(members)
        test.append(perm[:n_test])
        train_by_class[c] = perm[n_test:]
    pool = train_by_class[forget_class]
    if pool.size == 0:
        raise ConfigError(f"no training samples left for class {forget_class}")
    if mode == "class":
        forget_fraction = 1.0
        forget = pool
    else:
        n_forget = max(1, int(round(forget_fraction * pool.size)))
        forget = rng.choice(pool, size=n_forget, replace=False)
    train = np.concatenate(list(train_by_class.values()))
    retain = np.setdiff1d(train, forget)
    return UnlearnTask(
        dataset,
        np.sort(retain),
        np.sort(forget),
        np.sort(np.concatenate(test)),
        mode,
        forget_class,
        float(forget_fraction),
    )


def without_forget(task: UnlearnTask) -> UnlearnTask:
    """Same task with an empty forget set (everything retained)."""
    return UnlearnTask(task.dataset, task.train_idx, np.array([], dtype=np.int64), task.test_idx, task.mode, task.forget_class, task.forget_fraction)
