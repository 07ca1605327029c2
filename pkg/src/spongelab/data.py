"""Dataset ingestion (feature CSVs, windowed sensor series), synthetic blobs, splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ValidationError
from .model import Standardizer


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"
    scaler: Standardizer | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValidationError(f"{self.name}: features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ValidationError(f"{self.name}: {self.labels.shape[0]} labels for {n} rows")
        if n == 0:
            raise ValidationError(f"{self.name}: dataset is empty")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError(f"{self.name}: non-finite feature values")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValidationError(f"{self.name}: labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, name or self.name, self.scaler)


@dataclass(frozen=True)
class WindowSpec:
    window_len: int
    stride: int
    flatten: bool = True

    def __post_init__(self):
        if self.window_len < 1 or self.stride < 1:
            raise ValidationError(f"window_len and stride must be positive, got {self.window_len}, {self.stride}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# -- CSV ingestion -------------------------------------------------------------


def _read_csv(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [(reader.line_num, row) for row in reader if row]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0][1]]
    body = rows[1:]
    if not body:
        raise ValidationError(f"{path}: header but no data rows")
    for line, row in body:
        if len(row) != len(header):
            raise ValidationError(f"{path}: line {line} has {len(row)} fields, header has {len(header)}")
    return header, body


def _column_index(header: list[str], column, path) -> int:
    if isinstance(column, int):
        if not 0 <= column < len(header):
            raise ValidationError(f"{path}: column index {column} out of range")
        return column
    if column not in header:
        raise ValidationError(f"{path}: no column named {column!r}; have {header}")
    return header.index(column)


def _parse_float(cell: str, line: int, path) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ValidationError(f"{path}: line {line}: non-numeric value {cell!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"{path}: line {line}: non-finite value {cell!r}")
    return value


def _parse_label(cell: str, line: int, path) -> int:
    try:
        value = float(cell)
    except ValueError:
        raise ValidationError(f"{path}: line {line}: label {cell!r} is not numeric") from None
    if not math.isfinite(value) or value != int(value) or value < 0:
        raise ValidationError(f"{path}: line {line}: label {cell!r} is not a non-negative integer")
    return int(value)


def load_feature_csv(
    path,
    label_column="label",
    *,
    standardize: bool = True,
    stats: Standardizer | None = None,
    num_classes: int | None = None,
    name: str | None = None,
) -> Dataset:
    """Read a header-ed CSV of precomputed feature vectors plus one integer label column.

    Features are standardized per column: with the file's own statistics, or
    with ``stats`` (e.g. ``train.scaler``) when loading a held-out test file.
    """
    header, body = _read_csv(path)
    li = _column_index(header, label_column, path)
    feats, labels = [], []
    for line, row in body:
        labels.append(_parse_label(row[li].strip(), line, path))
        feats.append([_parse_float(c, line, path) for j, c in enumerate(row) if j != li])
    x = np.array(feats, dtype=np.float64).reshape(len(body), len(header) - 1)
    y = np.array(labels, dtype=np.int64)
    scaler = stats
    if standardize:
        scaler = stats if stats is not None else Standardizer.fit(x)
        x = scaler.apply(x)
    k = num_classes if num_classes is not None else int(y.max()) + 1
    return _check_coverage(Dataset(x, y, k, name or Path(path).stem, scaler))


def _check_coverage(ds: Dataset) -> Dataset:
    if len(ds) < ds.num_classes:
        raise ValidationError(f"{ds.name}: {len(ds)} rows cannot cover {ds.num_classes} classes")
    return ds


def _window_features(win: np.ndarray, flatten: bool) -> np.ndarray:
    if flatten:
        return win.reshape(-1)
    return np.concatenate([win.mean(axis=0), win.std(axis=0), win.min(axis=0), win.max(axis=0)])


def window_series_csv(
    path,
    spec: WindowSpec,
    label_column="label",
    *,
    session_column="session_id",
    num_classes: int | None = None,
    name: str | None = None,
) -> Dataset:
    """Slice time-ordered sensor rows into sliding windows, per recording session.

    Every column other than the session and label columns is a channel.  A
    window's label is the majority label inside it, ties going to the lower
    class index.  Flattened windows are laid out time-major
    (``t0c0, t0c1, ..., t1c0, ...``); unflattened windows are summarised by
    per-channel mean, std, min and max.
    """
    header, body = _read_csv(path)
    si = _column_index(header, session_column, path)
    li = _column_index(header, label_column, path)
    channels = [j for j in range(len(header)) if j not in (si, li)]
    if not channels:
        raise ValidationError(f"{path}: no channel columns")

    sessions: dict[str, tuple[list[list[float]], list[int]]] = {}
    for line, row in body:
        sid = row[si].strip()
        values, labels = sessions.setdefault(sid, ([], []))
        labels.append(_parse_label(row[li].strip(), line, path))
        values.append([_parse_float(row[j], line, path) for j in channels])

    feats, out_labels = [], []
    for sid, (values, labels) in sessions.items():
        series = np.array(values, dtype=np.float64)
        lab = np.array(labels, dtype=np.int64)
        if spec.window_len > len(series):
            raise ValidationError(
                f"{path}: session {sid!r} has {len(series)} rows, shorter than window length {spec.window_len}"
            )
        for start in range(0, len(series) - spec.window_len + 1, spec.stride):
            stop = start + spec.window_len
            feats.append(_window_features(series[start:stop], spec.flatten))
            out_labels.append(int(np.argmax(np.bincount(lab[start:stop]))))

    y = np.array(out_labels, dtype=np.int64)
    k = num_classes if num_classes is not None else int(y.max()) + 1
    return _check_coverage(Dataset(np.vstack(feats), y, k, name or Path(path).stem))


def window_count(length: int, window_len: int, stride: int) -> int:
    if window_len > length:
        return 0
    return (length - window_len) // stride + 1


# -- synthetic data ---------------------------------------------------------------------


def synth_blobs(
    n_per_class: int,
    num_classes: int,
    dim: int,
    spread: float,
    seed: int,
    center_scale: float = 1.0,
    max_attempts: int = 1000,
) -> Dataset:
    """Isotropic Gaussian blobs around seeded centers.

    Centers are drawn from ``N(0, center_scale^2)`` per coordinate and
    rejected until every pair is at least ``4 * spread`` apart.
    """
    if n_per_class < 1 or num_classes < 1 or dim < 1 or not spread > 0:
        raise ValidationError("synth_blobs arguments must all be positive")
    rng = np.random.default_rng(seed)
    min_dist = 4.0 * spread
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < num_classes:
        if attempts >= max_attempts:
            raise ConfigurationError(
                f"could not place {num_classes} centers {min_dist:g} apart in {max_attempts} attempts; "
                "spread too large for center_scale"
            )
        attempts += 1
        cand = rng.normal(0.0, center_scale, size=dim)
        if all(np.linalg.norm(cand - c) >= min_dist for c in centers):
            centers.append(cand)

    labels = np.repeat(np.arange(num_classes), n_per_class)
    feats = np.vstack(centers)[labels] + rng.normal(0.0, spread, size=(labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(feats[order], labels[order], num_classes, f"synth-blobs-{num_classes}x{n_per_class}-d{dim}")


# -- splitting ------------------------------------------------------------------


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified, seeded train/test partition; class ``c`` puts round(f * n_c) rows in test."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B17]))
    train_idx, test_idx = [], []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size == 0:
            continue
        if members.size < 2:
            raise ValidationError(f"{dataset.name}: class {c} has fewer than 2 samples")
        members = rng.permutation(members)
        n_test = _round_half_up(test_fraction * members.size)
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    train = rng.permutation(np.concatenate(train_idx))
    test = rng.permutation(np.concatenate(test_idx))
    return dataset.subset(train, f"{dataset.name}/train"), dataset.subset(test, f"{dataset.name}/test")
