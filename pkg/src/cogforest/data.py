"""Feature matrices, distance computation, radius parameters, and file I/O."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError

METRICS = ("euclidean", "cosine", "manhattan")
_CDIST_NAMES = {"euclidean": "euclidean", "cosine": "cosine", "manhattan": "cityblock"}

CGF_MAGIC = b"CGF1"


def format_float(x: float) -> str:
    """Render a float with 17 significant digits (stable across runs)."""
    return "%.17g" % float(x)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """N samples with unique string ids, D-dimensional features, optional class labels."""

    ids: list[str]
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise InputError(f"features must be a non-empty 2-D matrix, got shape {feats.shape}")
        ids = [str(s) for s in self.ids]
        if len(ids) != feats.shape[0]:
            raise InputError(f"{len(ids)} ids for {feats.shape[0]} feature rows")
        if len(set(ids)) != len(ids):
            seen: set[str] = set()
            for s in ids:
                if s in seen:
                    raise InputError(f"duplicate sample id {s!r}")
                seen.add(s)
        bad = ~np.isfinite(feats)
        if bad.any():
            row = int(np.flatnonzero(bad.any(axis=1))[0])
            raise InputError(f"non-finite feature value in sample {ids[row]!r}")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (feats.shape[0],):
                raise InputError("labels must be one integer per sample")
            if (labels < 0).any():
                row = int(np.flatnonzero(labels < 0)[0])
                raise InputError(f"negative class label for sample {ids[row]!r}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_labels(self) -> list[int]:
        """Distinct labels in ascending order ([0] when unlabeled)."""
        if self.labels is None:
            return [0]
        return [int(c) for c in np.unique(self.labels)]

    def rows_of(self, label: int) -> np.ndarray:
        """Row indices of one class (all rows when unlabeled)."""
        if self.labels is None:
            return np.arange(self.n_samples)
        return np.flatnonzero(self.labels == label)

    def subset(self, rows: Sequence[int] | np.ndarray) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        labels = None if self.labels is None else self.labels[rows]
        return FeatureMatrix([self.ids[i] for i in rows], self.features[rows], labels)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Dense symmetric pairwise distances with a zero diagonal."""

    values: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InputError(f"distance matrix must be square, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise InputError("distance matrix contains non-finite entries")
        if (v < 0).any():
            raise InputError("distance matrix contains negative entries")
        if np.diagonal(v).any():
            raise InputError("distance matrix diagonal must be zero")
        if not (v == v.T).all():
            raise InputError("distance matrix must be symmetric")
        object.__setattr__(self, "values", v)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def submatrix(self, rows: np.ndarray) -> "DistanceMatrix":
        return DistanceMatrix(self.values[np.ix_(rows, rows)], self.metric)


@dataclass(frozen=True)
class ForestParams:
    """Density radius d_rd and coarse-node radius d_rn.

    With ``multiples=True`` the radii are multiples of the base distance and
    must be resolved against a distance matrix before forest construction.
    """

    d_rd: float
    d_rn: float
    multiples: bool = False

    def __post_init__(self) -> None:
        if not (self.d_rd > 0 and self.d_rn > 0):
            raise InputError(f"radii must be positive, got d_rd={self.d_rd}, d_rn={self.d_rn}")


@dataclass(frozen=True)
class BalanceFactors:
    """Class-wise and attribute-wise balance factors, each in [0, 1]."""

    q_cls: float
    q_attr: float

    def __post_init__(self) -> None:
        for name, q in (("q_cls", self.q_cls), ("q_attr", self.q_attr)):
            if not (0.0 <= q <= 1.0):
                raise InputError(f"{name} must lie in [0, 1], got {q}")


@dataclass(frozen=True)
class NoiseParams:
    """Thresholds for noise selection.

    n_min: trees smaller than this are noise candidates.
    n_d: depth (edges from root) at which layer-based selection starts.
    n_l: number of bottom layers selected per tree.
    p_d: density-percentile cap on the flagged fraction per class.
    """

    n_min: int = 3
    n_d: int = 2
    n_l: int = 1
    p_d: float = 0.1

    def __post_init__(self) -> None:
        if self.n_min < 0 or self.n_d < 0 or self.n_l < 0:
            raise InputError("n_min, n_d, n_l must be non-negative")
        if not (0.0 <= self.p_d <= 1.0):
            raise InputError(f"p_d must lie in [0, 1], got {self.p_d}")


def pairwise_distances(x: FeatureMatrix, metric: str = "euclidean") -> DistanceMatrix:
    """Full N-by-N distance matrix under one of the registered metrics.

    Cosine distance of a zero vector against anything is defined as 1.
    """
    name = _CDIST_NAMES.get(metric)
    if name is None:
        raise InputError(f"unknown metric {metric!r}; choose from {list(METRICS)}")
    with np.errstate(invalid="ignore"):
        d = cdist(x.features, x.features, metric=name)
    if metric == "cosine":
        d = np.nan_to_num(d, nan=1.0)
    d = np.maximum(d, 0.0)
    d = np.maximum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(d, metric)


def base_distance(d: DistanceMatrix) -> float:
    """Mean over samples of the mean distance to their three nearest neighbors.

    Falls back to min(3, N-1) neighbors for tiny inputs; N = 1 is an error.
    """
    n = d.n_samples
    if n < 2:
        raise InputError("base distance needs at least 2 samples")
    k = min(3, n - 1)
    v = d.values.copy()
    np.fill_diagonal(v, np.inf)
    nearest = np.partition(v, k - 1, axis=1)[:, :k]
    return float(nearest.mean())


def resolve_params(params: ForestParams, d: DistanceMatrix) -> ForestParams:
    """Convert multiple-of-base-distance radii to absolute radii.

    Absolute params pass through unchanged. A fully degenerate matrix
    (base distance 0, i.e. every sample's nearest neighbors coincide with it)
    resolves against 1.0 so construction still yields a forest.
    """
    if not params.multiples:
        return params
    base = base_distance(d)
    if base <= 0.0:
        base = 1.0
    return ForestParams(params.d_rd * base, params.d_rn * base, multiples=False)


# ---------------------------------------------------------------------------
# File formats: CSV with header id,label,f0..f{D-1} and the CGF1 binary.


def save_features_csv(x: FeatureMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{j}" for j in range(x.n_features)])
        for i, sid in enumerate(x.ids):
            label = "" if x.labels is None else str(int(x.labels[i]))
            w.writerow([sid, label] + [format_float(v) for v in x.features[i]])


def load_features_csv(path: str | Path) -> FeatureMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "id" or header[1] != "label":
            raise InputError(f"{path}: expected header id,label,f0..f{{D-1}}")
        dim = len(header) - 2
        if header[2:] != [f"f{j}" for j in range(dim)]:
            raise InputError(f"{path}: malformed feature columns in header")
        ids: list[str] = []
        labels: list[int] = []
        rows: list[list[float]] = []
        has_labels = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise InputError(f"{path}: line {lineno}: expected {dim + 2} fields, got {len(row)}")
            ids.append(row[0])
            labeled = row[1] != ""
            if has_labels is None:
                has_labels = labeled
            elif has_labels != labeled:
                raise InputError(f"{path}: line {lineno}: mixed labeled and unlabeled rows")
            if labeled:
                try:
                    labels.append(int(row[1]))
                except ValueError:
                    raise InputError(f"{path}: line {lineno}: bad label {row[1]!r}") from None
            try:
                rows.append([float(v) for v in row[2:]])
            except ValueError:
                raise InputError(f"{path}: line {lineno}: bad feature value") from None
        if not ids:
            raise InputError(f"{path}: no data rows")
        return FeatureMatrix(ids, np.array(rows), np.array(labels) if has_labels else None)


def save_features_cgf(x: FeatureMatrix, path: str | Path) -> None:
    """Little-endian binary: magic CGF1, u32 N, u32 D, ids, labels, f64 features.

    Each id is a u16 length followed by UTF-8 bytes; labels are one i32 per
    sample with -1 meaning unlabeled; features are row-major float64.
    """
    with open(path, "wb") as fh:
        fh.write(CGF_MAGIC)
        fh.write(struct.pack("<II", x.n_samples, x.n_features))
        for sid in x.ids:
            raw = sid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise InputError(f"sample id too long to encode: {sid[:32]!r}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        if x.labels is None:
            fh.write(struct.pack(f"<{x.n_samples}i", *([-1] * x.n_samples)))
        else:
            fh.write(struct.pack(f"<{x.n_samples}i", *(int(v) for v in x.labels)))
        fh.write(x.features.astype("<f8").tobytes(order="C"))


def load_features_cgf(path: str | Path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CGF_MAGIC:
            raise InputError(f"{path}: bad magic {magic!r}, expected {CGF_MAGIC!r}")
        n, dim = struct.unpack("<II", _read_exact(fh, 8, path))
        ids = []
        for _ in range(n):
            (length,) = struct.unpack("<H", _read_exact(fh, 2, path))
            ids.append(_read_exact(fh, length, path).decode("utf-8"))
        labels = np.array(struct.unpack(f"<{n}i", _read_exact(fh, 4 * n, path)), dtype=np.int64)
        feats = np.frombuffer(_read_exact(fh, 8 * n * dim, path), dtype="<f8").reshape(n, dim)
        if (labels == -1).all():
            return FeatureMatrix(ids, feats.copy(), None)
        if (labels == -1).any():
            raise InputError(f"{path}: mixed labeled and unlabeled samples")
        return FeatureMatrix(ids, feats.copy(), labels)


def _read_exact(fh: IO[bytes], count: int, path: str | Path) -> bytes:
    raw = fh.read(count)
    if len(raw) != count:
        raise InputError(f"{path}: truncated file")
    return raw


def load_features(path: str | Path) -> FeatureMatrix:
    """Load either format, sniffing the CGF1 magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == CGF_MAGIC:
        return load_features_cgf(path)
    return load_features_csv(path)
