"""Connectivity matrices from ROI time series, edge vectors and node strengths."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .atlas import N_REGIONS, REGIONS
from .exceptions import DegenerateSeriesError, ShapeError, ValidationError

AGE_SCALE = 100.0


def pearson_corr(x, y):
    """Sample Pearson correlation of two equal-length series."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ShapeError(f"series shapes differ or are not 1-D: {x.shape} vs {y.shape}")
    if x.size < 3:
        raise ShapeError(f"need at least 3 samples, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0:
        raise DegenerateSeriesError("first series has zero variance")
    if syy == 0.0:
        raise DegenerateSeriesError("second series has zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def _check_timeseries(ts):
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim != 2:
        raise ShapeError(f"time series must be 2-D (T x regions), got shape {ts.shape}")
    if ts.shape[0] < 3:
        raise ShapeError(f"need at least 3 time points, got {ts.shape[0]}")
    if ts.shape[1] < 2:
        raise ShapeError("need at least 2 regions")
    if not np.all(np.isfinite(ts)):
        bad = sorted(set(np.nonzero(~np.isfinite(ts))[1].tolist()))
        raise ValidationError(f"non-finite values in column(s) {bad}")
    return ts


def build_connectivity(ts):
    """Absolute Pearson correlation between every pair of columns.

    Parameters
    ----------
    ts : array of shape (T, n)
        One column per region, T >= 3.

    Returns
    -------
    ndarray of shape (n, n)
        Symmetric, off-diagonal entries in [0, 1], zero diagonal.
    """
    ts = _check_timeseries(ts)
    centered = ts - ts.mean(axis=0)
    ss = np.einsum("ij,ij->j", centered, centered)
    flat = np.nonzero(ss == 0.0)[0]
    if flat.size:
        col = int(flat[0])
        label = REGIONS[col] if ts.shape[1] == N_REGIONS else str(col)
        raise DegenerateSeriesError(
            f"column {col} ({label}) has zero variance", column=col
        )
    scaled = centered / np.sqrt(ss)
    weights = np.abs(scaled.T @ scaled)
    weights = np.minimum(weights, 1.0)
    weights = 0.5 * (weights + weights.T)
    np.fill_diagonal(weights, 0.0)
    return weights


def n_nodes_for(n_edges):
    """Node count n with n(n-1)/2 == n_edges; raises ShapeError otherwise."""
    n = int(round((1 + math.sqrt(1 + 8 * n_edges)) / 2))
    if n < 2 or n * (n - 1) // 2 != n_edges:
        raise ShapeError(f"{n_edges} is not a triangular edge count")
    return n


def vectorize_upper(m):
    """Row-major strict upper triangle: pairs (0,1), (0,2), ..., (n-2,n-1)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    rows, cols = np.triu_indices(m.shape[0], k=1)
    return m[rows, cols]


def devectorize(v):
    """Inverse of :func:`vectorize_upper`; symmetric with a zero diagonal."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"edge vector must be 1-D, got shape {v.shape}")
    n = n_nodes_for(v.size)
    m = np.zeros((n, n))
    rows, cols = np.triu_indices(n, k=1)
    m[rows, cols] = v
    m[cols, rows] = v
    return m


def fcs(m):
    """Node strength: sum of each node's edge weights (diagonal excluded)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    return m.sum(axis=1) - np.diag(m)


def normalize_age(age):
    age = float(age)
    if not math.isfinite(age) or age < 0:
        raise ValidationError(f"age must be a finite non-negative number of years, got {age}")
    if age > 120:
        raise ValidationError(f"age {age} outside [0, 120] years")
    return min(age / AGE_SCALE, 1.0)


def assemble_input(v, age):
    """Edge vector followed by normalized age (age / 100, clamped to [0, 1])."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"edge vector must be 1-D, got shape {v.shape}")
    return np.append(v, normalize_age(age))


class ConnectivityTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer: list of (T, n) time series -> (n_subjects, n(n-1)/2) edges.

    ``fit`` only records the region count so that ``transform`` can reject
    series from a different atlas.
    """

    def __init__(self, n_regions=N_REGIONS):
        self.n_regions = n_regions

    def fit(self, X, y=None):
        for ts in X:
            if np.shape(ts)[1] != self.n_regions:
                raise ShapeError(
                    f"expected {self.n_regions} regions, got {np.shape(ts)[1]}"
                )
        self.n_features_out_ = self.n_regions * (self.n_regions - 1) // 2
        return self

    def transform(self, X):
        rows = []
        for ts in X:
            if np.shape(ts)[1] != self.n_regions:
                raise ShapeError(
                    f"expected {self.n_regions} regions, got {np.shape(ts)[1]}"
                )
            rows.append(vectorize_upper(build_connectivity(ts)))
        return np.vstack(rows)


# -- file formats -----------------------------------------------------------

def _format(x):
    return f"{x:.9g}"


def read_timeseries_csv(path):
    """T x n CSV, optionally with a header row of region labels."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    first = rows[0]
    try:
        [float(c) for c in first]
        header = None
    except ValueError:
        header = [c.strip() for c in first]
        rows = rows[1:]
    if header is not None and len(header) == N_REGIONS and tuple(header) != REGIONS:
        raise ValidationError(f"{path}: header does not match atlas region labels")
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if data.ndim != 2 or (header is not None and data.shape[1] != len(header)):
        raise ShapeError(f"{path}: ragged rows")
    return data


def write_matrix_csv(path, m):
    m = np.asarray(m, dtype=np.float64)
    with Path(path).open("w", newline="") as fh:
        for row in m:
            fh.write(",".join(_format(x) for x in row))
            fh.write("\n")


def read_matrix_csv(path):
    path = Path(path)
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"{path}: matrix is not square {m.shape}")
    return m


def write_edges_csv(path, v):
    """One value per line, canonical order, no header."""
    with Path(path).open("w", newline="") as fh:
        for x in np.asarray(v, dtype=np.float64):
            fh.write(_format(x))
            fh.write("\n")


def read_edges_csv(path):
    """Read an edge vector; a square matrix file is vectorized transparently."""
    path = Path(path)
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if data.shape[1] == 1 or data.shape[0] == 1:
        v = data.ravel()
        n_nodes_for(v.size)
        return v
    if data.shape[0] == data.shape[1]:
        return vectorize_upper(data)
    raise ShapeError(f"{path}: cannot interpret shape {data.shape} as edges")
