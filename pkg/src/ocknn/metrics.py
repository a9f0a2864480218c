"""Distance functions between embedding vectors and batched pairwise search kernels.

Three metrics are supported: cosine, correlation (1 - Pearson) and Spearman
(correlation of fractional ranks). All of them live in [0, 2]: 0 for maximal
similarity, 2 for maximal dissimilarity.

Arithmetic is always carried out in float64 regardless of the input dtype
(embeddings are typically stored as float32; dot products over thousands of
dimensions lose precision in 32-bit). Final values are clamped into [0, 2]
to absorb floating-point rounding at the interval's endpoints.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateVectorError, InputError


class DistanceMetric(str, enum.Enum):
    """Which distance the nearest-neighbor search uses."""

    COSINE = "cosine"
    CORRELATION = "correlation"
    SPEARMAN = "spearman"


def _as_vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise InputError(f"{name} must be a 1-D vector with at least one entry, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputError(f"{name} contains non-finite entries")
    return v


def _check_same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[0] != y.shape[0]:
        raise InputError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")


def _clamp(value: float) -> float:
    return float(min(max(value, 0.0), 2.0))


def cosine_distance(x, y) -> float:
    """Angle-based distance ``1 - x.y / (|x| |y|)``.

    Symmetric, zero for identical directions, 2 for antipodal ones.
    Raises DegenerateVectorError for a zero-norm argument: a silent default
    would corrupt any arg-min built on top of the distances.
    """
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    _check_same_dim(xv, yv)
    nx = float(np.linalg.norm(xv))
    ny = float(np.linalg.norm(yv))
    if nx == 0.0:
        raise DegenerateVectorError("x has zero norm; cosine distance is undefined")
    if ny == 0.0:
        raise DegenerateVectorError("y has zero norm; cosine distance is undefined")
    return _clamp(1.0 - float(np.dot(xv, yv)) / (nx * ny))


def correlation_distance(x, y) -> float:
    """``1 - Pearson(x, y)``: cosine distance of the mean-centered vectors.

    Invariant to per-vector affine maps with positive scale. Requires
    dimension >= 2 and non-constant arguments.
    """
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    _check_same_dim(xv, yv)
    if xv.shape[0] < 2:
        raise InputError("correlation distance requires dimension >= 2")
    xc = xv - xv.mean()
    yc = yv - yv.mean()
    nx = float(np.linalg.norm(xc))
    ny = float(np.linalg.norm(yc))
    if nx == 0.0:
        raise DegenerateVectorError("x is constant; correlation distance is undefined")
    if ny == 0.0:
        raise DegenerateVectorError("y is constant; correlation distance is undefined")
    return _clamp(1.0 - float(np.dot(xc, yc)) / (nx * ny))


def rank_transform(x) -> np.ndarray:
    """Fractional ranks of a vector: 1-based, ties get the average of the
    ranks they span (the standard Spearman convention)."""
    xv = _as_vector(x, "x")
    return rankdata(xv, method="average")


def spearman_distance(x, y) -> float:
    """Correlation distance of the rank-transformed vectors.

    Invariant under any strictly increasing elementwise transform of either
    argument. An all-tied vector has constant ranks and is rejected.
    """
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    _check_same_dim(xv, yv)
    if xv.shape[0] < 2:
        raise InputError("spearman distance requires dimension >= 2")
    if np.all(xv == xv[0]):
        raise DegenerateVectorError("x has fewer than two distinct values; spearman distance is undefined")
    if np.all(yv == yv[0]):
        raise DegenerateVectorError("y has fewer than two distinct values; spearman distance is undefined")
    return correlation_distance(rank_transform(xv), rank_transform(yv))


def _as_matrix(X, name: str) -> np.ndarray:
    m = np.asarray(X, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InputError(f"{name} must be a non-empty 2-D matrix of row vectors, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        bad = int(np.where(~np.isfinite(m).all(axis=1))[0][0])
        raise InputError(f"{name} row {bad} contains non-finite entries")
    return m


def _normalized_rows(m: np.ndarray, name: str, metric: DistanceMetric) -> np.ndarray:
    if metric is not DistanceMetric.COSINE:
        if metric is DistanceMetric.SPEARMAN:
            constant = np.all(m == m[:, :1], axis=1)
            if np.any(constant):
                bad = int(np.where(constant)[0][0])
                raise DegenerateVectorError(
                    f"{name} row {bad} has fewer than two distinct values; spearman distance is undefined"
                )
            m = rankdata(m, method="average", axis=1)
        m = m - m.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.where(norms == 0.0)[0][0])
        what = "zero norm" if metric is DistanceMetric.COSINE else "no variation"
        raise DegenerateVectorError(f"{name} row {bad} has {what}; {metric.value} distance is undefined")
    return m / norms[:, None]


def pairwise_distances(X, Y, metric: DistanceMetric | str = DistanceMetric.COSINE) -> np.ndarray:
    """All-pairs distance matrix between the rows of X and the rows of Y.

    Entry (s, t) equals the scalar metric applied to row s of X and row t
    of Y, up to float accumulation order (<= 1e-6 elementwise). Degenerate
    rows are reported with their matrix name and row index.
    """
    metric = DistanceMetric(metric)
    A = _as_matrix(X, "X")
    B = _as_matrix(Y, "Y")
    if A.shape[1] != B.shape[1]:
        raise InputError(f"dimension mismatch: X has {A.shape[1]} columns, Y has {B.shape[1]}")
    if metric is not DistanceMetric.COSINE and A.shape[1] < 2:
        raise InputError(f"{metric.value} distance requires dimension >= 2")
    An = _normalized_rows(A, "X", metric)
    Bn = _normalized_rows(B, "Y", metric)
    return np.clip(1.0 - An @ Bn.T, 0.0, 2.0)


def scalar_distance(x, y, metric: DistanceMetric | str) -> float:
    """Dispatch to the scalar distance function for ``metric``."""
    metric = DistanceMetric(metric)
    if metric is DistanceMetric.COSINE:
        return cosine_distance(x, y)
    if metric is DistanceMetric.CORRELATION:
        return correlation_distance(x, y)
    return spearman_distance(x, y)
