"""Distance and normalization numerics shared by the losses, miners and evaluator.

Sums over the embedding dimension are accumulated strictly left to right
(``np.cumsum`` along the last axis), so a single distance and the matching
entry of a distance matrix are bit-identical.
"""
from __future__ import annotations

from typing import Literal

import numpy as np

Metric = Literal["squared_l2", "l2"]
METRICS = ("squared_l2", "l2")

NORM_EPS = 1e-12


def check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def as_embedding(v, name: str = "embedding") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def as_embeddings(vs, name: str = "embeddings") -> np.ndarray:
    arr = np.asarray(vs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be a non-empty (n, D) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _ordered_sum(x: np.ndarray) -> np.ndarray:
    # sequential, ascending-index reduction over the last axis
    return np.cumsum(x, axis=-1)[..., -1]


def _finish(sq, metric: str):
    return np.sqrt(sq) if metric == "l2" else sq


def distance(a, b, metric: Metric = "squared_l2") -> float:
    """Squared or plain Euclidean distance between two embeddings."""
    check_metric(metric)
    a = as_embedding(a, "a")
    b = as_embedding(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    diff = a - b
    return float(_finish(_ordered_sum(diff * diff), metric))


def pairwise_distances(A, B, metric: Metric = "squared_l2") -> np.ndarray:
    """Distance matrix with ``out[i, j] == distance(A[i], B[j], metric)`` exactly."""
    check_metric(metric)
    A = as_embeddings(A, "A")
    B = as_embeddings(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    diff = A[:, None, :] - B[None, :, :]
    return _finish(_ordered_sum(diff * diff), metric)


def l2_normalize(v) -> tuple[np.ndarray, bool]:
    """Scale ``v`` to unit length.

    Returns ``(unit_vector, degenerate)``.  Vectors with norm at or below
    ``NORM_EPS`` come back unchanged with ``degenerate=True``.
    """
    v = as_embedding(v, "v")
    norm = float(np.sqrt(_ordered_sum(v * v)))
    if norm <= NORM_EPS:
        return v.copy(), True
    return v / norm, False


def l2_normalize_rows(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise version of :func:`l2_normalize`.

    Returns ``(normalized, norms, degenerate_mask)``; degenerate rows are copied through.
    """
    X = np.asarray(X, dtype=np.float64)
    norms = np.sqrt(_ordered_sum(X * X))
    degenerate = norms <= NORM_EPS
    safe = np.where(degenerate, 1.0, norms)
    out = X / safe[:, None]
    return out, norms, degenerate
