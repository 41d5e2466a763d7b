"""Pairwise distances and nearest-negative margin tails."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .core import DistanceMetric, Sample
from .errors import DimensionMismatch, EmptyNegatives, InvalidParameter, ZeroVector


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    return a


def _check_nonzero(M: np.ndarray, which: str) -> np.ndarray:
    norms = np.linalg.norm(M, axis=1)
    if np.any(norms == 0):
        row = int(np.flatnonzero(norms == 0)[0])
        raise ZeroVector(f"cosine distance undefined: row {row} of {which} is the zero vector")
    return norms


def pairwise(A, B, metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN) -> np.ndarray:
    """Distance matrix with ``D[i, j] = distance(A[i], B[j])``.

    Euclidean distances are computed directly from coordinate differences
    (via :func:`scipy.spatial.distance.cdist`), so identical vectors are at
    distance exactly 0. Cosine distance is ``1 - cos(a, b)`` clipped to
    ``[0, 2]``.
    """
    metric = DistanceMetric.parse(metric)
    A = _as_matrix(A)
    B = _as_matrix(B)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"dimension {A.shape[1]} does not match {B.shape[1]}")
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    if metric is DistanceMetric.EUCLIDEAN:
        return cdist(A, B, "euclidean")
    na = _check_nonzero(A, "first argument")
    nb = _check_nonzero(B, "second argument")
    cos = (A / na[:, None]) @ (B / nb[:, None]).T
    return np.clip(1.0 - cos, 0.0, 2.0)


def distance(a, b, metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise InvalidParameter("distance expects two 1-d vectors")
    return float(pairwise(a, b, metric)[0, 0])


def tail_margins(anchors, negatives, tau: int, metric: DistanceMetric | str) -> np.ndarray:
    """The ``min(tau, len(negatives))`` smallest half-distances per anchor.

    Returns an ``(n_anchors, t)`` array, each row sorted ascending.
    """
    negatives = _as_matrix(negatives)
    if negatives.shape[0] == 0:
        raise EmptyNegatives("margin tail needs at least one negative sample")
    if tau < 1:
        raise InvalidParameter(f"tau must be positive, got {tau}")
    D = pairwise(anchors, negatives, metric)
    t = min(int(tau), D.shape[1])
    if t < D.shape[1]:
        D = np.partition(D, t - 1, axis=1)[:, :t]
    return np.sort(D, axis=1) / 2.0


def tail_indices(anchors, negatives, tau: int, metric: DistanceMetric | str) -> np.ndarray:
    """Indices into ``negatives`` of each anchor's tail, nearest first.

    Ties are broken by position in ``negatives`` (stable selection).
    """
    negatives = _as_matrix(negatives)
    if negatives.shape[0] == 0:
        raise EmptyNegatives("margin tail needs at least one negative sample")
    D = pairwise(anchors, negatives, metric)
    t = min(int(tau), D.shape[1])
    return np.argsort(D, axis=1, kind="stable")[:, :t]


def nearest_negative_margins(
    anchor: Sample,
    negatives: Sequence[Sample],
    tau: int,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
) -> list[float]:
    """Half-distances from ``anchor`` to its ``tau`` closest negatives, ascending."""
    if len(negatives) == 0:
        raise EmptyNegatives("margin tail needs at least one negative sample")
    for neg in negatives:
        if neg.label == anchor.label:
            raise InvalidParameter(
                f"negative sample shares the anchor's label {anchor.label}"
            )
    N = np.stack([n.features for n in negatives])
    return tail_margins(anchor.features, N, tau, metric)[0].tolist()
