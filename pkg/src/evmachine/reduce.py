"""Per-class model reduction via greedy set cover.

Point ``i`` covers point ``j`` when ``Ψ_i(x_j) >= sigma``, tested in the
equivalent form ``(d / lam_i) ** kappa_i <= -ln(sigma)`` so that the
comparison stays exact where Ψ itself rounds to 1. The retained
extreme vectors are a greedy cover of the class: at every step the set with
the most still-uncovered points is taken, lowest index first on ties.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import DistanceMetric, PsiModel
from .errors import BudgetZero, InvalidParameter, LengthMismatch, UncoverableUniverse
from .psi import psi_exponent

log = logging.getLogger(__name__)

SEARCH_MAX_ITER = 30
SEARCH_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class CoverageSets:
    """Coverage sets as a boolean ``(n_sets, universe)`` membership matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=bool, ndmin=2, copy=True)
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]], universe: int) -> "CoverageSets":
        sets = [list(s) for s in sets]
        M = np.zeros((len(sets), universe), dtype=bool)
        for i, s in enumerate(sets):
            for j in s:
                if not 0 <= j < universe:
                    raise InvalidParameter(f"element {j} outside universe of size {universe}")
                M[i, j] = True
        return cls(M)

    @property
    def universe(self) -> int:
        return self.matrix.shape[1]

    @property
    def sets(self) -> list[frozenset[int]]:
        return [frozenset(np.flatnonzero(row).tolist()) for row in self.matrix]


def _check_aligned(models: Sequence[PsiModel], points) -> np.ndarray:
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[None, :]
    if len(models) != P.shape[0]:
        raise LengthMismatch(f"{len(models)} models but {P.shape[0]} points")
    if len(models) == 0:
        raise LengthMismatch("cannot reduce an empty class")
    return P


def _sigma_ok(sigma: float):
    if not (0.0 < sigma <= 1.0):
        raise InvalidParameter(f"sigma must lie in (0, 1], got {sigma!r}")


def coverage_exponents(models: Sequence[PsiModel], points, metric: DistanceMetric | str) -> np.ndarray:
    """``E[i, j]`` with ``Ψ_i(points[j]) = exp(-E[i, j])``; every point covers itself."""
    P = _check_aligned(models, points)
    evs = np.stack([m.ev for m in models])
    E = psi_exponent(evs, [m.kappa for m in models], [m.lam for m in models], P, metric)
    same = np.all(evs == P, axis=1)
    idx = np.flatnonzero(same)
    E[idx, idx] = 0.0
    return E


def coverage_probabilities(models: Sequence[PsiModel], points, metric: DistanceMetric | str) -> np.ndarray:
    """``P[i, j] = Ψ_i(points[j])``, with every point covering itself."""
    return np.exp(-coverage_exponents(models, points, metric))


def _limit(sigma: float) -> float:
    return -math.log(sigma)


def build_coverage(
    models: Sequence[PsiModel],
    points,
    sigma: float,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
) -> CoverageSets:
    _sigma_ok(sigma)
    return CoverageSets(coverage_exponents(models, points, metric) <= _limit(sigma))


def _greedy(M: np.ndarray) -> list[int]:
    n_sets, universe = M.shape
    if universe == 0:
        return []
    if not M.any(axis=0).all():
        missing = int(np.flatnonzero(~M.any(axis=0))[0])
        raise UncoverableUniverse(f"element {missing} belongs to no coverage set")
    gains = M.sum(axis=1, dtype=np.int64)
    covered = np.zeros(universe, dtype=bool)
    remaining = universe
    order = []
    while remaining:
        i = int(np.argmax(gains))
        order.append(i)
        new = M[i] & ~covered
        covered |= new
        remaining -= int(new.sum())
        gains -= M[:, new].sum(axis=1, dtype=np.int64)
    return order


def greedy_set_cover(cov: CoverageSets) -> list[int]:
    """Indices of the selected sets, in selection order."""
    return _greedy(cov.matrix)


def reduce_class(
    models: Sequence[PsiModel],
    points,
    sigma: float,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
) -> list[PsiModel]:
    """Retained extreme vectors for one class, most-covering first."""
    cov = build_coverage(models, points, sigma, metric)
    return [models[i] for i in greedy_set_cover(cov)]


def reduce_budgeted(
    models: Sequence[PsiModel],
    points,
    budget: int,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
    *,
    max_iter: int = SEARCH_MAX_ITER,
    tol: float = SEARCH_TOL,
) -> tuple[list[PsiModel], float]:
    """Reduce one class to at most ``budget`` extreme vectors.

    Binary-searches the coverage threshold for the largest greedy cover that
    still fits the budget. EV counts are only roughly monotone in sigma, so
    the best feasible cover seen anywhere in the search is kept. When no
    threshold fits, the smallest cover found is truncated to its first
    ``budget`` (most-covering) members.
    """
    if budget < 1:
        raise BudgetZero(f"budget must be at least 1, got {budget}")
    _check_aligned(models, points)
    if budget >= len(models):
        return list(models), 1.0

    E = coverage_exponents(models, points, metric)

    def cover(sigma):
        return _greedy(E <= _limit(sigma))

    best: tuple[int, float, list[int]] | None = None
    smallest: tuple[int, float, list[int]] | None = None

    def consider(sigma, sel):
        nonlocal best, smallest
        n = len(sel)
        if smallest is None or n < smallest[0]:
            smallest = (n, sigma, sel)
        if n <= budget and (best is None or n > best[0] or (n == best[0] and sigma > best[1])):
            best = (n, sigma, sel)

    sel = cover(1.0)
    consider(1.0, sel)
    lo, hi = 0.0, 1.0
    if len(sel) > budget:
        for _ in range(max_iter):
            if hi - lo < tol:
                break
            mid = 0.5 * (lo + hi)
            sel = cover(mid)
            consider(mid, sel)
            if len(sel) <= budget:
                lo = mid
                if len(sel) == budget:
                    break
            else:
                hi = mid

    if best is not None:
        _, sigma, sel = best
        return [models[i] for i in sel], sigma
    n, sigma, sel = smallest
    log.debug("no threshold meets budget %d (smallest cover %d); truncating", budget, n)
    return [models[i] for i in sel[:budget]], sigma


def split_budget(sizes: Sequence[int], total: int) -> list[int]:
    """Share ``total`` across classes in proportion to ``sizes``.

    Largest-remainder rounding, at least one EV per class.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    if total < len(sizes):
        raise BudgetZero(f"budget {total} cannot give each of {len(sizes)} classes one EV")
    raw = total * sizes / sizes.sum()
    alloc = np.maximum(np.floor(raw).astype(np.int64), 1)
    rem = raw - np.floor(raw)
    for i in np.argsort(-rem, kind="stable"):
        if alloc.sum() >= total:
            break
        alloc[i] += 1
    while alloc.sum() > total:
        i = int(np.argmax(alloc))
        alloc[i] -= 1
    return alloc.tolist()


def reduce_model(model, budget: int, *, per_class: bool = False):
    """Budgeted reduction of a trained model's EVs.

    ``budget`` is either a per-class cap or (default) a total shared across
    classes in proportion to their current EV counts. Returns the reduced
    model and the threshold used for each class.
    """
    if budget < 1:
        raise BudgetZero(f"budget must be at least 1, got {budget}")
    ids = model.class_ids
    if per_class:
        caps = [budget] * len(ids)
    else:
        caps = split_budget([len(model.classes[c]) for c in ids], budget)
    classes, sigmas = {}, {}
    for cid, cap in zip(ids, caps):
        models = list(model.classes[cid])
        kept, sigma = reduce_budgeted(models, model.arrays(cid)[0], cap, model.metric)
        classes[cid] = kept
        sigmas[cid] = sigma
    return model.replace(classes=classes), sigmas
