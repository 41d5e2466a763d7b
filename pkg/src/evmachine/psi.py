"""Per-point inclusion models: fit on the margin tail, evaluate by distance."""

from __future__ import annotations

import logging
import threading
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DistanceMetric, PsiModel, Sample
from .distance import pairwise, tail_margins
from .errors import DimensionMismatch, EmptyNegatives, InvalidParameter, ZeroMarginWarning
from .weibull import ZERO_EPS, fit_weibull, fit_weibull_batch

log = logging.getLogger(__name__)


@dataclass
class FitDiagnostics:
    """Counters collected while fitting many Ψ-models.

    Shared between worker threads, hence the lock.
    """

    fits: int = 0
    nonconverged: int = 0
    degenerate: int = 0
    zero_margins: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, fits=0, nonconverged=0, degenerate=0, zero_margins=0):
        with self._lock:
            self.fits += fits
            self.nonconverged += nonconverged
            self.degenerate += degenerate
            self.zero_margins += zero_margins


def _check_negatives(anchor: Sample, negatives: Sequence[Sample]) -> np.ndarray:
    if len(negatives) == 0:
        raise EmptyNegatives("Ψ fit needs at least one negative sample")
    for neg in negatives:
        if neg.label == anchor.label:
            raise InvalidParameter(f"negative sample shares the anchor's label {anchor.label}")
        if neg.dim != anchor.dim:
            raise DimensionMismatch(f"negative has dim {neg.dim}, anchor has dim {anchor.dim}")
    return np.stack([n.features for n in negatives])


def fit_psi(
    anchor: Sample,
    negatives: Sequence[Sample],
    tau: int,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
) -> PsiModel:
    """Fit one Ψ-model strictly: degenerate or too-short tails raise.

    Training goes through :func:`fit_psi_batch`, which instead substitutes a
    fallback model so no training point is lost.
    """
    N = _check_negatives(anchor, negatives)
    tail = tail_margins(anchor.features, N, tau, metric)[0]
    fit = fit_weibull(tail)
    return PsiModel(anchor.features, fit.kappa, fit.lam)


def fit_psi_batch(
    anchors: np.ndarray,
    negatives: np.ndarray,
    tau: int,
    metric: DistanceMetric | str,
    diagnostics: FitDiagnostics | None = None,
) -> list[PsiModel]:
    """Fit a Ψ-model for every row of ``anchors`` against the same negatives.

    Tails with a single value or with all values equal cannot be fit; those
    anchors get ``kappa = 1`` and ``lam`` equal to the common margin.
    Non-converged fits keep their last iterate.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if anchors.shape[0] == 0:
        return []
    tails = tail_margins(anchors, negatives, tau, metric)
    n_zero = int(np.sum(tails == 0))
    if tails.shape[1] >= 2:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroMarginWarning)
            kappa, lam, converged, degenerate = fit_weibull_batch(tails)
    else:
        n = tails.shape[0]
        kappa, lam = np.full(n, np.nan), np.full(n, np.nan)
        converged = np.zeros(n, dtype=bool)
        degenerate = np.ones(n, dtype=bool)
    if degenerate.any():
        kappa[degenerate] = 1.0
        lam[degenerate] = np.maximum(tails[degenerate, 0], ZERO_EPS)
    if n_zero:
        warnings.warn(
            f"clamped {n_zero} zero margin(s) to {ZERO_EPS:g}; duplicate points exist across classes",
            ZeroMarginWarning,
            stacklevel=2,
        )
    n_bad = int(np.sum(~converged & ~degenerate))
    if n_bad:
        log.debug("%d Weibull fit(s) hit the iteration cap", n_bad)
    if diagnostics is not None:
        diagnostics.add(
            fits=len(kappa),
            nonconverged=n_bad,
            degenerate=int(degenerate.sum()),
            zero_margins=n_zero,
        )
    return [PsiModel(x, k, l) for x, k, l in zip(anchors, kappa, lam)]


def psi_exponent(evs, kappa, lam, queries, metric: DistanceMetric | str) -> np.ndarray:
    """``E[i, j] = (d(evs[i], queries[j]) / lam[i]) ** kappa[i]``, so that Ψ = exp(-E).

    Thresholds are best compared on this scale: for large shapes, exp(-E)
    rounds to exactly 1.0 at small positive distances.
    """
    D = pairwise(evs, queries, metric)
    kappa = np.asarray(kappa, dtype=np.float64)[:, None]
    lam = np.asarray(lam, dtype=np.float64)[:, None]
    return np.power(D / lam, kappa)


def psi_matrix(evs, kappa, lam, queries, metric: DistanceMetric | str) -> np.ndarray:
    """``P[i, j]``: inclusion probability of ``queries[j]`` under EV ``i``."""
    return np.exp(-psi_exponent(evs, kappa, lam, queries, metric))


def psi_probability(model: PsiModel, query, metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN) -> float:
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != model.ev.shape[0]:
        raise DimensionMismatch(f"query shape {q.shape} does not match EV length {model.ev.shape[0]}")
    return float(psi_matrix(model.ev[None, :], [model.kappa], [model.lam], q[None, :], metric)[0, 0])

