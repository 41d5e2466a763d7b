"""Two-parameter Weibull maximum-likelihood fitting and survival function.

The shape MLE solves the profile equation

    g(k) = sum(x**k * log x) / sum(x**k) - 1/k - mean(log x) = 0

which is strictly increasing in ``k`` (its derivative is a weighted variance
of ``log x`` plus ``1/k**2``), so the root is unique whenever the sample is
not constant. The scale then follows in closed form,
``lam = mean(x**k) ** (1/k)``. Rows are solved in lockstep so that a whole
class worth of tails is fit in one vectorized pass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTail, InvalidParameter, NonPositiveValue, TooFewSamples, ZeroMarginWarning

ZERO_EPS = 1e-12
TOL = 1e-6
MAX_ITER = 100
_MAX_BRACKET_STEPS = 80


@dataclass(frozen=True)
class WeibullFit:
    kappa: float
    lam: float
    n: int
    converged: bool


def _profile(L: np.ndarray, mean_L: np.ndarray, k: np.ndarray):
    """g(k) and g'(k) for rows of log-values ``L`` whose row max is 0."""
    w = np.exp(k[:, None] * L)
    s0 = w.sum(axis=1)
    m1 = (w * L).sum(axis=1) / s0
    m2 = (w * L * L).sum(axis=1) / s0
    g = m1 - 1.0 / k - mean_L
    dg = (m2 - m1 * m1) + 1.0 / (k * k)
    return g, dg


def fit_weibull_batch(tails, *, tol: float = TOL, max_iter: int = MAX_ITER):
    """Fit every row of ``tails`` independently.

    Zeros are clamped to ``ZERO_EPS`` with a :class:`ZeroMarginWarning`.
    Rows whose values are all identical are reported in ``degenerate`` and
    get ``nan`` parameters.

    Returns
    -------
    kappa, lam : ndarray
    converged, degenerate : ndarray of bool
    """
    X = np.array(tails, dtype=np.float64, ndmin=2, copy=True)
    n_rows, m = X.shape
    if m < 2:
        raise TooFewSamples(f"a Weibull fit needs at least 2 values, got {m}")
    if not np.all(np.isfinite(X)):
        raise InvalidParameter("tail contains non-finite values")
    if np.any(X < 0):
        raise NonPositiveValue("tail contains negative values")
    zeros = X == 0
    if zeros.any():
        warnings.warn(
            f"clamped {int(zeros.sum())} zero margin(s) to {ZERO_EPS:g} before fitting",
            ZeroMarginWarning,
            stacklevel=2,
        )
        X[zeros] = ZERO_EPS
    X.sort(axis=1)

    kappa = np.full(n_rows, np.nan)
    lam = np.full(n_rows, np.nan)
    converged = np.zeros(n_rows, dtype=bool)
    degenerate = X[:, 0] == X[:, -1]
    live = ~degenerate
    if not live.any():
        return kappa, lam, converged, degenerate

    Xl = X[live]
    scale = Xl[:, -1]
    L = np.log(Xl / scale[:, None])
    mean_L = L.mean(axis=1)

    # Coefficient-of-variation start, k ~ cv**-1.086.
    cv = Xl.std(axis=1) / Xl.mean(axis=1)
    k = np.clip(cv ** -1.086, 1e-3, 1e4)

    lo = k.copy()
    hi = k.copy()
    g_lo, _ = _profile(L, mean_L, lo)
    for _ in range(_MAX_BRACKET_STEPS):
        need = g_lo > 0
        if not need.any():
            break
        lo[need] /= 2.0
        g_lo[need] = _profile(L[need], mean_L[need], lo[need])[0]
    g_hi, _ = _profile(L, mean_L, hi)
    for _ in range(_MAX_BRACKET_STEPS):
        need = g_hi < 0
        if not need.any():
            break
        hi[need] *= 2.0
        g_hi[need] = _profile(L[need], mean_L[need], hi[need])[0]

    done = np.zeros(len(k), dtype=bool)
    active = np.arange(len(k))
    for _ in range(max_iter):
        if active.size == 0:
            break
        ka = k[active]
        g, dg = _profile(L[active], mean_L[active], ka)
        # shrink the bracket with the sign of g
        pos = g > 0
        hi[active[pos]] = ka[pos]
        lo[active[~pos]] = ka[~pos]
        step = g / dg
        k_new = ka - step
        outside = ~((k_new > lo[active]) & (k_new < hi[active])) | ~np.isfinite(k_new)
        k_new[outside] = 0.5 * (lo[active][outside] + hi[active][outside])
        fin = (np.abs(k_new - ka) < tol) | (g == 0)
        k[active] = k_new
        done[active[fin]] = True
        active = active[~fin]

    lam_l = scale * np.mean(np.exp(k[:, None] * L), axis=1) ** (1.0 / k)
    kappa[live] = k
    lam[live] = lam_l
    converged[live] = done
    return kappa, lam, converged, degenerate


def fit_weibull(tail) -> WeibullFit:
    """Maximum-likelihood Weibull fit of a positive sample.

    Raises :class:`TooFewSamples` for fewer than two values,
    :class:`NonPositiveValue` for negatives and :class:`DegenerateTail` when
    every value is the same. A fit that hits the iteration cap is returned
    with ``converged=False`` and the last iterate.
    """
    x = np.asarray(tail, dtype=np.float64).ravel()
    if x.size < 2:
        raise TooFewSamples(f"a Weibull fit needs at least 2 values, got {x.size}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroMarginWarning)
        kappa, lam, converged, degenerate = fit_weibull_batch(x[None, :])
    if np.any(x == 0):
        warnings.warn(
            f"clamped {int(np.sum(x == 0))} zero value(s) to {ZERO_EPS:g} before fitting",
            ZeroMarginWarning,
            stacklevel=2,
        )
    if degenerate[0]:
        raise DegenerateTail(float(max(x[0], ZERO_EPS)))
    return WeibullFit(float(kappa[0]), float(lam[0]), int(x.size), bool(converged[0]))


def weibull_survival(d, kappa, lam):
    """``exp(-(d / lam) ** kappa)``; scalar in, float out."""
    kappa = np.asarray(kappa, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(kappa <= 0) or np.any(lam <= 0):
        raise InvalidParameter("Weibull shape and scale must be positive")
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise InvalidParameter("distance must be non-negative")
    out = np.exp(-np.power(d / lam, kappa))
    return float(out) if out.ndim == 0 else out


def weibull_loglik(tail, kappa: float, lam: float) -> float:
    x = np.asarray(tail, dtype=np.float64)
    z = x / lam
    return float(
        x.size * np.log(kappa / lam) + (kappa - 1.0) * np.log(z).sum() - np.power(z, kappa).sum()
    )
