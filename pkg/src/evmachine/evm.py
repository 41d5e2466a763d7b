"""Training, prediction with rejection, and batch-incremental updates."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

from .core import UNKNOWN, Dataset, DistanceMetric, EvmModel, HyperParams, Prediction, PsiModel
from .distance import tail_indices
from .errors import DimensionMismatch, EVMError, FitError, SingleClassDataset, UnknownClassId
from .psi import FitDiagnostics, fit_psi_batch, psi_matrix
from .reduce import reduce_class

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

_QUERY_CHUNK = 2048


def default_threads() -> int:
    env = os.environ.get("EVM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer EVM_THREADS=%r", env)
    return os.cpu_count() or 1


def _map(fn: Callable[[T], R], items: Iterable[T], threads: int | None) -> list[R]:
    items = list(items)
    n = default_threads() if threads is None else max(1, int(threads))
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def _canonical(X: np.ndarray) -> np.ndarray:
    """Rows in lexicographic order, so results do not depend on input order."""
    if X.shape[0] <= 1:
        return X
    return X[np.lexsort(X.T[::-1])]


def _fit_class(cid, anchors, negatives, hyper, metric, diagnostics):
    try:
        return fit_psi_batch(anchors, negatives, hyper.tau, metric, diagnostics)
    except EVMError as exc:
        raise FitError(f"class {cid}: {exc}") from exc


def train(
    data: Dataset,
    hyper: HyperParams,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
    *,
    threads: int | None = None,
    diagnostics: FitDiagnostics | None = None,
) -> EvmModel:
    """Fit a Ψ-model for every training point, then reduce each class.

    Each point's tail is drawn from all points of every other class. Classes
    are processed independently (in parallel when ``threads > 1``).
    """
    metric = DistanceMetric.parse(metric)
    classes = data.classes
    if len(classes) < 2:
        raise SingleClassDataset(
            f"training needs at least two classes, got {len(classes)}"
        )
    X, y = data.features, data.labels

    def job(cid):
        anchors = _canonical(X[y == cid])
        models = _fit_class(cid, anchors, X[y != cid], hyper, metric, diagnostics)
        kept = reduce_class(models, anchors, hyper.sigma, metric)
        log.debug("class %d: %d points -> %d EVs", cid, len(models), len(kept))
        return kept

    kept = _map(job, classes, threads)
    return EvmModel(
        classes=dict(zip(classes, kept)),
        metric=metric,
        hyper=hyper,
        dim=data.dim,
        label_names={c: data.name_of(c) for c in classes},
    )


def _check_queries(model: EvmModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DimensionMismatch(f"query dimension {X.shape[-1]} does not match model dim {model.dim}")
    return X


def _topk_mean(P: np.ndarray, k: int) -> np.ndarray:
    """Mean of the ``k`` largest entries of each column of ``P``."""
    k = min(k, P.shape[0])
    if k == P.shape[0]:
        top = P
    else:
        top = np.partition(P, P.shape[0] - k, axis=0)[P.shape[0] - k:]
    return np.sort(top, axis=0).mean(axis=0)


def predict_proba(model: EvmModel, X, *, threads: int | None = None) -> np.ndarray:
    """``(n_queries, n_classes)`` class probabilities, columns in ``model.class_ids`` order."""
    X = _check_queries(model, X)
    out = np.empty((X.shape[0], len(model.classes)))
    k = model.hyper.k

    def job(col_cid):
        col, cid = col_cid
        evs, kappa, lam = model.arrays(cid)
        for start in range(0, X.shape[0], _QUERY_CHUNK):
            Q = X[start:start + _QUERY_CHUNK]
            out[start:start + Q.shape[0], col] = _topk_mean(
                psi_matrix(evs, kappa, lam, Q, model.metric), k
            )

    _map(job, enumerate(model.class_ids), threads)
    return out


def class_probability(model: EvmModel, query, class_id: int) -> float:
    if class_id not in model.classes:
        raise UnknownClassId(f"class {class_id} is not in the model")
    q = _check_queries(model, query)
    evs, kappa, lam = model.arrays(class_id)
    return float(_topk_mean(psi_matrix(evs, kappa, lam, q, model.metric), model.hyper.k)[0])


def decide(proba: np.ndarray, class_ids, delta: float) -> np.ndarray:
    """Labels from a probability matrix: argmax class, or UNKNOWN below ``delta``.

    Ties go to the first column, i.e. the smallest class id.
    """
    ids = np.asarray(class_ids, dtype=np.int64)
    best = np.argmax(proba, axis=1)
    top = proba[np.arange(proba.shape[0]), best]
    return np.where(top >= delta, ids[best], UNKNOWN)


def predict_labels(model: EvmModel, X, delta: float | None = None, *, threads: int | None = None) -> np.ndarray:
    delta = model.hyper.delta if delta is None else delta
    return decide(predict_proba(model, X, threads=threads), model.class_ids, delta)


def predict(model: EvmModel, query, delta: float | None = None) -> Prediction:
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1:
        raise DimensionMismatch("predict takes a single feature vector; use predict_labels for batches")
    proba = predict_proba(model, q, threads=1)
    delta = model.hyper.delta if delta is None else delta
    label = int(decide(proba, model.class_ids, delta)[0])
    return Prediction(dict(zip(model.class_ids, proba[0].tolist())), label)


def update(
    model: EvmModel,
    batch: Dataset,
    *,
    threads: int | None = None,
    diagnostics: FitDiagnostics | None = None,
) -> EvmModel:
    """Fold a batch of labelled data into a trained model.

    The negative pool for every class is the current EVs of the other
    classes followed by the batch points of the other classes. New points are
    fit against that pool. An existing EV is refit only when a batch point
    enters its tail. Classes that received new points are reduced again over
    their old EVs plus the new points; the rest keep their EV set. The input
    model is left untouched.
    """
    if len(batch) == 0:
        return model
    if batch.dim != model.dim:
        raise DimensionMismatch(f"batch dim {batch.dim} does not match model dim {model.dim}")
    hyper, metric = model.hyper, model.metric
    old = {cid: model.arrays(cid)[0] for cid in model.class_ids}
    new = {cid: _canonical(batch.features[batch.labels == cid]) for cid in batch.classes}
    all_ids = sorted(set(old) | set(new))
    if len(all_ids) < 2:
        raise SingleClassDataset("update would leave a single-class model")

    def pool_for(cid):
        old_part = [old[c] for c in old if c != cid]
        new_part = [new[c] for c in new if c != cid]
        n_old = sum(len(p) for p in old_part)
        pool = np.vstack(old_part + new_part) if old_part or new_part else np.zeros((0, model.dim))
        return pool, n_old

    def job(cid):
        pool, n_old = pool_for(cid)
        models: list[PsiModel] = list(model.classes.get(cid, ()))
        if models and pool.shape[0] > n_old:
            idx = tail_indices(old[cid], pool, hyper.tau, metric)
            touched = np.flatnonzero((idx >= n_old).any(axis=1))
            if touched.size:
                refit = _fit_class(cid, old[cid][touched], pool, hyper, metric, diagnostics)
                for i, m in zip(touched, refit):
                    models[i] = m
        if cid not in new:
            return models
        fresh = _fit_class(cid, new[cid], pool, hyper, metric, diagnostics)
        candidates = models + fresh
        points = np.stack([m.ev for m in candidates])
        return reduce_class(candidates, points, hyper.sigma, metric)

    kept = _map(job, all_ids, threads)
    names = dict(model.label_names)
    for cid in batch.classes:
        names.setdefault(cid, batch.name_of(cid))
    return model.replace(classes=dict(zip(all_ids, kept)), label_names=names)
