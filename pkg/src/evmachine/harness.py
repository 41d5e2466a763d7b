"""Open-set and open-world evaluation protocols.

Protocols are seeded through :class:`numpy.random.SeedSequence`, one child
stream per fold, so folds can run in any order (or concurrently) and still
produce identical reports.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .core import UNKNOWN, Dataset, DistanceMetric, EvmModel, HyperParams
from .errors import (
    CountMismatch,
    DimensionMismatch,
    EmptyInput,
    InsufficientClasses,
    InvalidOpenness,
    InvalidParameter,
)
from .evm import _map, decide, predict_proba, train, update

log = logging.getLogger(__name__)

DEFAULT_DELTA_GRID = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)


@dataclass(frozen=True)
class OpennessConfig:
    """Class counts seen in training (``c_t``), to recognise (``c_r``) and
    at evaluation (``c_e``)."""

    c_t: int
    c_r: int
    c_e: int

    def __post_init__(self):
        if not (self.c_t >= self.c_r >= 1):
            raise InvalidOpenness(f"need c_t >= c_r >= 1, got c_t={self.c_t}, c_r={self.c_r}")
        if self.c_e < self.c_r:
            raise InvalidOpenness(f"need c_e >= c_r, got c_e={self.c_e}, c_r={self.c_r}")


def dynamic_delta(cfg: OpennessConfig) -> float:
    """Rejection threshold that grows with the openness of the test set."""
    radicand = 2.0 * cfg.c_t / (cfg.c_r + cfg.c_e)
    if radicand > 1.0:
        raise InvalidOpenness(
            f"2*c_t/(c_r+c_e) = {radicand:.6g} exceeds 1; threshold would be negative"
        )
    return 0.5 * (1.0 - math.sqrt(radicand))


def _pairs(predictions) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(list(predictions) if not isinstance(predictions, np.ndarray) else predictions)
    if arr.size == 0:
        raise EmptyInput("no predictions to score")
    arr = arr.reshape(-1, 2)
    return arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64)


def macro_f1(predictions, classes: Iterable[int] | None = None) -> float:
    """Macro-averaged F1 over known classes.

    ``predictions`` is a sequence of ``(truth, predicted)`` pairs where either
    side may be :data:`UNKNOWN`. UNKNOWN is an ordinary outcome that counts
    against recall (known truth rejected) but is never itself averaged in.
    Undefined precision/recall/F1 (0/0) count as 0. ``classes`` defaults to
    every known label appearing on either side.
    """
    truth, pred = _pairs(predictions)
    if classes is None:
        classes = np.union1d(truth, pred)
        classes = classes[classes != UNKNOWN]
    classes = [int(c) for c in classes]
    if not classes:
        return 0.0
    scores = []
    for c in classes:
        tp = int(np.sum((pred == c) & (truth == c)))
        fp = int(np.sum((pred == c) & (truth != c)))
        fn = int(np.sum((pred != c) & (truth == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * p * r / (p + r) if p + r else 0.0)
    return float(np.mean(scores))


def accuracy(predictions) -> float:
    truth, pred = _pairs(predictions)
    return float(np.mean(truth == pred))


def vector_ratio(model: EvmModel | int, training_points_seen: int) -> float:
    evs = model if isinstance(model, (int, np.integer)) else model.ev_count
    if training_points_seen <= 0:
        raise CountMismatch("no training points seen")
    if evs > training_points_seen:
        raise CountMismatch(f"{evs} EVs exceed {training_points_seen} training points")
    return evs / training_points_seen


@dataclass(frozen=True)
class ProtocolRow:
    fold: int
    batch: int
    step: int
    known_classes: int
    unknown_classes: int
    test_points: int
    delta: float
    f1: float
    accuracy: float
    f1_delta0: float
    accuracy_delta0: float
    vector_ratio: float
    ev_count: int
    point_count: int


_METRICS = ("delta", "f1", "accuracy", "f1_delta0", "accuracy_delta0", "vector_ratio")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


@dataclass
class ProtocolReport:
    mode: str
    rows: list[ProtocolRow]

    def aggregate(self) -> list[dict]:
        """Mean and population standard deviation per (batch, step) cell."""
        cells: dict[tuple[int, int], list[ProtocolRow]] = {}
        for r in self.rows:
            cells.setdefault((r.batch, r.step), []).append(r)
        out = []
        for (batch, step), rows in sorted(cells.items()):
            entry = {
                "batch": batch,
                "step": step,
                "unknown_classes": rows[0].unknown_classes,
                "folds": len(rows),
            }
            for name in _METRICS:
                vals = np.array([getattr(r, name) for r in rows], dtype=np.float64)
                entry[f"{name}_mean"] = float(vals.mean())
                entry[f"{name}_std"] = float(vals.std())
            out.append(entry)
        return out

    def mean(self, metric: str) -> list[float]:
        return [cell[f"{metric}_mean"] for cell in self.aggregate()]

    def to_tsv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(ProtocolRow)]
        buf.write(f"# mode={self.mode}\n")
        buf.write("\t".join(names) + "\n")
        for r in self.rows:
            d = asdict(r)
            buf.write("\t".join(_fmt(d[n]) for n in names) + "\n")
        buf.write("\n# aggregate\n")
        agg = self.aggregate()
        if agg:
            keys = list(agg[0])
            buf.write("\t".join(keys) + "\n")
            for cell in agg:
                buf.write("\t".join(_fmt(cell[k]) for k in keys) + "\n")
        return buf.getvalue()


def _truths(labels: np.ndarray, known: Sequence[int]) -> np.ndarray:
    return np.where(np.isin(labels, list(known)), labels, UNKNOWN)


def run_open_set_protocol(
    train_data: Dataset,
    test_data: Dataset,
    folds: int,
    known_count: int,
    hyper: HyperParams,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
    seed: int = 0,
    *,
    steps: Sequence[int] | None = None,
    threads: int | None = None,
) -> ProtocolReport:
    """OLETTER-style evaluation.

    Each fold draws ``known_count`` training classes at random and a random
    order for the remaining classes. Step ``u`` tests on the known classes
    plus the first ``u`` unknown classes (nested across steps), with the
    rejection threshold set by :func:`dynamic_delta`. Every row also records
    the same model's scores with no rejection (``delta = 0``).
    """
    if train_data.dim != test_data.dim:
        raise DimensionMismatch(f"train dim {train_data.dim} != test dim {test_data.dim}")
    if folds < 1:
        raise InvalidParameter(f"folds must be >= 1, got {folds}")
    all_classes = np.array(sorted(set(train_data.classes) | set(test_data.classes)), dtype=np.int64)
    if not (2 <= known_count < len(all_classes)):
        raise InsufficientClasses(
            f"need 2 <= known_count < {len(all_classes)} classes, got known_count={known_count}"
        )
    n_unknown = len(all_classes) - known_count
    steps = list(range(n_unknown + 1)) if steps is None else sorted(int(s) for s in steps)
    if steps and (steps[0] < 0 or steps[-1] > n_unknown):
        raise InvalidParameter(f"steps must lie in [0, {n_unknown}]")
    seeds = np.random.SeedSequence(seed).spawn(folds)

    def run_fold(fold: int) -> list[ProtocolRow]:
        rng = np.random.default_rng(seeds[fold])
        perm = rng.permutation(all_classes)
        known = sorted(int(c) for c in perm[:known_count])
        unknown_order = [int(c) for c in perm[known_count:]]
        fit_on = train_data.select_classes(known)
        if len(fit_on.classes) < 2:
            raise InsufficientClasses(f"fold {fold}: fewer than two known classes have training data")
        model = train(fit_on, hyper, metric, threads=1)
        vr = vector_ratio(model, len(fit_on))
        needed = known + unknown_order[: steps[-1]] if steps else known
        test = test_data.select_classes(needed)
        proba = predict_proba(model, test.features, threads=1)
        truth = _truths(test.labels, known)
        rows = []
        for u in steps:
            mask = np.isin(test.labels, known + unknown_order[:u])
            cfg = OpennessConfig(known_count, known_count, known_count + u)
            delta = dynamic_delta(cfg)
            t = truth[mask]
            pred = decide(proba[mask], model.class_ids, delta)
            pred0 = decide(proba[mask], model.class_ids, 0.0)
            pairs, pairs0 = np.column_stack([t, pred]), np.column_stack([t, pred0])
            rows.append(
                ProtocolRow(
                    fold=fold,
                    batch=0,
                    step=u,
                    known_classes=known_count,
                    unknown_classes=u,
                    test_points=int(mask.sum()),
                    delta=delta,
                    f1=macro_f1(pairs, known),
                    accuracy=accuracy(pairs),
                    f1_delta0=macro_f1(pairs0, known),
                    accuracy_delta0=accuracy(pairs0),
                    vector_ratio=vr,
                    ev_count=model.ev_count,
                    point_count=len(fit_on),
                )
            )
        log.info("open-set fold %d done (%d EVs)", fold, model.ev_count)
        return rows

    per_fold = _map(run_fold, range(folds), threads)
    return ProtocolReport("openset", [r for rows in per_fold for r in rows])


def run_open_world_protocol(
    batches: Sequence[Dataset],
    tests: Sequence[Dataset],
    unknown_pools: Sequence[Dataset],
    hyper: HyperParams,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
    *,
    threads: int | None = None,
) -> ProtocolReport:
    """Train on ``batches[0]``, then alternate evaluation and updates.

    ``tests[b]`` holds test samples for the classes introduced by batch
    ``b``; after batch ``b`` the known test set is ``tests[0..b]``. Each
    unknown pool is evaluated alongside it in turn. A pool sample counts as
    unknown unless its class is already in the model. The rejection threshold
    is ``hyper.delta``.
    """
    if not batches:
        raise EmptyInput("open-world protocol needs at least one training batch")
    if len(tests) != len(batches):
        raise InvalidParameter(f"{len(batches)} batches but {len(tests)} test sets")
    dim = batches[0].dim
    for ds in list(batches) + list(tests) + list(unknown_pools):
        if ds.dim != dim:
            raise DimensionMismatch(f"dataset dim {ds.dim} differs from {dim}")

    rows = []
    model = train(batches[0], hyper, metric, threads=threads)
    seen = len(batches[0])
    known_test = tests[0]
    for b in range(len(batches)):
        if b > 0:
            model = update(model, batches[b], threads=threads)
            seen += len(batches[b])
            known_test = known_test.concat(tests[b])
        known = list(model.class_ids)
        vr = vector_ratio(model, seen)
        for p, pool in enumerate(unknown_pools):
            test = known_test.concat(pool)
            truth = _truths(test.labels, known)
            proba = predict_proba(model, test.features, threads=threads)
            pred = decide(proba, known, hyper.delta)
            pred0 = decide(proba, known, 0.0)
            pairs, pairs0 = np.column_stack([truth, pred]), np.column_stack([truth, pred0])
            n_unknown = len(set(pool.labels.tolist()) - set(known))
            rows.append(
                ProtocolRow(
                    fold=0,
                    batch=b,
                    step=p,
                    known_classes=len(known),
                    unknown_classes=n_unknown,
                    test_points=len(test),
                    delta=hyper.delta,
                    f1=macro_f1(pairs, known),
                    accuracy=accuracy(pairs),
                    f1_delta0=macro_f1(pairs0, known),
                    accuracy_delta0=accuracy(pairs0),
                    vector_ratio=vr,
                    ev_count=model.ev_count,
                    point_count=seen,
                )
            )
        log.info("open-world batch %d: %d EVs / %d points", b, model.ev_count, seen)
    return ProtocolReport("openworld", rows)


def cross_class_scores(
    data: Dataset,
    folds: int,
    candidates: Sequence[HyperParams],
    delta_grid: Sequence[float],
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
    seed: int = 0,
    *,
    threads: int | None = None,
) -> np.ndarray:
    """Mean fold F1 for every (candidate, delta) pair.

    Classes are shuffled and split into ``folds`` groups; fold ``f`` holds
    group ``f`` out as unknowns. Samples of the remaining classes are split
    2:1 into fitting and validation parts. Validation uses the fitting
    classes' held-back samples plus every sample of the held-out classes.
    """
    classes = np.array(data.classes, dtype=np.int64)
    if folds < 1:
        raise InvalidParameter(f"folds must be >= 1, got {folds}")
    if len(classes) < folds or len(classes) - int(np.ceil(len(classes) / folds)) < 2:
        raise InsufficientClasses(
            f"{len(classes)} classes cannot leave two known classes in each of {folds} folds"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    groups = np.array_split(rng.permutation(classes), folds)
    splits = []
    for held in groups:
        known = sorted(set(classes.tolist()) - set(held.tolist()))
        fit_idx, val_idx = [], []
        for c in known:
            idx = rng.permutation(np.flatnonzero(data.labels == c))
            n_fit = max(1, int(np.ceil(2 * len(idx) / 3)))
            fit_idx.extend(idx[:n_fit].tolist())
            val_idx.extend(idx[n_fit:].tolist())
        val_idx.extend(np.flatnonzero(np.isin(data.labels, held)).tolist())
        splits.append((known, np.sort(fit_idx), np.sort(val_idx)))

    grid = [float(d) for d in delta_grid]
    scores = np.zeros((len(candidates), len(grid)))
    for ci, hyper in enumerate(candidates):
        for known, fit_idx, val_idx in splits:
            model = train(data.subset(fit_idx), hyper, metric, threads=threads)
            val = data.subset(val_idx)
            proba = predict_proba(model, val.features, threads=threads)
            truth = _truths(val.labels, known)
            for di, delta in enumerate(grid):
                pred = decide(proba, model.class_ids, delta)
                scores[ci, di] += macro_f1(np.column_stack([truth, pred]), known)
    return scores / len(splits)


def cross_class_validate_delta(
    data: Dataset,
    folds: int,
    delta_grid: Sequence[float],
    hyper: HyperParams,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
    seed: int = 0,
    *,
    threads: int | None = None,
) -> float:
    """Grid value of delta with the best mean cross-class F1 (ties: smallest)."""
    grid = sorted(float(d) for d in delta_grid)
    if not grid:
        raise EmptyInput("delta grid is empty")
    if len(grid) == 1:
        return grid[0]
    scores = cross_class_scores(data, folds, [hyper], grid, metric, seed, threads=threads)[0]
    return grid[int(np.flatnonzero(scores == scores.max())[0])]


def cross_class_search(
    data: Dataset,
    folds: int,
    candidates: Sequence[HyperParams],
    delta_grid: Sequence[float] = DEFAULT_DELTA_GRID,
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN,
    seed: int = 0,
    *,
    threads: int | None = None,
) -> tuple[HyperParams, float]:
    """Best ``(tau, k, sigma)`` candidate and delta by cross-class F1.

    Ties resolve to the earliest candidate, then the smallest delta.
    """
    if not candidates:
        raise EmptyInput("no hyperparameter candidates")
    grid = sorted(float(d) for d in delta_grid)
    scores = cross_class_scores(data, folds, candidates, grid, metric, seed, threads=threads)
    ci, di = np.unravel_index(int(np.argmax(scores)), scores.shape)
    best = candidates[ci].replace(delta=grid[di])
    return best, float(scores[ci, di])
