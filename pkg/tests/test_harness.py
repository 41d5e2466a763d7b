import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evmachine.core import UNKNOWN, HyperParams
from evmachine.errors import CountMismatch, EmptyInput, InsufficientClasses, InvalidOpenness
from evmachine.evm import train
from evmachine.harness import (
    OpennessConfig,
    cross_class_validate_delta,
    dynamic_delta,
    macro_f1,
    run_open_set_protocol,
    run_open_world_protocol,
    vector_ratio,
)

from conftest import blobs, open_world_schedule

# 0.5 * (1 - sqrt(30/41)) evaluated with mpmath at 40 digits.
DELTA_15_15_26 = 0.07230053861584922


def test_dynamic_delta_examples():
    assert dynamic_delta(OpennessConfig(15, 15, 15)) == 0.0
    assert dynamic_delta(OpennessConfig(10, 10, 10)) == 0.0
    assert dynamic_delta(OpennessConfig(15, 15, 26)) == pytest.approx(DELTA_15_15_26, abs=1e-15)


@given(st.integers(1, 500))
def test_dynamic_delta_zero_iff_closed(c):
    assert dynamic_delta(OpennessConfig(c, c, c)) == 0.0
    assert dynamic_delta(OpennessConfig(c, c, c + 1)) > 0.0


def test_openness_validation():
    with pytest.raises(InvalidOpenness):
        OpennessConfig(3, 5, 5)
    with pytest.raises(InvalidOpenness):
        OpennessConfig(5, 5, 4)
    with pytest.raises(InvalidOpenness):
        dynamic_delta(OpennessConfig(10, 2, 3))


def test_macro_f1_examples():
    assert macro_f1([(0, 0), (1, 1), (2, 2)]) == 1.0
    assert macro_f1([(0, UNKNOWN), (1, UNKNOWN)]) == 0.0
    with pytest.raises(EmptyInput):
        macro_f1([])


def confusion_f1(pairs, classes):
    """Independent oracle: build the full confusion matrix, then read off P and R."""
    labels = sorted({t for t, _ in pairs} | {p for _, p in pairs} | set(classes))
    pos = {c: i for i, c in enumerate(labels)}
    C = np.zeros((len(labels), len(labels)), dtype=int)
    for t, p in pairs:
        C[pos[t], pos[p]] += 1
    f1s = []
    for c in classes:
        i = pos[c]
        tp = C[i, i]
        prec = tp / C[:, i].sum() if C[:, i].sum() else 0.0
        rec = tp / C[i, :].sum() if C[i, :].sum() else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(f1s))


def test_macro_f1_toy_table():
    pairs = [(0, 0), (0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, UNKNOWN), (UNKNOWN, 0), (UNKNOWN, UNKNOWN)]
    # class 0: P=2/3 R=2/3; class 1: P=1/2 R=1/2; class 2: P=1/2 R=1/2
    assert macro_f1(pairs, [0, 1, 2]) == pytest.approx((2 / 3 + 0.5 + 0.5) / 3)
    assert macro_f1(pairs, [0, 1, 2]) == pytest.approx(confusion_f1(pairs, [0, 1, 2]))


labels = st.sampled_from([UNKNOWN, 0, 1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(labels, labels), min_size=1, max_size=40), st.randoms())
def test_macro_f1_oracle_and_permutation(pairs, rnd):
    classes = [0, 1, 2, 3]
    ref = confusion_f1(pairs, classes)
    assert macro_f1(pairs, classes) == pytest.approx(ref, abs=1e-12)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    assert macro_f1(shuffled, classes) == pytest.approx(ref, abs=1e-12)
    assert 0.0 <= ref <= 1.0


def test_vector_ratio():
    assert vector_ratio(16309, 64817) == pytest.approx(0.2516, abs=5e-5)
    assert vector_ratio(74845, 255224) == pytest.approx(0.2933, abs=5e-5)
    assert vector_ratio(10, 10) == 1.0
    with pytest.raises(CountMismatch):
        vector_ratio(11, 10)


def test_vector_ratio_without_reduction_is_one(four_class_2d):
    model = train(four_class_2d, HyperParams(tau=20, sigma=1.0))
    assert vector_ratio(model, len(four_class_2d)) == 1.0


def separable(n_classes=6, seed=0):
    centers = [(10.0 * i, 0.0) for i in range(n_classes)]
    return blobs(centers, 20, 0.3, seed), blobs(centers, 10, 0.3, seed + 1)


def test_open_set_closed_step_is_perfect_on_separable_data():
    tr, te = separable()
    report = run_open_set_protocol(tr, te, folds=3, known_count=3, hyper=HyperParams(tau=20), seed=5)
    assert len(report.rows) == 3 * 4
    for r in report.rows:
        if r.unknown_classes == 0:
            assert r.f1 == pytest.approx(1.0) and r.delta == 0.0


def test_open_set_delta0_accuracy_never_rises():
    tr, te = separable()
    report = run_open_set_protocol(tr, te, folds=4, known_count=3, hyper=HyperParams(tau=20), seed=2)
    for fold in range(4):
        accs = [r.accuracy_delta0 for r in report.rows if r.fold == fold]
        assert all(a >= b - 1e-12 for a, b in zip(accs, accs[1:]))


def test_open_set_errors():
    tr, te = separable(3)
    with pytest.raises(InsufficientClasses):
        run_open_set_protocol(tr, te, folds=1, known_count=3, hyper=HyperParams(tau=20))


def test_open_world_single_batch_is_closed_set():
    tr, te = separable(3)
    report = run_open_world_protocol([tr], [te], [te.subset(slice(0, 0))], HyperParams(tau=20))
    (row,) = report.rows
    assert row.unknown_classes == 0 and row.accuracy == 1.0


def test_open_world_grid_shape_and_growth():
    batches, tests, pools = open_world_schedule(seed=1, n_train=30, n_test=10)
    report = run_open_world_protocol(batches, tests, pools, HyperParams(tau=30, sigma=0.5, delta=0.1))
    assert len(report.rows) == len(batches) * len(pools)
    per_batch = [r for r in report.rows if r.step == 0]
    points = [r.point_count for r in per_batch]
    assert points == sorted(points) and len(set(points)) == len(points)
    for r in report.rows:
        for name in ("f1", "accuracy", "vector_ratio", "f1_delta0", "accuracy_delta0"):
            assert 0.0 <= getattr(r, name) <= 1.0


def test_cross_class_validation():
    data = blobs([(0, 0), (8, 0), (0, 8), (8, 8), (40, 40), (-40, 40)], 20, 0.5, seed=3)
    hyper = HyperParams(tau=20)
    assert cross_class_validate_delta(data, 3, [0.2], hyper) == 0.2
    grid = [0.05, 0.1, 0.2, 0.3]
    chosen = cross_class_validate_delta(data, 3, grid, hyper, seed=1)
    assert chosen in grid
    assert cross_class_validate_delta(data, 3, grid[::-1], hyper, seed=1) == chosen
    assert cross_class_validate_delta(data, 3, grid, hyper, seed=1) == chosen


def test_cross_class_needs_enough_classes():
    data = blobs([(0, 0), (8, 0)], 10, 0.5, seed=3)
    with pytest.raises(InsufficientClasses):
        cross_class_validate_delta(data, 2, [0.1, 0.2], HyperParams(tau=5))


def test_report_tsv_layout():
    tr, te = separable(4)
    report = run_open_set_protocol(tr, te, folds=2, known_count=2, hyper=HyperParams(tau=10), seed=0)
    lines = report.to_tsv().splitlines()
    assert lines[0] == "# mode=openset"
    assert lines[1].split("\t")[:3] == ["fold", "batch", "step"]
    assert "# aggregate" in lines
    agg = report.aggregate()
    assert len(agg) == 3 and all(cell["folds"] == 2 for cell in agg)
    assert len(lines) == 2 + 2 * 3 + 2 + 1 + 3


@pytest.mark.parametrize("threads", [1, 3])
def test_open_set_report_independent_of_threads(threads):
    tr, te = separable(5)
    kw = dict(folds=3, known_count=3, hyper=HyperParams(tau=10), seed=9)
    assert run_open_set_protocol(tr, te, threads=threads, **kw).to_tsv() == run_open_set_protocol(
        tr, te, threads=1, **kw
    ).to_tsv()

