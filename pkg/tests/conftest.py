import warnings
from pathlib import Path

import numpy as np
import pytest

from evmachine.core import Dataset
from evmachine.io import load_dense_csv

ROOT = Path(__file__).resolve().parents[1]
LETTER = ROOT / "data" / "letter-recognition.data"
LETTER_TRAIN_ROWS = 16000


@pytest.fixture(scope="session")
def letter():
    if not LETTER.exists():
        pytest.skip(f"Letter data not found at {LETTER}")
    return load_dense_csv(LETTER, "first")


@pytest.fixture(scope="session")
def letter_split(letter):
    return letter.subset(slice(0, LETTER_TRAIN_ROWS)), letter.subset(slice(LETTER_TRAIN_ROWS, None))


def blobs(centers, n_per, spread, seed, start_label=0):
    """Gaussian clusters, one class per center."""
    rng = np.random.default_rng(seed)
    X, y = [], []
    for i, c in enumerate(np.asarray(centers, dtype=float)):
        X.append(c + spread * rng.standard_normal((n_per, len(c))))
        y.append(np.full(n_per, start_label + i))
    return Dataset(np.vstack(X), np.concatenate(y))


@pytest.fixture
def four_class_2d():
    """Four separated 2-d clusters standing in for dots/diamonds/squares/stars."""
    return blobs([(0, 0), (6, 0), (0, 6), (6, 6)], 40, 0.8, seed=7)


@pytest.fixture(autouse=True)
def _quiet_zero_margin_warnings():
    from evmachine.errors import ZeroMarginWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroMarginWarning)
        yield


@pytest.fixture(scope="session")
def letter_full_model(letter_split):
    """Letter model with no reduction (every training point kept)."""
    from evmachine.core import HyperParams
    from evmachine.evm import train

    return train(letter_split[0], HyperParams(tau=75, k=4, sigma=1.0), "euclidean")


@pytest.fixture(scope="session")
def letter_reduced_model(letter_split):
    from evmachine.core import HyperParams
    from evmachine.evm import train

    return train(letter_split[0], HyperParams(tau=75, k=4, sigma=0.5), "euclidean")


def open_world_schedule(seed=0, n_batches=4, per_batch=5, n_train=60, n_test=20, dim=8, spread=2.5):
    """Overlapping Gaussian classes arriving in batches, plus pools of never-trained classes.

    Class centres are uniform in ``[-spread, spread]^dim`` with unit-variance
    noise, so neighbouring classes overlap and reduction has real work to do.
    Returns ``(batches, tests, unknown_pools)``; the pools hold 0, 2 and 4
    unseen classes.
    """
    rng = np.random.default_rng(seed)
    n_known = n_batches * per_batch
    centers = rng.uniform(-spread, spread, size=(n_known + 4, dim))

    def draw(ids, n):
        ids = list(ids)
        X = np.vstack([centers[c] + rng.standard_normal((n, dim)) for c in ids])
        return Dataset(X, np.repeat(ids, n))

    batches, tests = [], []
    for b in range(n_batches):
        ids = range(b * per_batch, (b + 1) * per_batch)
        batches.append(draw(ids, n_train))
        tests.append(draw(ids, n_test))
    pools = [Dataset.empty(dim), draw(range(n_known, n_known + 2), n_test), draw(range(n_known, n_known + 4), n_test)]
    return batches, tests, pools


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
