"""Domain types shared by the rest of the package.

All types are immutable once built. Arrays handed to a constructor are copied
and marked read-only, so instances can be shared freely between threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidParameter

#: Sentinel label for rejected queries. Valid class ids are non-negative.
UNKNOWN = -1


def _frozen_vector(values, what: str = "features") -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidParameter(f"{what} must be a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameter(f"{what} contains non-finite entries")
    arr.setflags(write=False)
    return arr


class DistanceMetric(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"

    @classmethod
    def parse(cls, value: "str | DistanceMetric") -> "DistanceMetric":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        if key in ("cosine-distance", "cos"):
            key = "cosine"
        try:
            return cls(key)
        except ValueError:
            raise InvalidParameter(
                f"unknown metric {value!r}; expected 'euclidean' or 'cosine'"
            ) from None


@dataclass(frozen=True, eq=False)
class Sample:
    features: np.ndarray
    label: int

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen_vector(self.features))
        if int(self.label) < 0:
            raise InvalidParameter(f"class labels must be non-negative, got {self.label}")
        object.__setattr__(self, "label", int(self.label))

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.features, other.features)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """A labelled feature matrix.

    Stored as an ``(n, dim)`` float array plus an ``(n,)``
    integer label array; iterating yields :class:`Sample` objects.
    ``label_names`` maps integer ids back to the strings they were interned
    from (empty when the data was generated in memory).
    """

    features: np.ndarray
    labels: np.ndarray
    label_names: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, copy=True)
        if X.ndim != 2:
            raise InvalidParameter(f"features must be a 2-d array, got shape {X.shape}")
        if X.shape[1] == 0:
            raise InvalidParameter("features must have at least one column")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise InvalidParameter(
                f"labels shape {y.shape} does not match {X.shape[0]} samples"
            )
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise InvalidParameter("labels must be integers")
        y = y.astype(np.int64)
        if y.size and y.min() < 0:
            raise InvalidParameter("class labels must be non-negative")
        if not np.all(np.isfinite(X)):
            raise InvalidParameter("features contain non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "label_names", dict(self.label_names))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], label_names=None) -> "Dataset":
        if not samples:
            raise InvalidParameter("cannot infer dimensionality from zero samples; use Dataset.empty")
        dims = {s.dim for s in samples}
        if len(dims) != 1:
            raise DimensionMismatch(f"samples have differing dimensionality {sorted(dims)}")
        X = np.stack([s.features for s in samples])
        y = np.array([s.label for s in samples], dtype=np.int64)
        return cls(X, y, label_names or {})

    @classmethod
    def empty(cls, dim: int, label_names=None) -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), label_names or {})

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def samples(self) -> list[Sample]:
        return list(self)

    @cached_property
    def classes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))

    def __len__(self) -> int:
        return self.features.shape[0]

    def __iter__(self) -> Iterator[Sample]:
        for x, y in zip(self.features, self.labels):
            yield Sample(x, int(y))

    def name_of(self, class_id: int) -> str:
        return self.label_names.get(class_id, str(class_id))

    def subset(self, mask_or_index) -> "Dataset":
        return Dataset(self.features[mask_or_index], self.labels[mask_or_index], self.label_names)

    def select_classes(self, class_ids) -> "Dataset":
        return self.subset(np.isin(self.labels, list(class_ids)))

    def concat(self, other: "Dataset") -> "Dataset":
        if other.dim != self.dim:
            raise DimensionMismatch(f"cannot concatenate dim {self.dim} with dim {other.dim}")
        names = dict(self.label_names)
        names.update(other.label_names)
        return Dataset(
            np.vstack([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
            names,
        )


@dataclass(frozen=True)
class HyperParams:
    """Tail size ``tau``, top-k averaging ``k``, coverage threshold ``sigma``
    and rejection threshold ``delta``."""

    tau: int = 75
    k: int = 4
    sigma: float = 0.5
    delta: float = 0.0

    def __post_init__(self):
        if isinstance(self.tau, bool) or int(self.tau) != self.tau or self.tau < 2:
            raise InvalidParameter(f"tau must be an integer >= 2, got {self.tau!r}")
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 1:
            raise InvalidParameter(f"k must be an integer >= 1, got {self.k!r}")
        if not (0.0 < self.sigma <= 1.0):
            raise InvalidParameter(f"sigma must lie in (0, 1], got {self.sigma!r}")
        if not (0.0 <= self.delta < 1.0):
            raise InvalidParameter(f"delta must lie in [0, 1), got {self.delta!r}")
        object.__setattr__(self, "tau", int(self.tau))
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "delta", float(self.delta))

    def replace(self, **changes) -> "HyperParams":
        values = dict(tau=self.tau, k=self.k, sigma=self.sigma, delta=self.delta)
        values.update(changes)
        return HyperParams(**values)


@dataclass(frozen=True, eq=False)
class PsiModel:
    """One extreme vector with its Weibull shape ``kappa`` and scale ``lam``."""

    ev: np.ndarray
    kappa: float
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "ev", _frozen_vector(self.ev, "ev"))
        for name in ("kappa", "lam"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise InvalidParameter(f"{name} must be finite and > 0, got {v!r}")
            object.__setattr__(self, name, v)

    def __eq__(self, other):
        if not isinstance(other, PsiModel):
            return NotImplemented
        return (
            self.kappa == other.kappa
            and self.lam == other.lam
            and np.array_equal(self.ev, other.ev)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class EvmModel:
    """Per-class extreme vectors plus everything needed to score a query."""

    classes: Mapping[int, tuple[PsiModel, ...]]
    metric: DistanceMetric
    hyper: HyperParams
    dim: int
    label_names: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "metric", DistanceMetric.parse(self.metric))
        if int(self.dim) < 1:
            raise InvalidParameter(f"dim must be positive, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        classes = {}
        for cid in sorted(self.classes):
            models = tuple(self.classes[cid])
            if int(cid) < 0:
                raise InvalidParameter(f"class ids must be non-negative, got {cid}")
            if not models:
                raise InvalidParameter(f"class {cid} has no extreme vectors")
            for m in models:
                if m.ev.shape[0] != self.dim:
                    raise DimensionMismatch(
                        f"class {cid} has an EV of length {m.ev.shape[0]}, model dim is {self.dim}"
                    )
            classes[int(cid)] = models
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "label_names", dict(self.label_names))

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(self.classes)

    @property
    def ev_count(self) -> int:
        return sum(len(v) for v in self.classes.values())

    def name_of(self, class_id: int) -> str:
        if class_id == UNKNOWN:
            return "UNKNOWN"
        return self.label_names.get(class_id, str(class_id))

    @cached_property
    def _stacked(self) -> dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        out = {}
        for cid, models in self.classes.items():
            evs = np.stack([m.ev for m in models])
            kappa = np.array([m.kappa for m in models])
            lam = np.array([m.lam for m in models])
            for a in (evs, kappa, lam):
                a.setflags(write=False)
            out[cid] = (evs, kappa, lam)
        return out

    def arrays(self, class_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(evs, kappas, lambdas)`` for one class as stacked arrays."""
        return self._stacked[class_id]

    def replace(self, **changes) -> "EvmModel":
        values = dict(
            classes=self.classes,
            metric=self.metric,
            hyper=self.hyper,
            dim=self.dim,
            label_names=self.label_names,
        )
        values.update(changes)
        return EvmModel(**values)

    def __eq__(self, other):
        if not isinstance(other, EvmModel):
            return NotImplemented
        return (
            self.metric == other.metric
            and self.hyper == other.hyper
            and self.dim == other.dim
            and self.label_names == other.label_names
            and self.classes.keys() == other.classes.keys()
            and all(
                len(self.classes[c]) == len(other.classes[c])
                and all(a == b for a, b in zip(self.classes[c], other.classes[c]))
                for c in self.classes
            )
        )

    __hash__ = None


@dataclass(frozen=True)
class Prediction:
    per_class: Mapping[int, float]
    label: int

    def __post_init__(self):
        for cid, p in self.per_class.items():
            if not (0.0 <= p <= 1.0):
                raise InvalidParameter(f"probability for class {cid} outside [0, 1]: {p!r}")
        if self.label != UNKNOWN and self.label not in self.per_class:
            raise InvalidParameter(f"label {self.label} is neither UNKNOWN nor a scored class")

    @property
    def is_unknown(self) -> bool:
        return self.label == UNKNOWN
