"""Dataset loaders, the binary model container and TSV writers.

Model file layout (all integers and floats little-endian)::

    magic       4 bytes   b"EVM" + version byte (b"1")
    metric      u32 length + UTF-8 name
    tau, k      u64, u64
    sigma       f64
    delta       f64
    dim         u64
    n_classes   u64
    class table n_classes x (i64 id, u32 length + UTF-8 name)
    per class   u64 ev_count, then ev_count x (dim f64 features, f64 kappa, f64 lambda)
"""

from __future__ import annotations

import csv
import math
import struct
from pathlib import Path
from typing import IO, Mapping

import numpy as np

from .core import UNKNOWN, Dataset, DistanceMetric, EvmModel, HyperParams, PsiModel
from .errors import (
    BadMagic,
    EmptyFile,
    MalformedEntry,
    NonAscendingIndices,
    NonNumericFeature,
    RaggedRows,
    TruncatedFile,
    VersionUnsupported,
)

MAGIC = b"EVM"
VERSION = b"1"


class _Interner:
    def __init__(self, existing: Mapping[str, int] | None = None):
        self.ids = dict(existing or {})
        self._next = max(self.ids.values(), default=-1) + 1

    def __call__(self, name: str) -> int:
        if name not in self.ids:
            self.ids[name] = self._next
            self._next += 1
        return self.ids[name]

    @property
    def names(self) -> dict[int, str]:
        return {i: n for n, i in self.ids.items()}


def _parse_float(token: str, path, lineno: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise NonNumericFeature(f"{path}:{lineno}: non-numeric feature {token!r}") from None
    if not math.isfinite(v):
        raise NonNumericFeature(f"{path}:{lineno}: non-finite feature {token!r}")
    return v


def load_dense_csv(
    path,
    label_column: str = "first",
    *,
    label_map: Mapping[str, int] | None = None,
    delimiter: str = ",",
) -> Dataset:
    """Read a delimited file with one label column and numeric features.

    Labels are interned to integer ids in order of first appearance. Passing
    ``label_map`` (name -> id) seeds the interning so ids agree with an
    existing model.
    """
    if label_column not in ("first", "last"):
        raise ValueError(f"label_column must be 'first' or 'last', got {label_column!r}")
    intern = _Interner(label_map)
    X, y = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            row = [t.strip() for t in row]
            if not row or all(t == "" for t in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise RaggedRows(f"{path}:{lineno}: need a label and at least one feature")
            elif len(row) != width:
                raise RaggedRows(f"{path}:{lineno}: expected {width} fields, found {len(row)}")
            if label_column == "first":
                label, feats = row[0], row[1:]
            else:
                label, feats = row[-1], row[:-1]
            X.append([_parse_float(t, path, lineno) for t in feats])
            y.append(intern(label))
    if not X:
        raise EmptyFile(f"{path}: no data rows")
    return Dataset(np.array(X), np.array(y, dtype=np.int64), intern.names)


def load_sparse(path, *, label_map: Mapping[str, int] | None = None, dim: int | None = None) -> Dataset:
    """Read ``label idx:val ...`` lines (1-based, strictly ascending indices)."""
    intern = _Interner(label_map)
    rows: list[tuple[list[int], list[float]]] = []
    labels = []
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            idxs, vals = [], []
            for tok in parts[1:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise MalformedEntry(f"{path}:{lineno}: entry {tok!r} is not idx:val")
                try:
                    i = int(key)
                except ValueError:
                    raise MalformedEntry(f"{path}:{lineno}: bad index in {tok!r}") from None
                if i < 1:
                    raise MalformedEntry(f"{path}:{lineno}: indices are 1-based, got {i}")
                if i in idxs:
                    raise MalformedEntry(f"{path}:{lineno}: duplicate index {i}")
                if idxs and i < idxs[-1]:
                    raise NonAscendingIndices(f"{path}:{lineno}: index {i} follows {idxs[-1]}")
                idxs.append(i)
                vals.append(_parse_float(val, path, lineno))
            if idxs:
                max_idx = max(max_idx, idxs[-1])
            rows.append((idxs, vals))
            labels.append(intern(parts[0]))
    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    if dim is None:
        dim = max_idx
    elif dim < max_idx:
        raise MalformedEntry(f"{path}: index {max_idx} exceeds requested dim {dim}")
    if dim < 1:
        raise MalformedEntry(f"{path}: no features present")
    X = np.zeros((len(rows), dim))
    for r, (idxs, vals) in enumerate(rows):
        X[r, np.array(idxs, dtype=np.int64) - 1] = vals
    return Dataset(X, np.array(labels, dtype=np.int64), intern.names)


def save_sparse(data: Dataset, path) -> None:
    with open(path, "w") as fh:
        for x, y in zip(data.features, data.labels):
            entries = " ".join(f"{i + 1}:{float(x[i])!r}" for i in np.flatnonzero(x))
            fh.write(f"{data.name_of(int(y))} {entries}".rstrip() + "\n")


def save_dense_csv(data: Dataset, path, label_column: str = "first") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for x, y in zip(data.features, data.labels):
            feats = [repr(float(v)) for v in x]
            name = data.name_of(int(y))
            w.writerow([name] + feats if label_column == "first" else feats + [name])


def load_dataset(path, fmt: str = "dense", label_column: str = "first", label_map=None) -> Dataset:
    if fmt == "sparse":
        return load_sparse(path, label_map=label_map)
    if fmt == "dense":
        return load_dense_csv(path, label_column, label_map=label_map)
    raise ValueError(f"unknown data format {fmt!r}")


# ---- binary model container ------------------------------------------------


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def model_to_bytes(model: EvmModel) -> bytes:
    h = model.hyper
    ids = model.class_ids
    parts = [
        MAGIC + VERSION,
        _pack_str(model.metric.value),
        struct.pack("<QQdd", h.tau, h.k, h.sigma, h.delta),
        struct.pack("<QQ", model.dim, len(ids)),
    ]
    for cid in ids:
        parts.append(struct.pack("<q", cid) + _pack_str(model.name_of(cid)))
    for cid in ids:
        evs, kappa, lam = model.arrays(cid)
        parts.append(struct.pack("<Q", len(kappa)))
        recs = np.column_stack([evs, kappa, lam]).astype("<f8")
        parts.append(recs.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"model file ends at byte {len(self.buf)}, needed {self.pos + n}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedEntry(f"bad UTF-8 string in model file: {exc}") from None


def model_from_bytes(buf: bytes) -> EvmModel:
    r = _Reader(buf)
    head = r.take(4)
    if head[:3] != MAGIC:
        raise BadMagic(f"not an EVM model file (magic {head!r})")
    if head[3:] != VERSION:
        raise VersionUnsupported(f"model file version {head[3:]!r} is not supported")
    metric = DistanceMetric.parse(r.string())
    tau, k, sigma, delta = r.unpack("<QQdd")
    dim, n_classes = r.unpack("<QQ")
    ids, names = [], {}
    for _ in range(n_classes):
        (cid,) = r.unpack("<q")
        ids.append(cid)
        names[cid] = r.string()
    classes = {}
    width = dim + 2
    for cid in ids:
        (count,) = r.unpack("<Q")
        recs = np.frombuffer(r.take(8 * width * count), dtype="<f8").reshape(count, width)
        classes[cid] = [PsiModel(rec[:dim], rec[dim], rec[dim + 1]) for rec in recs]
    if r.pos != len(buf):
        raise MalformedEntry(f"{len(buf) - r.pos} trailing bytes after model data")
    return EvmModel(classes, metric, HyperParams(tau, k, sigma, delta), dim, names)


def save_model(model: EvmModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> EvmModel:
    return model_from_bytes(Path(path).read_bytes())


# ---- reports ------------------------------------------------------------------


def write_predictions(model: EvmModel, proba: np.ndarray, labels: np.ndarray, out: IO[str]) -> None:
    """TSV with one row per query: index, label name, then class probabilities."""
    names = [model.name_of(c) for c in model.class_ids]
    out.write("\t".join(["row", "label"] + names) + "\n")
    for i, (p, lab) in enumerate(zip(proba, labels)):
        name = "UNKNOWN" if lab == UNKNOWN else model.name_of(int(lab))
        out.write("\t".join([str(i), name] + [f"{v:.6f}" for v in p]) + "\n")


def write_report(report, out: IO[str]) -> None:
    out.write(report.to_tsv())
