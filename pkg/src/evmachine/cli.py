"""Command-line interface.

Exit codes: 0 on success, 1 for data or fitting errors, 2 for usage errors.
Logs go to stderr; stdout carries only machine-readable output.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import io as evio
from .core import Dataset, DistanceMetric, EvmModel, HyperParams
from .errors import EVMError, InvalidParameter
from .evm import decide, default_threads, predict_proba, train, update
from .harness import (
    DEFAULT_DELTA_GRID,
    cross_class_validate_delta,
    run_open_set_protocol,
    run_open_world_protocol,
    vector_ratio,
)
from .psi import FitDiagnostics
from .reduce import reduce_model

log = logging.getLogger("evmachine")


class UsageError(Exception):
    pass


def _data_args(p):
    p.add_argument("--format", choices=("dense", "sparse"), default="dense",
                   help="dense CSV or sparse 'label idx:val' text (default: dense)")
    p.add_argument("--label-column", choices=("first", "last"), default="first",
                   help="label position in dense CSV rows (default: first)")


def _threads_arg(p):
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $EVM_THREADS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evm", description="Extreme Value Machine classifier")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model on labelled data")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=int, default=75)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--seed", type=int, default=0,
                   help="accepted for symmetry with 'protocol'; training has no random steps")
    _data_args(p)
    _threads_arg(p)

    p = sub.add_parser("predict", help="score query points")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--delta", type=float, default=None, help="override the stored threshold")
    _data_args(p)
    _threads_arg(p)

    p = sub.add_parser("update", help="add a batch of labelled data to a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _data_args(p)
    _threads_arg(p)

    p = sub.add_parser("reduce", help="shrink a model to an EV budget")
    p.add_argument("--model", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--per-class", action="store_true",
                   help="treat --budget as a per-class cap instead of a total")
    p.add_argument("--out", required=True)

    p = sub.add_parser("protocol", help="run an open-set or open-world evaluation")
    p.add_argument("--mode", choices=("openset", "openworld"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    _threads_arg(p)
    return parser


def _hyper(tau, k, sigma, delta) -> HyperParams:
    try:
        return HyperParams(tau=tau, k=k, sigma=sigma, delta=delta)
    except InvalidParameter as exc:
        raise UsageError(str(exc)) from None


def _label_map(model: EvmModel) -> dict[str, int]:
    return {model.name_of(c): c for c in model.class_ids}


def _print_counts(model: EvmModel, points: dict[int, int] | None, seen: int, out) -> None:
    out.write("label\tpoints\tevs\n")
    for cid in model.class_ids:
        n = points.get(cid, 0) if points is not None else ""
        out.write(f"{model.name_of(cid)}\t{n}\t{len(model.classes[cid])}\n")
    out.write(f"TOTAL\t{seen}\t{model.ev_count}\n")
    out.write(f"vector_ratio\t{vector_ratio(model, seen):.4f}\n")


def cmd_train(args, out) -> int:
    hyper = _hyper(args.tau, args.k, args.sigma, args.delta)
    data = evio.load_dataset(args.data, args.format, args.label_column)
    diag = FitDiagnostics()
    model = train(data, hyper, DistanceMetric.parse(args.metric), threads=args.threads, diagnostics=diag)
    evio.save_model(model, args.out)
    log.info("fits=%d degenerate=%d nonconverged=%d zero_margins=%d",
             diag.fits, diag.degenerate, diag.nonconverged, diag.zero_margins)
    counts = {c: int((data.labels == c).sum()) for c in data.classes}
    _print_counts(model, counts, len(data), out)
    return 0


def cmd_predict(args, out) -> int:
    model = evio.load_model(args.model)
    if args.delta is not None and not (0.0 <= args.delta < 1.0):
        raise UsageError(f"--delta must lie in [0, 1), got {args.delta}")
    data = evio.load_dataset(args.data, args.format, args.label_column, _label_map(model))
    delta = model.hyper.delta if args.delta is None else args.delta
    proba = predict_proba(model, data.features, threads=args.threads)
    evio.write_predictions(model, proba, decide(proba, model.class_ids, delta), out)
    return 0


def cmd_update(args, out) -> int:
    model = evio.load_model(args.model)
    batch = evio.load_dataset(args.data, args.format, args.label_column, _label_map(model))
    new = update(model, batch, threads=args.threads)
    evio.save_model(new, args.out)
    out.write("label\tevs\n")
    for cid in new.class_ids:
        out.write(f"{new.name_of(cid)}\t{len(new.classes[cid])}\n")
    out.write(f"TOTAL\t{new.ev_count}\n")
    return 0


def cmd_reduce(args, out) -> int:
    if args.budget < 1:
        raise UsageError("--budget must be at least 1")
    model = evio.load_model(args.model)
    reduced, sigmas = reduce_model(model, args.budget, per_class=args.per_class)
    evio.save_model(reduced, args.out)
    out.write("label\tevs\tsigma\n")
    for cid in reduced.class_ids:
        out.write(f"{reduced.name_of(cid)}\t{len(reduced.classes[cid])}\t{sigmas[cid]:.6f}\n")
    out.write(f"TOTAL\t{reduced.ev_count}\t\n")
    return 0


# ---- protocol config ----------------------------------------------------------


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        cfg[key.strip()] = value.strip()
    return cfg


class _Config:
    def __init__(self, path):
        self.path = Path(path)
        self.values = read_config(path)

    def get(self, key, default=None, cast=str):
        if key not in self.values:
            if default is None:
                raise UsageError(f"{self.path}: missing required key {key!r}")
            return default
        try:
            return cast(self.values[key])
        except ValueError:
            raise UsageError(f"{self.path}: bad value for {key!r}: {self.values[key]!r}") from None

    def path_list(self, key, required=True) -> list[Path]:
        raw = self.values.get(key, "")
        if not raw:
            if required:
                raise UsageError(f"{self.path}: missing required key {key!r}")
            return []
        return [self.path.parent / p.strip() for p in raw.split(",") if p.strip()]

    def floats(self, key, default):
        raw = self.values.get(key)
        if raw is None:
            return list(default)
        try:
            return [float(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"{self.path}: bad float list for {key!r}") from None

    def hyper(self) -> HyperParams:
        return _hyper(
            self.get("tau", 75, int),
            self.get("k", 4, int),
            self.get("sigma", 0.5, float),
            self.get("delta", 0.0, float),
        )


def _load_all(paths, fmt, label_column, names: dict[str, int]) -> list[Dataset]:
    out = []
    for p in paths:
        ds = evio.load_dataset(p, fmt, label_column, names)
        names.update({v: k for k, v in ds.label_names.items()})
        out.append(ds)
    return out


def cmd_protocol(args, out) -> int:
    cfg = _Config(args.config)
    fmt = cfg.get("format", "dense")
    label_column = cfg.get("label_column", "first")
    metric = DistanceMetric.parse(cfg.get("metric", "euclidean"))
    hyper = cfg.hyper()
    threads = args.threads if args.threads is not None else cfg.get("threads", default_threads(), int)
    names: dict[str, int] = {}

    if args.mode == "openset":
        if "test" in cfg.values:
            train_data, test_data = _load_all(
                cfg.path_list("train") + cfg.path_list("test"), fmt, label_column, names
            )
        else:
            (data,) = _load_all(cfg.path_list("data"), fmt, label_column, names)
            if "train_rows" not in cfg.values:
                raise UsageError(f"{cfg.path}: give either train/test paths or data + train_rows")
            split = cfg.get("train_rows", cast=int)
            if not (0 < split < len(data)):
                raise UsageError(f"train_rows must lie in (0, {len(data)})")
            train_data, test_data = data.subset(slice(0, split)), data.subset(slice(split, None))
        steps = None
        if "steps" in cfg.values:
            steps = [int(s) for s in cfg.values["steps"].split(",") if s.strip()]
        report = run_open_set_protocol(
            train_data,
            test_data,
            folds=cfg.get("folds", 20, int),
            known_count=cfg.get("known", 15, int),
            hyper=hyper,
            metric=metric,
            seed=cfg.get("seed", 0, int),
            steps=steps,
            threads=threads,
        )
    else:
        batches = _load_all(cfg.path_list("batches"), fmt, label_column, names)
        tests = _load_all(cfg.path_list("tests"), fmt, label_column, names)
        pools = _load_all(cfg.path_list("unknown", required=False), fmt, label_column, names)
        if not pools:
            pools = [Dataset.empty(batches[0].dim)]
        if "delta_grid" in cfg.values:
            delta = cross_class_validate_delta(
                batches[0],
                cfg.get("cv_folds", 3, int),
                cfg.floats("delta_grid", DEFAULT_DELTA_GRID),
                hyper,
                metric,
                cfg.get("seed", 0, int),
                threads=threads,
            )
            log.info("cross-class validation chose delta=%g", delta)
            hyper = hyper.replace(delta=delta)
        report = run_open_world_protocol(batches, tests, pools, hyper, metric, threads=threads)

    if args.out:
        with open(args.out, "w") as fh:
            evio.write_report(report, fh)
    else:
        evio.write_report(report, out)
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "update": cmd_update,
    "reduce": cmd_reduce,
    "protocol": cmd_protocol,
}


def main(argv=None, out=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = out or sys.stdout
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        parser.print_usage(sys.stderr)
        print("evm: error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"evm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (EVMError, OSError) as exc:
        print(f"evm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
