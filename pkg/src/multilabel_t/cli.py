"""Command-line entry point: generate, estimate, train, sweep, identifiability.

Exit codes: 0 success, 2 validation error, 3 pipeline failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import identifiability
from .datagen import load_dataset, save_dataset
from .errors import MultiLabelTError, ValidationError
from .evaluate import SWEEP_AXES, run_sweep
from .pipeline import (
    METHODS,
    ExperimentConfig,
    build_dataset,
    estimate,
    load_config,
    resolve_transitions,
    train_and_score,
    with_overrides,
)

EXIT_OK, EXIT_VALIDATION, EXIT_PIPELINE, EXIT_IO = 0, 2, 3, 4


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"--set expects section.key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return with_overrides(cfg, overrides)


def _for_dataset(cfg: ExperimentConfig, ds) -> ExperimentConfig:
    return replace(cfg, dataset=replace(cfg.dataset, n=ds.n, q=ds.q, d=ds.d, seed=ds.seed))


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def cmd_generate(args) -> int:
    cfg = _config(args)
    cfg.validate()
    ds = build_dataset(cfg)
    out = Path(args.out or cfg.output.path)
    save_dataset(ds, out, fmt=args.format)
    truth = ds.true_transitions
    _write_json({"transitions": [t.to_list() for t in truth] if truth else None,
                 "regime": cfg.noise.regime, "rho": cfg.noise.rho},
                out / "transitions.json")
    print(f"wrote {ds.n}x{ds.q} dataset to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.dataset)
    cfg = _for_dataset(replace(cfg, method=args.method), ds)
    cfg.validate()
    rep, _ = estimate(ds, cfg, args.method)
    _write_json(rep.to_dict(truth=ds.true_transitions), args.out)
    if len(rep.failed_classes) == ds.q:
        print("estimation failed for every class", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.dataset)
    cfg = _for_dataset(with_overrides(cfg, {"training.mode": args.mode}), ds)
    cfg.validate()
    if args.mode == "standard":
        T = None
    else:
        T = resolve_transitions(args.T, ds)
    m = train_and_score(ds, cfg, T, mode=args.mode)
    _write_json({"mode": args.mode, "T_source": None if T is None else args.T,
                 "test_n": cfg.dataset.test_n, **m.to_dict()}, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    grid = [float(g) if args.axis in ("rho", "delta") else (g if args.axis == "method" else int(g))
            for g in args.grid.split(",") if g.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()] if args.seeds else []
    if not seeds:
        raise ValidationError("sweep.seeds: at least one seed is required")
    methods = args.methods.split(",") if args.methods else None
    res = run_sweep(args.axis, grid, cfg, seeds, methods=methods, workers=args.workers,
                    with_metrics=args.metrics, out_dir=args.out or cfg.output.path)
    for p in res.points:
        print(f"{args.axis}={p.setting} {p.method}: {p.mean:.4f} +- {p.std:.4f} ({p.n_ok} seeds)")
    if not res.rows:
        return EXIT_PIPELINE
    return EXIT_OK


def _mat(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        raise ValidationError(f"expected 4 comma-separated entries, got {text!r}")
    return np.array(vals).reshape(2, 2)


def cmd_identifiability(args) -> int:
    T, M, p = _mat(args.T), _mat(args.M), args.p
    if not 0.0 < p < 1.0:
        raise ValidationError("p must lie in (0, 1)")
    if args.action == "witness":
        w = identifiability.construct_alternative(T, p, M, args.a_minus, args.b_minus)
        out = w.to_dict()
    else:
        E = T.T @ np.diag([1.0 - p, p]) @ M
        cert = identifiability.certify_unique_given_M(E, M, n_candidates=args.candidates,
                                                      seed=args.seed, m_known=not args.m_unknown)
        out = cert.to_dict()
    _write_json(out, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multilabel-t",
                                 description="Transition-matrix estimation for noisy multi-label data")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config field (repeatable)")

    g = sub.add_parser("generate", help="write a noisy synthetic dataset")
    common(g)
    g.add_argument("--out", help="dataset directory (default: output.path)")
    g.add_argument("--format", choices=("csv", "npy"), default="csv")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", help="estimate transition matrices for a dataset")
    common(e)
    e.add_argument("dataset")
    e.add_argument("--method", choices=METHODS, default="ours")
    e.add_argument("--out", default="-", help="report JSON path ('-' for stdout)")
    e.set_defaults(func=cmd_estimate)

    t = sub.add_parser("train", help="train with a corrected loss and score on clean held-out data")
    common(t)
    t.add_argument("dataset")
    t.add_argument("--T", default="true", help="'true' or an estimation report JSON")
    t.add_argument("--mode", choices=("standard", "reweight", "forward", "backward"),
                   default="reweight")
    t.add_argument("--out", default="-")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="run the pipeline over a grid of one axis")
    common(s)
    s.add_argument("--axis", choices=SWEEP_AXES, required=True)
    s.add_argument("--grid", required=True, help="comma-separated values")
    s.add_argument("--seeds", default="0,1,2,3,4")
    s.add_argument("--methods", help="comma-separated methods (default: config method)")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--metrics", action="store_true", help="also train and score a classifier")
    s.add_argument("--out", help="output directory (default: output.path)")
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("identifiability", help="non-uniqueness witness or uniqueness certificate")
    i.add_argument("action", choices=("witness", "certify"))
    i.add_argument("--T", default="0.8,0.2,0.2,0.8")
    i.add_argument("--M", default="0.9,0.1,0.3,0.7")
    i.add_argument("--p", type=float, default=0.5)
    i.add_argument("--a-minus", type=float, default=0.1)
    i.add_argument("--b-minus", type=float, default=0.1)
    i.add_argument("--candidates", type=int, default=10_000)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--m-unknown", action="store_true", help="treat M as unknown")
    i.add_argument("--out", default="-")
    i.set_defaults(func=cmd_identifiability)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MultiLabelTError as exc:
        print(f"pipeline failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
