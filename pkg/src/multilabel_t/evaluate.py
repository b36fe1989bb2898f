"""Estimation error, multi-label classification metrics and seeded sweeps."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import TransitionMatrix2
from .errors import MultiLabelTError, ValidationError

SWEEP_AXES = ("n", "R", "delta", "rho", "method")
CSV_COLUMNS = ("axis_value", "seed", "method", "total_error", "map", "of1", "cf1", "runtime_ms")


def estimation_error(T_true: Sequence[TransitionMatrix2], T_hat: Sequence[TransitionMatrix2]) -> float:
    """Sum over classes of the entrywise L1 distance between 2x2 matrices."""
    if len(T_true) != len(T_hat):
        raise ValidationError(f"length mismatch: {len(T_true)} true vs {len(T_hat)} estimated")
    return float(sum(np.abs(a.matrix() - b.matrix()).sum() for a, b in zip(T_true, T_hat)))


@dataclass
class MetricsBundle:
    map: float
    of1: float
    cf1: float
    per_class_ap: np.ndarray
    skipped_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "map": self.map, "of1": self.of1, "cf1": self.cf1,
            "per_class_ap": [None if np.isnan(a) else float(a) for a in self.per_class_ap],
            "skipped_classes": self.skipped_classes,
            "ap_definition": "mean precision at positive ranks, ties by index",
        }


def average_precision(score, truth) -> float:
    """Mean of precision@k over the ranks k of the positives (no interpolation).

    Ranking is by descending score with ties broken by the original index.
    Returns NaN when there are no positives.
    """
    truth = np.asarray(truth).astype(bool)
    if not truth.any():
        return float("nan")
    order = np.argsort(-np.asarray(score, dtype=float), kind="stable")
    hits = truth[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def _ratio(a, b):
    return a / b if b > 0 else 0.0


def _f1(p, r):
    return _ratio(2 * p * r, p + r)


def classification_metrics(scores, truth, threshold: float = 0.5) -> MetricsBundle:
    """mAP, overall F1 and per-class F1 of ``scores`` (n, q) against ``truth``.

    A label is predicted when its score is strictly above ``threshold``.  OF1
    is the harmonic mean of pooled precision and recall; CF1 the harmonic
    mean of the class-averaged precision and recall.  Classes without
    positives are skipped for AP and reported.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(truth).astype(bool)
    if s.shape != y.shape or s.ndim != 2:
        raise ValidationError(f"scores {s.shape} and truth {y.shape} must be equal (n, q) shapes")
    q = s.shape[1]
    ap = np.array([average_precision(s[:, j], y[:, j]) for j in range(q)])
    skipped = [int(j) for j in np.flatnonzero(np.isnan(ap))]
    valid = ap[~np.isnan(ap)]
    pred = s > threshold
    tp = (pred & y).sum(axis=0).astype(float)
    n_pred = pred.sum(axis=0).astype(float)
    n_pos = y.sum(axis=0).astype(float)
    of1 = _f1(_ratio(tp.sum(), n_pred.sum()), _ratio(tp.sum(), n_pos.sum()))
    cp = np.mean([_ratio(a, b) for a, b in zip(tp, n_pred)])
    cr = np.mean([_ratio(a, b) for a, b in zip(tp, n_pos)])
    return MetricsBundle(
        map=float(valid.mean()) if valid.size else float("nan"),
        of1=float(of1), cf1=float(_f1(cp, cr)), per_class_ap=ap, skipped_classes=skipped,
    )


@dataclass
class SweepPoint:
    setting: object
    method: str
    mean: float
    std: float
    n_ok: int
    extra: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    axis: str
    points: list[SweepPoint]
    rows: list[dict]
    missing: list[dict] = field(default_factory=list)

    def means(self, method: str) -> list[float]:
        return [p.mean for p in self.points if p.method == method]

    def settings(self, method: str) -> list:
        return [p.setting for p in self.points if p.method == method]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in CSV_COLUMNS})

    def summary(self) -> dict:
        return {
            "axis": self.axis,
            "points": [{"setting": p.setting, "method": p.method, "mean_error": p.mean,
                        "std_error": p.std, "n_seeds": p.n_ok, **p.extra} for p in self.points],
            "missing": self.missing,
        }


def point_config(base, axis: str, value, seed: int):
    """Config for one (grid value, seed) pair; data and noise are reseeded."""
    from .pipeline import apply_axis

    cfg = apply_axis(base, axis, value)
    return replace(cfg, dataset=replace(cfg.dataset, seed=int(seed)))


def _run_point(args):
    from .pipeline import run_experiment

    base, axis, value, seed, methods, with_metrics = args
    cfg = point_config(base, axis, value, seed)
    out = []
    for method in methods:
        t0 = time.perf_counter()
        try:
            res = run_experiment(cfg, method, with_metrics=with_metrics)
        except MultiLabelTError as exc:
            out.append({"axis_value": value, "seed": seed, "method": method,
                        "error": f"{type(exc).__name__}: {exc}"})
            continue
        ms = round(1000 * (time.perf_counter() - t0), 3)
        for name, err in res.errors.items():
            row = {"axis_value": value, "seed": seed, "method": name,
                   "total_error": err, "map": "", "of1": "", "cf1": "", "runtime_ms": ms,
                   "delta": res.mean_delta}
            if res.metrics is not None and name == method:
                row.update(map=res.metrics.map, of1=res.metrics.of1, cf1=res.metrics.cf1)
            out.append(row)
    return out


def run_sweep(axis: str, grid, base_config, seeds, methods=None, workers: int = 1,
              with_metrics: bool = False, out_dir=None) -> SweepResult:
    """Run the pipeline at every grid value for every seed.

    ``methods`` defaults to the configured one.  Estimators that aggregate
    candidates also report their mean-aggregate error under ``<method>_avg``.
    Failing (value, seed, method) runs are listed in ``missing``.  Rows are
    ordered by grid index, then seed, regardless of ``workers``.
    """
    if axis not in SWEEP_AXES:
        raise ValidationError(f"sweep.axis must be one of {SWEEP_AXES}, got {axis!r}")
    grid = list(grid)
    seeds = list(seeds)
    if len(grid) < 1:
        raise ValidationError("sweep.grid must not be empty")
    if len(seeds) < 1:
        raise ValidationError("sweep.seeds must contain at least one seed")
    if axis != "method" and list(grid) != sorted(grid):
        raise ValidationError("sweep.grid must be sorted")
    if axis == "method":
        methods = [None]
    methods = list(methods or [base_config.method])
    base_config.validate()
    for v in grid:
        point_config(base_config, axis, v, seeds[0]).validate()

    jobs = []
    for v in grid:
        for s in seeds:
            m = [v] if axis == "method" else methods
            jobs.append((base_config, axis, v, s, m, with_metrics))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]

    rows, missing = [], []
    for chunk in results:
        for r in chunk:
            (missing if "error" in r else rows).append(r)
    points = []
    for v in grid:
        names = []
        for r in rows:
            if r["axis_value"] == v and r["method"] not in names:
                names.append(r["method"])
        for name in names:
            sel = [r for r in rows if r["axis_value"] == v and r["method"] == name]
            errs = np.array([r["total_error"] for r in sel], dtype=float)
            extra = {"mean_delta": float(np.nanmean([r["delta"] for r in sel]))
                     if any(np.isfinite(r["delta"]) for r in sel) else None}
            if with_metrics:
                cf1 = [r["cf1"] for r in sel if r["cf1"] != ""]
                if cf1:
                    extra["mean_cf1"] = float(np.mean(cf1))
            points.append(SweepPoint(v, name, float(errs.mean()), float(errs.std()), len(sel), extra))
    result = SweepResult(axis, points, rows, missing)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.write_csv(out / f"sweep_{axis}.csv")
        (out / f"sweep_{axis}.json").write_text(json.dumps(result.summary(), indent=2) + "\n")
    return result
