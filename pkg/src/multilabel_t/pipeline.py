"""Experiment configuration and the end-to-end pipeline.

The pipeline generates a dataset, injects noise, trains a warm-up classifier
on the noisy labels, selects likely-clean examples per class, estimates the
transition matrices and optionally trains a corrected classifier that is
scored on a noise-free held-out draw.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines, estimator, selection
from .datagen import (
    MultiLabelDataset,
    NoiseConfig,
    TransitionMatrix2,
    generate_clean_dataset,
    inject_class_dependent_noise,
    inject_pairwise_noise,
    make_noise_matrices,
    sample_like,
)
from .errors import DegenerateMixture, MultiLabelTError, ValidationError
from .evaluate import MetricsBundle, classification_metrics, estimation_error
from .model import PerLabelClassifier, TrainConfig, per_class_losses, posteriors, train
from .reweight import train_consistent

METHODS = ("ours", "ours_gold", "t_max", "t_97", "dual_t_max", "dual_t_97")
SELECTION_MODES = ("gmm", "gold", "biased")
TEST_SEED_OFFSET = 2000
NOISE_SEED_OFFSET = 1000


@dataclass(frozen=True)
class DatasetConfig:
    n: int = 10_000
    q: int = 10
    d: int = 20
    groups: int = 2
    sigma: float = 0.3
    seed: int = 0
    p_in: float = 0.6
    p_out: float = 0.02
    shared: float = 0.0
    test_n: int = 5_000


@dataclass(frozen=True)
class NoiseBlock:
    regime: str = "ULF"
    rho: float = 0.2
    n_a: float | None = None
    seed: int | None = None

    def to_noise_config(self) -> NoiseConfig:
        return NoiseConfig(self.regime, self.rho, self.n_a)


@dataclass(frozen=True)
class SelectionConfig:
    mode: str = "gmm"
    tau: float = 0.5
    bias_strength: float = 0.0
    subsample: float | None = None
    warmup_epochs: int = 20
    snapshot_epochs: int = 5
    min_noisy_loss: float | None = selection.NOISY_LOSS_FLOOR


@dataclass(frozen=True)
class EstimationConfig:
    R: int | None = None
    singular_floor: float = estimator.SINGULAR_FLOOR
    p_floor: float = estimator.P_FLOOR
    window_lo: float = estimator.SCREEN_WINDOW[0]
    window_hi: float = estimator.SCREEN_WINDOW[1]
    pairing: str = "correlation"
    temperature: float = 1.0
    anchor_percentile: float = 0.97


@dataclass(frozen=True)
class TrainingConfig:
    mode: str = "reweight"
    epochs: int = 20
    learning_rate: float = 0.5
    batch_size: int = 128


@dataclass(frozen=True)
class OutputConfig:
    path: str = "results"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    noise: NoiseBlock = field(default_factory=NoiseBlock)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    method: str = "ours"

    @property
    def noise_seed(self) -> int:
        s = self.noise.seed
        return self.dataset.seed + NOISE_SEED_OFFSET if s is None else s

    def warmup_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.selection.warmup_epochs,
                           batch_size=self.training.batch_size,
                           learning_rate=self.training.learning_rate,
                           seed=self.dataset.seed,
                           snapshot_epochs=self.selection.snapshot_epochs)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.training.epochs, batch_size=self.training.batch_size,
                           learning_rate=self.training.learning_rate, seed=self.dataset.seed,
                           loss_mode=self.training.mode)

    def validate(self) -> None:
        d = self.dataset
        for name in ("n", "q", "d", "groups", "test_n"):
            if getattr(d, name) < 1:
                raise ValidationError(f"dataset.{name} must be >= 1")
        if d.q < 2:
            raise ValidationError("dataset.q must be >= 2")
        if d.groups > d.q:
            raise ValidationError(f"dataset.groups={d.groups} exceeds dataset.q={d.q}")
        if d.sigma < 0:
            raise ValidationError("dataset.sigma must be >= 0")
        for name in ("p_in", "p_out", "shared"):
            if not 0.0 <= getattr(d, name) <= 1.0:
                raise ValidationError(f"dataset.{name} must lie in [0, 1]")
        self.noise.to_noise_config().validate(d.q, strict=True)
        s = self.selection
        if s.mode not in SELECTION_MODES:
            raise ValidationError(f"selection.mode must be one of {SELECTION_MODES}")
        if not 0.0 <= s.tau <= 1.0:
            raise ValidationError("selection.tau must lie in [0, 1]")
        if s.bias_strength < 0:
            raise ValidationError("selection.bias_strength must be >= 0")
        if s.subsample is not None and not 0.0 < s.subsample <= 1.0:
            raise ValidationError("selection.subsample must lie in (0, 1]")
        e = self.estimation
        if e.R is not None and not 1 <= e.R <= d.q - 1:
            raise ValidationError(f"estimation.R={e.R} must lie in [1, q-1={d.q - 1}]")
        if e.pairing not in ("correlation", "index"):
            raise ValidationError("estimation.pairing must be 'correlation' or 'index'")
        if e.window_lo >= e.window_hi:
            raise ValidationError("estimation.window_lo must be below estimation.window_hi")
        if not 0.0 < e.singular_floor < 1.0:
            raise ValidationError("estimation.singular_floor must lie in (0, 1)")
        if not 0.0 <= e.p_floor < 0.5:
            raise ValidationError("estimation.p_floor must lie in [0, 0.5)")
        if e.temperature <= 0:
            raise ValidationError("estimation.temperature must be > 0")
        if not 0.0 < e.anchor_percentile <= 1.0:
            raise ValidationError("estimation.anchor_percentile must lie in (0, 1]")
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        self.warmup_config().validate()
        self.train_config().validate()

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- INI loading

_SECTIONS = {
    "dataset": DatasetConfig, "noise": NoiseBlock, "selection": SelectionConfig,
    "estimation": EstimationConfig, "training": TrainingConfig, "output": OutputConfig,
}
_OPTIONAL_INT = {("estimation", "R"), ("noise", "seed")}
_OPTIONAL_FLOAT = {("noise", "n_a"), ("selection", "subsample"), ("selection", "min_noisy_loss")}


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        m = re.match(r"\s*([^=:#;\s]+)\s*[=:]", line)
        if m and current == section and m.group(1).lower() == key.lower():
            return no
    return None


def _convert(section, key, raw, default, where):
    if (section, key) in _OPTIONAL_INT | _OPTIONAL_FLOAT:
        if raw.strip().lower() in ("", "none", "auto"):
            return None
        conv = int if (section, key) in _OPTIONAL_INT else float
    elif isinstance(default, bool):
        conv = lambda s: s.strip().lower() in ("1", "true", "yes", "on")  # noqa: E731
    elif isinstance(default, int):
        conv = int
    elif isinstance(default, float):
        conv = float
    else:
        conv = str
    try:
        return conv(raw.strip())
    except ValueError:
        raise ValidationError(f"{where}{section}.{key}: cannot parse {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Build an ExperimentConfig from INI text; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ValidationError(f"{source}: {exc}") from None
    blocks = {}
    method = "ours"
    for section in cp.sections():
        if section == "experiment":
            for key, raw in cp[section].items():
                if key != "method":
                    line = _line_of(text, section, key)
                    raise ValidationError(f"{source}:{line}: unknown key experiment.{key}")
                method = raw.strip()
            continue
        if section not in _SECTIONS:
            raise ValidationError(f"{source}: unknown section [{section}]")
        cls = _SECTIONS[section]
        defaults = {f.name: f.default for f in fields(cls)}
        vals = {}
        for key, raw in cp[section].items():
            line = _line_of(text, section, key)
            where = f"{source}:{line}: "
            if key not in defaults:
                raise ValidationError(f"{where}unknown key {section}.{key}")
            vals[key] = _convert(section, key, raw, defaults[key], where)
        blocks[section] = cls(**vals)
    return ExperimentConfig(**blocks, method=method)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def with_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Apply ``{"section.key": value}`` overrides, converting strings as the INI loader does."""
    for dotted, value in overrides.items():
        if dotted == "method":
            cfg = replace(cfg, method=str(value))
            continue
        section, _, key = dotted.partition(".")
        if section not in _SECTIONS:
            raise ValidationError(f"override {dotted!r}: unknown section")
        block = getattr(cfg, section)
        defaults = {f.name: f.default for f in fields(block)}
        if key not in defaults:
            raise ValidationError(f"override {dotted!r}: unknown key")
        if isinstance(value, str):
            value = _convert(section, key, value, defaults[key], "override ")
        cfg = replace(cfg, **{section: replace(block, **{key: value})})
    return cfg


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "n":
        return with_overrides(cfg, {"dataset.n": int(value)})
    if axis == "R":
        return with_overrides(cfg, {"estimation.R": int(value)})
    if axis == "rho":
        return with_overrides(cfg, {"noise.rho": float(value)})
    if axis == "delta":
        return with_overrides(cfg, {"selection.mode": "biased",
                                    "selection.bias_strength": float(value)})
    if axis == "method":
        return with_overrides(cfg, {"method": str(value)})
    raise ValidationError(f"unknown sweep axis {axis!r}")


# ---------------------------------------------------------------- pipeline


def build_dataset(cfg: ExperimentConfig) -> MultiLabelDataset:
    d = cfg.dataset
    ds = generate_clean_dataset(d.n, d.q, d.d, d.groups, d.sigma, d.seed,
                                p_in=d.p_in, p_out=d.p_out, shared=d.shared)
    nc = cfg.noise.to_noise_config()
    if nc.regime == "PAIRWISE":
        return inject_pairwise_noise(ds, nc.rho, cfg.noise_seed)
    T = make_noise_matrices(nc, d.q)
    return inject_class_dependent_noise(ds, T, cfg.noise_seed, regime=nc.regime)


def heldout_split(ds: MultiLabelDataset, cfg: ExperimentConfig) -> MultiLabelDataset:
    """Noise-free held-out draw from the generator that produced ``ds``."""
    return sample_like(ds, cfg.dataset.test_n, ds.seed + TEST_SEED_OFFSET)


def warmup(ds: MultiLabelDataset, cfg: ExperimentConfig) -> PerLabelClassifier:
    return train(ds, cfg.warmup_config())


def select_all(ds, cfg: ExperimentConfig, mode: str | None = None,
               clf: PerLabelClassifier | None = None) -> list[selection.SelectionReport]:
    """Per-class selected sets under the configured (or given) selection mode.

    A class whose loss mixture cannot be fitted gets an empty selection, so
    its estimate fails and falls back to the identity.
    """
    mode = mode or cfg.selection.mode
    s = cfg.selection
    out = []
    for j in range(ds.q):
        if mode == "gold":
            out.append(selection.gold_select(ds, j, subsample=s.subsample, seed=ds.seed))
        elif mode == "biased":
            out.append(selection.biased_select(ds, j, s.bias_strength, seed=ds.seed,
                                               subsample=s.subsample or 0.5))
        else:
            if clf is None:
                clf = warmup(ds, cfg)
            losses = per_class_losses(clf, ds, j, average_snapshots=s.snapshot_epochs > 0)
            try:
                out.append(selection.gmm_select(losses, ds.noisy_labels, j, s.tau,
                                                clean=ds.clean_labels,
                                                min_noisy_loss=s.min_noisy_loss))
            except DegenerateMixture as exc:
                out.append(selection.make_report(ds.noisy_labels, ds.clean_labels,
                                                 np.empty(0, np.int64), j, "gmm", tau=s.tau,
                                                 error=f"DegenerateMixture: {exc}"))
    return out


def estimate(ds, cfg: ExperimentConfig, method: str | None = None,
             clf: PerLabelClassifier | None = None) -> tuple[estimator.EstimationReport, list]:
    """Run one estimator; returns the report and the selections used (if any)."""
    method = method or cfg.method
    e = cfg.estimation
    if method in ("ours", "ours_gold"):
        mode = "gold" if method == "ours_gold" else None
        sels = select_all(ds, cfg, mode=mode, clf=clf)
        rep = estimator.estimate_all(ds.noisy_labels, sels, R=e.R, pairing=e.pairing,
                                     singular_floor=e.singular_floor, p_floor=e.p_floor,
                                     window=(e.window_lo, e.window_hi))
        rep.method = method
        rep.meta.update(selection_mode=sels[0].mode if sels else None, tau=cfg.selection.tau,
                        mean_abs_delta=_mean_delta(sels),
                        selections=[s.to_dict() for s in sels])
        return rep, sels
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    if clf is None:
        clf = warmup(ds, cfg)
    post = posteriors(clf, ds.features, temperature=e.temperature)
    kind, _, anchor = method.rpartition("_")
    acfg = baselines.AnchorConfig("max") if anchor == "max" else \
        baselines.AnchorConfig("percentile", e.anchor_percentile)
    rep = baselines.baseline_report(kind, post, ds.noisy_labels, acfg)
    rep.method = method
    rep.meta["temperature"] = e.temperature
    return rep, []


def _mean_delta(sels) -> float:
    vals = [s.max_abs_delta for s in sels]
    vals = [v for v in vals if np.isfinite(v)]
    return float(np.mean(vals)) if vals else float("nan")


def train_and_score(ds, cfg: ExperimentConfig, T, mode: str | None = None,
                    test: MultiLabelDataset | None = None) -> MetricsBundle:
    """Train with the configured corrected loss and score on clean held-out data."""
    tcfg = cfg.train_config()
    mode = mode or tcfg.loss_mode
    clf = train_consistent(ds, T, mode, tcfg)
    test = heldout_split(ds, cfg) if test is None else test
    return classification_metrics(posteriors(clf, test.features), test.clean_labels)


@dataclass
class ExperimentResult:
    method: str
    report: estimator.EstimationReport
    errors: dict
    metrics: MetricsBundle | None = None
    mean_delta: float = float("nan")


def run_experiment(cfg: ExperimentConfig, method: str | None = None,
                   with_metrics: bool = False) -> ExperimentResult:
    """Generate data, estimate with ``method`` and (optionally) train and score."""
    cfg.validate()
    method = method or cfg.method
    ds = build_dataset(cfg)
    truth = ds.true_transitions
    rep, sels = estimate(ds, cfg, method)
    if rep.failed_classes and len(rep.failed_classes) == ds.q:
        raise estimator.NoAcceptedCandidate(f"{method}: every class failed")
    errors = {}
    if truth is not None:
        errors[method] = estimation_error(truth, rep.filled("medoid"))
        if method.startswith("ours"):
            errors[f"{method}_avg"] = estimation_error(truth, rep.filled("mean"))
    metrics = None
    if with_metrics:
        T_hat = rep.filled("medoid")
        metrics = train_and_score(ds, cfg, T_hat)
    return ExperimentResult(method, rep, errors, metrics, _mean_delta(sels) if sels else float("nan"))


def resolve_transitions(source, ds: MultiLabelDataset) -> list[TransitionMatrix2]:
    """Transition matrices from ``"true"`` (stored truth) or an estimation-report JSON path."""
    import json

    if source == "true":
        T = ds.true_transitions
        if T is None:
            raise ValidationError("dataset has no stored true transition matrices")
        return T
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"estimation report {path} not found")
    rep = json.loads(path.read_text())
    out = []
    for c in rep["classes"]:
        m = c.get("T_hat")
        out.append(TransitionMatrix2.identity() if m is None else TransitionMatrix2.from_matrix(m))
    if len(out) != ds.q:
        raise ValidationError(f"report has {len(out)} classes, dataset has {ds.q}")
    for j, t in enumerate(out):
        if not t.satisfies_assumption1:
            raise ValidationError(f"class {j}: loaded T violates rho_minus + rho_plus < 1")
    return out


__all__ = [
    "ExperimentConfig", "DatasetConfig", "NoiseBlock", "SelectionConfig", "EstimationConfig",
    "TrainingConfig", "OutputConfig", "METHODS", "parse_config", "load_config",
    "with_overrides", "apply_axis", "build_dataset", "heldout_split", "warmup", "select_all",
    "estimate", "train_and_score", "run_experiment", "ExperimentResult",
    "resolve_transitions", "MultiLabelTError",
]
