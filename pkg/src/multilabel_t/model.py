"""Per-label linear classifier with sigmoid outputs, trained by mini-batch SGD."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonFiniteLoss, ValidationError

LOGIT_CLIP = 30.0
LOSS_MODES = ("standard", "reweight", "forward", "backward")


def sigmoid(h):
    h = np.clip(h, -LOGIT_CLIP, LOGIT_CLIP)
    return 1.0 / (1.0 + np.exp(-h))


def softplus(h):
    return np.logaddexp(0.0, h)


def bce_with_logits(h, y):
    """Elementwise binary cross-entropy of sigmoid(h) against y, in the stable form."""
    h = np.asarray(h, dtype=float)
    return softplus(h) - y * h


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 0.5
    seed: int = 0
    loss_mode: str = "standard"
    snapshot_epochs: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValidationError("training.epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("training.batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("training.learning_rate must be > 0")
        if self.loss_mode not in LOSS_MODES:
            raise ValidationError(f"training.loss_mode: unknown mode {self.loss_mode!r}")
        if not (0 <= self.snapshot_epochs <= self.epochs):
            raise ValidationError("training.snapshot_epochs must lie in [0, epochs]")


@dataclass
class PerLabelClassifier:
    weights: np.ndarray
    biases: np.ndarray
    config: TrainConfig | None = None
    epoch_losses: list[float] = field(default_factory=list)
    # per-example per-class losses against the training labels, one (n, q) array per epoch
    loss_snapshots: list[np.ndarray] = field(default_factory=list, repr=False)

    @classmethod
    def zeros(cls, q: int, d: int) -> "PerLabelClassifier":
        return cls(np.zeros((q, d)), np.zeros(q))

    @property
    def q(self) -> int:
        return self.weights.shape[0]

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.weights.shape[1]:
            raise ValidationError(
                f"feature dimension {x.shape[-1]} does not match model ({self.weights.shape[1]})"
            )
        return x @ self.weights.T + self.biases

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "config": asdict(self.config) if self.config else None,
            "epoch_losses": self.epoch_losses,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "PerLabelClassifier":
        d = json.loads(Path(path).read_text())
        cfg = TrainConfig(**d["config"]) if d.get("config") else None
        return cls(np.asarray(d["weights"], dtype=float), np.asarray(d["biases"], dtype=float),
                   cfg, list(d.get("epoch_losses", [])))


def posteriors(clf: PerLabelClassifier, x, temperature: float = 1.0) -> np.ndarray:
    """Sigmoid outputs; ``temperature`` multiplies the logits before clipping."""
    return sigmoid(temperature * clf.logits(x))


def standard_objective(h, y):
    """Mean over examples of the summed per-label BCE, and its gradient w.r.t. the logits."""
    n = h.shape[0]
    loss = bce_with_logits(h, y).sum() / n
    return loss, (sigmoid(h) - y) / n


def objective(h, y, mode: str = "standard", T=None, weights=None):
    """Batch objective and logit gradient for any loss mode."""
    if mode == "standard":
        return standard_objective(h, y)
    from .reweight import corrected_objective

    return corrected_objective(h, y, mode, T, weights=weights)


def train(ds, cfg: TrainConfig, T=None, labels=None) -> PerLabelClassifier:
    """Fit the classifier on ``ds.features`` against the noisy labels.

    ``labels`` overrides the training targets (e.g. clean labels).  Corrected
    modes need the per-class transition matrices ``T``.
    """
    cfg.validate()
    if cfg.loss_mode != "standard" and T is None:
        raise ValidationError(f"loss_mode={cfg.loss_mode!r} needs transition matrices")
    x = np.asarray(ds.features, dtype=float)
    y = np.asarray(ds.noisy_labels if labels is None else labels, dtype=float)
    n, d = x.shape
    q = y.shape[1]
    if T is not None and len(T) != q:
        raise ValidationError(f"expected {q} transition matrices, got {len(T)}")
    if cfg.loss_mode == "backward":
        from .reweight import check_invertible

        check_invertible(T)
    clf = PerLabelClassifier.zeros(q, d)
    clf.config = cfg
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x[idx]
            h = xb @ clf.weights.T + clf.biases
            loss, gh = objective(h, y[idx], cfg.loss_mode, T)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}; learning rate {cfg.learning_rate} too high?"
                )
            total += loss * idx.size
            clf.weights -= cfg.learning_rate * gh.T @ xb
            clf.biases -= cfg.learning_rate * gh.sum(axis=0)
        clf.epoch_losses.append(total / n)
        if not np.isfinite(clf.weights).all():
            raise NonFiniteLoss(f"weights diverged at epoch {epoch}")
        if epoch >= cfg.epochs - cfg.snapshot_epochs:
            clf.loss_snapshots.append(bce_with_logits(clf.logits(x), y))
    return clf


def per_class_losses(clf: PerLabelClassifier, ds, j: int, use_noisy: bool = True,
                     average_snapshots: bool = False) -> np.ndarray:
    """Per-example BCE of class ``j``.

    With ``average_snapshots`` the losses recorded at the end of the last
    training epochs are averaged instead of using the final weights.
    """
    if not (0 <= j < clf.q):
        raise ValidationError(f"class index {j} out of range")
    if average_snapshots:
        if not clf.loss_snapshots:
            raise ValidationError("classifier has no stored loss snapshots")
        return np.mean([s[:, j] for s in clf.loss_snapshots], axis=0)
    labels = ds.noisy_labels if use_noisy else ds.clean_labels
    return bce_with_logits(clf.logits(ds.features)[:, j], np.asarray(labels[:, j], dtype=float))
