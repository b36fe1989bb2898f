"""Loss corrections that make training on noisy labels consistent with clean risk.

Three closed-form corrections are provided, all per class:

* reweight  - BCE on the noisy label scaled by P(clean=y|x) / P(noisy=y|x)
* forward   - BCE of the implied noisy posterior T^T g against the noisy label
* backward  - BCE against both label values mixed by the rows of T^-1
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .datagen import TransitionMatrix2
from .errors import ConditioningError, NumericalGuardError, ValidationError
from .model import TrainConfig, bce_with_logits, sigmoid, train

G_CLIP = 1e-7
DENOM_GUARD = 1e-12
INVERSE_FLOOR = 1e-3
MODES = ("reweight", "forward", "backward")


@dataclass(frozen=True)
class CorrectionMode:
    kind: str
    T: tuple[TransitionMatrix2, ...]

    def __post_init__(self):
        if self.kind not in MODES:
            raise ValidationError(f"unknown correction {self.kind!r}")
        for j, t in enumerate(self.T):
            if not t.satisfies_assumption1:
                raise ValidationError(f"class {j}: rho_minus + rho_plus >= 1, weights unbounded")


def weight_bound(T: Sequence[TransitionMatrix2]) -> float:
    """Upper bound U on every importance weight: 1 / min_j (1 - max(rho_-, rho_+))."""
    m = min(1.0 - max(t.rho_minus, t.rho_plus) for t in T)
    if m <= 0:
        return float("inf")
    return 1.0 / m


def _rates(T):
    rm = np.array([t.rho_minus for t in T], dtype=float)
    rp = np.array([t.rho_plus for t in T], dtype=float)
    return rm, rp


def importance_weights(g, y_bar, T) -> np.ndarray:
    """Vectorised P(clean=y|x) / P(noisy=y|x) for an (n, q) block of posteriors.

    No clipping happens here; callers that need bounded weights clip ``g``.
    """
    g = np.asarray(g, dtype=float)
    y = np.asarray(y_bar)
    rm, rp = _rates(T)
    num = np.where(y == 1, g, 1.0 - g)
    den = np.where(y == 1, rm * (1.0 - g) + (1.0 - rp) * g, (1.0 - rm) * (1.0 - g) + rp * g)
    if np.any(den < DENOM_GUARD):
        raise NumericalGuardError("noisy posterior below 1e-12 in the weight denominator")
    return num / den


def importance_weight(g: float, T: TransitionMatrix2, y_bar: int) -> float:
    return float(importance_weights(np.array([[g]]), np.array([[y_bar]]), [T])[0, 0])


def check_invertible(T, floor: float = INVERSE_FLOOR) -> None:
    for j, t in enumerate(T):
        if abs(1.0 - t.rho_minus - t.rho_plus) < floor:
            raise ConditioningError(
                f"class {j}: |1 - rho_- - rho_+| = {abs(1 - t.rho_minus - t.rho_plus):.3g} "
                f"below {floor}; T is not safely invertible"
            )


def backward_targets(T, y_bar) -> np.ndarray:
    """(T^-1)[y, 1] for each noisy label; rows of T^-1 sum to one."""
    check_invertible(T)
    rm, rp = _rates(T)
    det = 1.0 - rm - rp
    return np.where(np.asarray(y_bar) == 1, (1.0 - rm) / det, -rm / det)


def _log_terms(h, rm, rp):
    # log(rm e^-h + 1 - rp) and log(rp e^h + 1 - rm); both vanish exactly at T = I
    with np.errstate(divide="ignore"):
        lrm, lrp = np.log(rm), np.log(rp)
        l1rm, l1rp = np.log1p(-rm), np.log1p(-rp)
    a = np.logaddexp(lrm - h, l1rp)
    b = np.logaddexp(lrp + h, l1rm)
    return a, b, lrm, lrp


def per_example_losses(h, y, mode, T, weights=None):
    """(n, q) corrected losses and their derivatives w.r.t. the logits ``h``."""
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    if mode == "standard":
        return bce_with_logits(h, y), sigmoid(h) - y
    if mode == "reweight":
        if weights is None:
            g = np.clip(sigmoid(h), G_CLIP, 1.0 - G_CLIP)
            weights = importance_weights(g, y, T)
        return weights * bce_with_logits(h, y), weights * (sigmoid(h) - y)
    if mode == "forward":
        rm, rp = _rates(T)
        a, b, lrm, lrp = _log_terms(h, rm, rp)
        loss = bce_with_logits(h, y) - y * a - (1.0 - y) * b
        da = -np.exp(lrm - h - a)          # d a / d h
        db = np.exp(lrp + h - b)           # d b / d h
        grad = sigmoid(h) - y - y * da - (1.0 - y) * db
        return loss, grad
    if mode == "backward":
        t1 = backward_targets(T, y)
        return bce_with_logits(h, t1), sigmoid(h) - t1
    raise ValidationError(f"unknown loss mode {mode!r}")


def corrected_objective(h, y, mode, T, weights=None):
    """Batch mean of the summed corrected loss and its logit gradient."""
    loss, grad = per_example_losses(h, y, mode, T, weights)
    n = h.shape[0]
    return loss.sum() / n, grad / n


def corrected_loss(g, y_bar, mode: CorrectionMode | str, T=None) -> float:
    """Corrected loss of one example from its clean posteriors ``g`` (length q)."""
    if isinstance(mode, CorrectionMode):
        kind, T = mode.kind, mode.T
    else:
        kind = mode
    g = np.clip(np.asarray(g, dtype=float), G_CLIP, 1.0 - G_CLIP)
    h = np.log(g) - np.log1p(-g)
    loss, _ = per_example_losses(h[None, :], np.asarray(y_bar)[None, :], kind, T)
    return float(loss.sum())


def train_consistent(ds, T_hat, mode: str, cfg: TrainConfig):
    """Train with a corrected loss; ``mode='standard'`` ignores ``T_hat``."""
    if mode != "standard":
        CorrectionMode(mode, tuple(T_hat))
    return train(ds, replace(cfg, loss_mode=mode), T=None if mode == "standard" else T_hat)
