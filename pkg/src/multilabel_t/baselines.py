"""Anchor-point baselines applied to each class as its own binary problem.

Both estimators read transition rows off the noisy posterior at examples that
look most certainly negative or positive.  The dual variant splits the matrix
into an anchor factor (clean to predicted label) and a count factor
(predicted label to noisy label) estimated by counting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import TransitionMatrix2
from .errors import DegenerateIntermediate, NoAcceptedCandidate, ValidationError
from .estimator import (
    CandidateEstimate,
    ClassEstimate,
    EstimationReport,
    screen_candidate,
)

HARD_THRESHOLD = 0.5


@dataclass(frozen=True)
class AnchorConfig:
    mode: str = "max"
    percentile: float = 0.97

    def __post_init__(self):
        if self.mode not in ("max", "percentile"):
            raise ValidationError(f"anchor mode must be 'max' or 'percentile', got {self.mode!r}")
        if not (0.0 < self.percentile <= 1.0):
            raise ValidationError(f"percentile={self.percentile} outside (0, 1]")

    @property
    def label(self) -> str:
        return "max" if self.mode == "max" else f"{round(100 * self.percentile)}"


def _anchor_value(score, cfg: AnchorConfig) -> int:
    """Index of the anchor example for a score where larger means more certain."""
    if cfg.mode == "max" or cfg.percentile == 1.0:
        return int(np.argmax(score))
    # the example sitting at the requested quantile of the score
    target = np.quantile(score, cfg.percentile, method="higher")
    return int(np.flatnonzero(score == target)[0])


def anchor_rows(eta, cfg: AnchorConfig) -> np.ndarray:
    """Raw 2x2 matrix whose row c is the noisy posterior at the anchor of clean value c."""
    eta = np.asarray(eta, dtype=float)
    i0 = _anchor_value(1.0 - eta, cfg)
    i1 = _anchor_value(eta, cfg)
    return np.array([[1.0 - eta[i0], eta[i0]], [1.0 - eta[i1], eta[i1]]])


def _check_posteriors(post) -> np.ndarray:
    post = np.asarray(post, dtype=float)
    if post.ndim != 2:
        raise ValidationError("posteriors must be an (n, q) matrix")
    if not np.all((post >= 0.0) & (post <= 1.0)):
        raise ValidationError("posteriors must lie in [0, 1]")
    return post


def _finish(raw, j) -> CandidateEstimate:
    c = screen_candidate(None, raw, pair=(j, j))
    if c.accepted and not c.T_hat.satisfies_assumption1:
        c.reason = "flip rates sum to one; T is singular"
    return c


def count_factor(pred, noisy) -> np.ndarray:
    """P(noisy | predicted) as a 2x2 row-stochastic matrix."""
    pred = np.asarray(pred, dtype=np.int64)
    noisy = np.asarray(noisy, dtype=np.int64)
    counts = np.bincount(2 * pred + noisy, minlength=4).reshape(2, 2).astype(float)
    rows = counts.sum(axis=1)
    if np.any(rows == 0):
        raise DegenerateIntermediate("hard predictions take a single value")
    return counts / rows[:, None]


def t_estimator_candidates(posteriors, cfg: AnchorConfig) -> list[CandidateEstimate]:
    post = _check_posteriors(posteriors)
    return [_finish(anchor_rows(post[:, j], cfg), j) for j in range(post.shape[1])]


def dual_t_candidates(posteriors, noisy_labels, cfg: AnchorConfig) -> list[CandidateEstimate]:
    post = _check_posteriors(posteriors)
    y = np.asarray(noisy_labels)
    if y.shape != post.shape:
        raise ValidationError("posteriors and noisy labels differ in shape")
    out = []
    for j in range(post.shape[1]):
        pred = (post[:, j] > HARD_THRESHOLD).astype(np.int64)
        try:
            count = count_factor(pred, y[:, j])
        except DegenerateIntermediate as exc:
            raise DegenerateIntermediate(f"class {j}: {exc}") from None
        out.append(_finish(anchor_rows(post[:, j], cfg) @ count, j))
    return out


def _matrices(cands) -> list[TransitionMatrix2]:
    out = []
    for j, c in enumerate(cands):
        if not c.accepted:
            raise NoAcceptedCandidate(f"class {j}: {c.reason}")
        out.append(c.T_hat)
    return out


def t_estimator(posteriors, cfg: AnchorConfig = AnchorConfig()) -> list[TransitionMatrix2]:
    """Per-class anchor-point estimate from noisy posteriors (n, q)."""
    return _matrices(t_estimator_candidates(posteriors, cfg))


def dual_t_estimator(posteriors, noisy_labels,
                     cfg: AnchorConfig = AnchorConfig()) -> list[TransitionMatrix2]:
    """Anchor factor times count factor, per class.

    Hard intermediate labels come from thresholding the posterior at 0.5.
    """
    return _matrices(dual_t_candidates(posteriors, noisy_labels, cfg))


def baseline_report(method: str, posteriors, noisy_labels=None,
                    cfg: AnchorConfig = AnchorConfig()) -> EstimationReport:
    """Run a baseline and wrap it in the same report type as the main estimator."""
    if method == "t":
        cands = t_estimator_candidates(posteriors, cfg)
    elif method == "dual_t":
        cands = dual_t_candidates(posteriors, noisy_labels, cfg)
    else:
        raise ValidationError(f"unknown baseline {method!r}")
    classes = []
    for j, c in enumerate(cands):
        t = c.T_hat if c.accepted else None
        classes.append(ClassEstimate(j, [c], t, t, [], None if t else c.reason))
    meta = {"anchor_mode": cfg.mode, "percentile": cfg.percentile,
            "anchor_rule": "per-value posterior quantile, nearest sample at or above"}
    if method == "dual_t":
        meta["intermediate"] = f"posterior > {HARD_THRESHOLD}"
    return EstimationReport(classes, method=f"{method}_{cfg.label}", R=None, meta=meta)
