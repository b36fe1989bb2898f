"""Transition-matrix estimation from label co-occurrences.

For a target class j and a partner class i, the joint table of the two noisy
labels satisfies ``E = T^T P M`` where ``T`` is the flip matrix of class j,
``P = diag(1 - p, p)`` holds its clean prior and ``M`` is the conditional
table P(noisy_i | clean_j).  ``E`` is counted on all training examples and
``M`` on the examples selected as clean for class j, after which ``T`` and
``p`` follow in closed form.  Several partners give several candidates that
are combined by an L1 medoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datagen import TransitionMatrix2, conditional_gap
from .errors import (
    DegeneratePrior,
    EmptyStratum,
    NoAcceptedCandidate,
    NonInvertibleConditional,
    ValidationError,
)

SINGULAR_FLOOR = 0.05
P_FLOOR = 0.01
SCREEN_WINDOW = (-0.05, 1.05)
LOW_SUPPORT = 10


@dataclass(frozen=True)
class CooccurrenceTables:
    """Joint table ``E[k, v] = P(noisy_j=k, noisy_i=v)`` and conditional ``M[k, v]``.

    ``M[k, v] = P(noisy_i=v | clean_j=k)``.  Either table may be absent when
    only one was computed.
    """

    pair: tuple[int, int]
    E: np.ndarray | None = None
    M: np.ndarray | None = None
    counts: np.ndarray | None = None
    m_counts: np.ndarray | None = None
    low_support: bool = False


def _pair_counts(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return np.bincount(2 * a + b, minlength=4).reshape(2, 2)


def estimate_joint(noisy_labels, i: int, j: int) -> CooccurrenceTables:
    """Frequency estimate of the joint distribution of two noisy labels."""
    if i == j:
        raise ValidationError("partner class must differ from the target class")
    y = np.asarray(noisy_labels)
    if y.shape[0] < 1:
        raise ValidationError("need at least one example")
    counts = _pair_counts(y[:, j], y[:, i])
    return CooccurrenceTables(pair=(j, i), E=counts / y.shape[0], counts=counts)


def estimate_conditional(noisy_labels, selected, i: int, j: int) -> CooccurrenceTables:
    """Conditional table of noisy label i given label j on the selected set.

    ``selected`` is an index array or anything with a ``selected`` attribute;
    on that set the noisy label of class j is taken as its clean label.
    """
    if i == j:
        raise ValidationError("partner class must differ from the target class")
    idx = np.asarray(getattr(selected, "selected", selected), dtype=np.int64)
    y = np.asarray(noisy_labels)[idx]
    counts = _pair_counts(y[:, j], y[:, i])
    support = counts.sum(axis=1)
    if np.any(support == 0):
        k = int(np.flatnonzero(support == 0)[0])
        raise EmptyStratum(f"class {j}: no selected examples with label {k}")
    M = counts / support[:, None]
    return CooccurrenceTables(pair=(j, i), M=M, m_counts=counts,
                              low_support=bool(support.min() < LOW_SUPPORT))


def solve_bilinear(E, M, singular_floor: float = SINGULAR_FLOOR, p_floor: float = P_FLOOR):
    """Solve ``E M^-1 = T^T P`` for the prior ``p`` and the raw 2x2 ``T``."""
    E = np.asarray(E, dtype=float)
    M = np.asarray(M, dtype=float)
    rm_, rp_ = M[0, 1], M[1, 0]
    gap = 1.0 - rm_ - rp_
    if abs(gap) < singular_floor:
        raise NonInvertibleConditional(
            f"|1 - rho'_- - rho'_+| = {abs(gap):.3g} below floor {singular_floor}"
        )
    p = ((1.0 - rm_) - (E[0, 0] + E[1, 0])) / gap
    if not (p_floor <= p <= 1.0 - p_floor):
        raise DegeneratePrior(f"recovered prior {p:.4g} outside [{p_floor}, {1 - p_floor}]")
    # closed-form 2x2 inverse of a row-stochastic matrix
    m_inv = np.array([[1.0 - rp_, -rm_], [-rp_, 1.0 - rm_]]) / gap
    raw = (E @ m_inv / np.array([1.0 - p, p])[None, :]).T
    return float(p), raw


@dataclass
class CandidateEstimate:
    T_hat: TransitionMatrix2 | None
    p_hat: float | None
    raw_T: np.ndarray | None
    status: str
    reason: str | None = None
    pair: tuple[int, int] | None = None
    clipped: bool = False
    permuted: bool = False
    low_support: bool = False

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair) if self.pair else None,
            "status": self.status, "reason": self.reason,
            "T_hat": self.T_hat.to_list() if self.T_hat else None,
            "p_hat": self.p_hat,
            "raw_T": None if self.raw_T is None else np.asarray(self.raw_T).tolist(),
            "clipped": self.clipped, "permuted": self.permuted,
            "low_support": self.low_support,
        }


def screen_candidate(p_hat, raw_T, window=SCREEN_WINDOW, p_floor: float = P_FLOOR,
                     pair=None) -> CandidateEstimate:
    """Accept or reject a raw solution and project it to a valid matrix.

    Entries are clipped to [0, 1] and rows renormalised.  A matrix whose flip
    rates sum above one is row-swapped (relabelling the clean values) and the
    prior replaced by its complement.  ``p_hat=None`` skips the prior check.
    """
    raw = np.asarray(raw_T, dtype=float)
    lo, hi = window
    if not np.all(np.isfinite(raw)):
        return CandidateEstimate(None, p_hat, raw, "rejected", "non-finite entries", pair)
    if raw.min() < lo or raw.max() > hi:
        return CandidateEstimate(None, p_hat, raw, "rejected",
                                 f"entries outside [{lo}, {hi}]", pair)
    if p_hat is not None and not (p_floor <= p_hat <= 1.0 - p_floor):
        return CandidateEstimate(None, p_hat, raw, "rejected", "prior out of range", pair)
    clipped_m = np.clip(raw, 0.0, 1.0)
    clipped = bool(np.any(clipped_m != raw))
    sums = clipped_m.sum(axis=1)
    if np.any(sums <= 0):
        return CandidateEstimate(None, p_hat, raw, "rejected", "zero row after clipping", pair)
    rows = clipped_m / sums[:, None]
    t = TransitionMatrix2(float(rows[0, 1]), float(rows[1, 0]))
    permuted = False
    if t.rho_minus + t.rho_plus > 1.0:
        t = t.row_swapped()
        p_hat = None if p_hat is None else 1.0 - p_hat
        permuted = True
    return CandidateEstimate(t, p_hat, raw, "accepted", None, pair, clipped, permuted)


def l1_distance(a: TransitionMatrix2, b: TransitionMatrix2) -> float:
    return float(np.abs(a.matrix() - b.matrix()).sum())


def aggregate(candidates: Sequence[CandidateEstimate]) -> TransitionMatrix2:
    """L1 medoid of the accepted candidates; ties go to the lowest index."""
    acc = [c.T_hat for c in candidates if c.accepted]
    if not acc:
        raise NoAcceptedCandidate("no accepted candidate to aggregate")
    mats = np.stack([t.matrix() for t in acc])
    cost = np.abs(mats[:, None] - mats[None, :]).sum(axis=(2, 3)).sum(axis=1)
    return acc[int(np.argmin(cost))]


def aggregate_mean(candidates: Sequence[CandidateEstimate]) -> TransitionMatrix2:
    acc = [c.T_hat for c in candidates if c.accepted]
    if not acc:
        raise NoAcceptedCandidate("no accepted candidate to aggregate")
    return TransitionMatrix2(float(np.mean([t.rho_minus for t in acc])),
                             float(np.mean([t.rho_plus for t in acc])))


@dataclass
class ClassEstimate:
    j: int
    candidates: list[CandidateEstimate]
    medoid: TransitionMatrix2 | None
    mean: TransitionMatrix2 | None
    partners: list[int]
    error: str | None = None


@dataclass
class EstimationReport:
    classes: list[ClassEstimate]
    method: str = "ours"
    R: int | None = None
    fallback: str = "identity"
    meta: dict = field(default_factory=dict)

    @property
    def aggregated(self) -> list[TransitionMatrix2 | None]:
        return [c.medoid for c in self.classes]

    @property
    def aggregated_mean(self) -> list[TransitionMatrix2 | None]:
        return [c.mean for c in self.classes]

    @property
    def pairing_order(self) -> list[list[int]]:
        return [c.partners for c in self.classes]

    @property
    def failed_classes(self) -> list[int]:
        return [c.j for c in self.classes if c.medoid is None]

    def filled(self, which: str = "medoid") -> list[TransitionMatrix2]:
        """Per-class estimates with failed classes replaced by the identity."""
        src = self.aggregated if which == "medoid" else self.aggregated_mean
        return [t if t is not None else TransitionMatrix2.identity() for t in src]

    def to_dict(self, truth: list[TransitionMatrix2] | None = None) -> dict:
        out = {"method": self.method, "R": self.R, "fallback": self.fallback,
               "meta": self.meta, "classes": []}
        for c in self.classes:
            entry = {
                "class": c.j,
                "T_hat": c.medoid.to_list() if c.medoid else None,
                "T_hat_mean": c.mean.to_list() if c.mean else None,
                "p_hat": _medoid_prior(c),
                "partners": c.partners,
                "error": c.error,
                "candidates": [k.to_dict() for k in c.candidates],
                "rejections": [
                    {"pair": list(k.pair) if k.pair else None, "reason": k.reason}
                    for k in c.candidates if not k.accepted
                ],
            }
            if truth is not None:
                est = c.medoid or TransitionMatrix2.identity()
                entry["error_vs_truth"] = l1_distance(truth[c.j], est)
            out["classes"].append(entry)
        if truth is not None:
            out["error_vs_truth"] = sum(e["error_vs_truth"] for e in out["classes"])
            out["error_vs_truth_mean_aggregate"] = sum(
                l1_distance(t, e) for t, e in zip(truth, self.filled("mean"))
            )
        return out


def _medoid_prior(c: ClassEstimate):
    for k in c.candidates:
        if k.accepted and k.T_hat == c.medoid:
            return k.p_hat
    return None


def pairing_order(noisy_labels, j: int) -> list[int]:
    """Partners of class ``j`` by decreasing empirical label correlation."""
    gap = conditional_gap(noisy_labels)[j]
    q = gap.size
    cand = [i for i in range(q) if i != j]
    score = np.nan_to_num(gap[cand], nan=-1.0)
    order = np.argsort(-score, kind="stable")
    return [cand[k] for k in order]


def estimate_class(noisy_labels, selected, j: int, R: int, partners=None,
                   singular_floor=SINGULAR_FLOOR, p_floor=P_FLOOR,
                   window=SCREEN_WINDOW) -> ClassEstimate:
    """Collect up to ``R`` accepted candidates for class ``j`` and aggregate."""
    partners = pairing_order(noisy_labels, j) if partners is None else list(partners)
    cands: list[CandidateEstimate] = []
    used: list[int] = []
    n_acc = 0
    for i in partners:
        if n_acc >= R:
            break
        used.append(i)
        try:
            E = estimate_joint(noisy_labels, i, j).E
            mt = estimate_conditional(noisy_labels, selected, i, j)
            p, raw = solve_bilinear(E, mt.M, singular_floor, p_floor)
        except (NonInvertibleConditional, DegeneratePrior, EmptyStratum) as exc:
            cands.append(CandidateEstimate(None, None, None, "rejected", str(exc), (j, i)))
            continue
        c = screen_candidate(p, raw, window, p_floor, pair=(j, i))
        c.low_support = mt.low_support
        cands.append(c)
        n_acc += c.accepted
    try:
        return ClassEstimate(j, cands, aggregate(cands), aggregate_mean(cands), used)
    except NoAcceptedCandidate as exc:
        return ClassEstimate(j, cands, None, None, used, error=f"NoAcceptedCandidate: {exc}")


def estimate_all(noisy_labels, selections, R: int | None = None, pairing="correlation",
                 singular_floor=SINGULAR_FLOOR, p_floor=P_FLOOR,
                 window=SCREEN_WINDOW) -> EstimationReport:
    """Estimate every class's transition matrix.

    ``selections[j]`` is the selected set (report or index array) of class j.
    ``pairing`` is ``"correlation"`` (strongest noisy-label correlation first),
    ``"index"`` (ascending class index) or an explicit list of partner lists.
    """
    y = np.asarray(noisy_labels)
    q = y.shape[1]
    if len(selections) != q:
        raise ValidationError(f"expected {q} selections, got {len(selections)}")
    R = q - 1 if R is None else R
    if R < 1 or R > q - 1:
        raise ValidationError(f"R={R} must lie in [1, q-1={q - 1}]")
    classes = []
    for j in range(q):
        if pairing == "correlation":
            partners = None
        elif pairing == "index":
            partners = [i for i in range(q) if i != j]
        else:
            partners = pairing[j]
        classes.append(estimate_class(y, selections[j], j, R, partners,
                                      singular_floor, p_floor, window))
    return EstimationReport(classes, R=R)


def population_tables(T: TransitionMatrix2, p: float, M) -> np.ndarray:
    """Forward model ``E = T^T diag(1-p, p) M``."""
    return T.matrix().T @ np.diag([1.0 - p, p]) @ np.asarray(M, dtype=float)

