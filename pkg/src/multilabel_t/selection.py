"""Per-class selection of likely-clean examples.

Learned selection fits a two-component 1-D Gaussian mixture to per-example
losses and keeps the examples that the low-loss component claims.  Gold and
biased selections use the clean labels and exist for controlled experiments
on selection bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datagen import MultiLabelDataset, class_rng
from .errors import DegenerateMixture, EmptyStratum, ValidationError

VARIANCE_FLOOR = 1e-8
MEAN_TIE = 1e-6
# BCE loss of a 0.5 prediction; a high-loss component whose mean sits below
# it is made of hard but correctly labelled examples
NOISY_LOSS_FLOOR = float(np.log(2.0))
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Gmm2:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood_trace: np.ndarray
    converged: bool = True

    @property
    def n_iter(self) -> int:
        return len(self.log_likelihood_trace)

    @property
    def clean_component(self) -> int:
        return int(np.argmin(self.means))

    def _log_joint(self, x):
        x = np.asarray(x, dtype=float)[:, None]
        return (np.log(self.weights)[None, :]
                - 0.5 * (_LOG_2PI + np.log(self.variances)[None, :])
                - 0.5 * (x - self.means[None, :]) ** 2 / self.variances[None, :])

    def responsibilities(self, x) -> np.ndarray:
        lj = self._log_joint(x)
        lj -= lj.max(axis=1, keepdims=True)
        r = np.exp(lj)
        return r / r.sum(axis=1, keepdims=True)

    def clean_posterior(self, x) -> np.ndarray:
        """Posterior membership of the lower-mean component."""
        if abs(self.means[0] - self.means[1]) < MEAN_TIE:
            raise DegenerateMixture("component means coincide; clean component is ambiguous")
        return self.responsibilities(x)[:, self.clean_component]

    def log_likelihood(self, x) -> float:
        lj = self._log_joint(x)
        m = lj.max(axis=1)
        return float(np.sum(m + np.log(np.exp(lj - m[:, None]).sum(axis=1))))


def fit_gmm_1d(losses, max_iter: int = 200, tol: float = 1e-8) -> Gmm2:
    """EM for a two-component Gaussian mixture on a 1-D sample.

    Means start at the 25th and 75th percentiles, variances at the pooled
    sample variance and weights at one half.  ``tol`` is applied to the change
    in mean per-sample log-likelihood.
    """
    x = np.asarray(losses, dtype=float).ravel()
    if x.size < 4:
        raise DegenerateMixture(f"need at least 4 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DegenerateMixture("losses contain non-finite values")
    var = x.var()
    if var <= VARIANCE_FLOOR:
        raise DegenerateMixture("all samples (nearly) equal")

    means = np.quantile(x, [0.25, 0.75])
    if means[1] - means[0] < MEAN_TIE:
        # heavily tied sample; split at the median instead
        med = np.median(x)
        lo, hi = x[x <= med], x[x > med]
        if hi.size == 0:
            lo, hi = x[x < med], x[x >= med]
        means = np.array([lo.mean(), hi.mean()])
    gmm = Gmm2(np.array([0.5, 0.5]), means, np.array([var, var]), np.empty(0))
    trace = []
    converged = False
    n = x.size
    for _ in range(max_iter):
        ll = gmm.log_likelihood(x)
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) / n < tol:
            converged = True
            break
        r = gmm.responsibilities(x)
        nk = r.sum(axis=0)
        if np.any(nk <= 0):
            raise DegenerateMixture("a component lost all its mass")
        means = (r * x[:, None]).sum(axis=0) / nk
        variances = (r * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / nk
        if np.any(variances < VARIANCE_FLOOR):
            raise DegenerateMixture(
                f"component variance collapsed below {VARIANCE_FLOOR:g}: {variances}"
            )
        gmm = Gmm2(nk / n, means, variances, np.empty(0))
    return Gmm2(gmm.weights, gmm.means, gmm.variances, np.asarray(trace), converged)


def select_clean(losses, gmm: Gmm2, tau: float = 0.5) -> np.ndarray:
    """Sorted indices whose clean-component posterior is at least ``tau``."""
    if not (0.0 <= tau <= 1.0):
        raise ValidationError(f"tau={tau} outside [0, 1]")
    post = gmm.clean_posterior(losses)
    return np.flatnonzero(post >= tau)


@dataclass
class SelectionReport:
    """Selected set for one class together with its measured bias.

    ``delta0[i]``/``delta1[i]`` compare, for partner class i, the selected-set
    conditionals P(noisy_i=1 | y_j=0) and P(noisy_i=0 | y_j=1) against the
    same quantities on the full population with clean labels; they are NaN
    when clean labels are unknown.
    """

    j: int
    selected: np.ndarray
    lambda0: float
    lambda1: float
    delta0: np.ndarray
    delta1: np.ndarray
    mode: str
    tau: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def realized_delta0(self) -> float:
        return _max_abs(self.delta0)

    @property
    def realized_delta1(self) -> float:
        return _max_abs(self.delta1)

    @property
    def max_abs_delta(self) -> float:
        return max(abs(self.realized_delta0), abs(self.realized_delta1))

    @property
    def mean_abs_delta(self) -> float:
        vals = np.concatenate([self.delta0, self.delta1])
        vals = vals[np.isfinite(vals)]
        return float(np.abs(vals).mean()) if vals.size else float("nan")

    def to_dict(self) -> dict:
        return {
            "class": self.j, "mode": self.mode, "tau": self.tau,
            "n_selected": int(self.selected.size),
            "lambda0": self.lambda0, "lambda1": self.lambda1,
            "realized_delta0": self.realized_delta0,
            "realized_delta1": self.realized_delta1,
            **self.extra,
        }


def _max_abs(v) -> float:
    v = np.asarray(v, dtype=float)
    ok = np.isfinite(v)
    if not ok.any():
        return float("nan")
    k = np.flatnonzero(ok)[np.argmax(np.abs(v[ok]))]
    return float(v[k])


def selection_deltas(noisy, clean, selected, j):
    """Measured selection bias of a selected set for class ``j`` (see SelectionReport)."""
    noisy = np.asarray(noisy)
    q = noisy.shape[1]
    d0 = np.full(q, np.nan)
    d1 = np.full(q, np.nan)
    if clean is None:
        return d0, d1
    clean = np.asarray(clean)
    sel = np.asarray(selected)
    yj_sel = noisy[sel, j]
    pop0, pop1 = clean[:, j] == 0, clean[:, j] == 1
    s0, s1 = yj_sel == 0, yj_sel == 1
    if not (pop0.any() and pop1.any() and s0.any() and s1.any()):
        return d0, d1
    ref1_given0 = noisy[pop0].mean(axis=0)
    ref0_given1 = 1.0 - noisy[pop1].mean(axis=0)
    sub = noisy[sel]
    d0[:] = sub[s0].mean(axis=0) - ref1_given0
    d1[:] = (1.0 - sub[s1].mean(axis=0)) - ref0_given1
    d0[j] = d1[j] = np.nan
    return d0, d1


def make_report(noisy, clean, selected, j, mode, tau=None, **extra) -> SelectionReport:
    noisy = np.asarray(noisy)
    n = noisy.shape[0]
    selected = np.sort(np.asarray(selected, dtype=np.int64))
    yj = noisy[selected, j]
    d0, d1 = selection_deltas(noisy, clean, selected, j)
    return SelectionReport(
        j=j, selected=selected,
        lambda0=float(np.sum(yj == 0)) / n, lambda1=float(np.sum(yj == 1)) / n,
        delta0=d0, delta1=d1, mode=mode, tau=tau, extra=extra,
    )


def gmm_select(losses, noisy, j, tau=0.5, clean=None, max_iter=200, tol=1e-8,
               min_noisy_loss: float | None = NOISY_LOSS_FLOOR) -> SelectionReport:
    """Learned selection for class ``j`` from its per-example losses.

    When the high-loss component's mean is below ``min_noisy_loss`` the split
    only separates easy from hard examples, so every example is kept
    (``extra["kept_all"]``).  Pass None to always use the mixture split.
    """
    gmm = fit_gmm_1d(losses, max_iter=max_iter, tol=tol)
    kept_all = min_noisy_loss is not None and float(gmm.means.max()) < min_noisy_loss
    if kept_all:
        sel = np.arange(np.asarray(losses).size)
    else:
        sel = select_clean(losses, gmm, tau)
    return make_report(noisy, clean, sel, j, "gmm", tau=tau, kept_all=bool(kept_all),
                       gmm_means=gmm.means.tolist(), gmm_iters=gmm.n_iter)


def _weighted_subsample(idx, keep, log_w, rng):
    # Gumbel top-k: sampling without replacement with probability proportional to w
    if keep >= idx.size:
        return idx
    keys = log_w + rng.gumbel(size=idx.size)
    return idx[np.argsort(-keys, kind="stable")[:keep]]


def _stratified(ds, j, subsample, log_weight, seed):
    agree = np.flatnonzero(ds.noisy_labels[:, j] == ds.clean_labels[:, j])
    yj = ds.clean_labels[agree, j]
    rng = class_rng(seed, j, salt=5)
    parts = []
    for k in (0, 1):
        idx = agree[yj == k]
        if idx.size == 0:
            raise EmptyStratum(f"class {j}: no clean-consistent examples with y={k}")
        keep = idx.size if subsample is None else max(1, int(round(subsample * idx.size)))
        lw = np.zeros(idx.size) if log_weight is None else log_weight[idx]
        parts.append(_weighted_subsample(idx, keep, lw, rng))
    return np.concatenate(parts)


def gold_select(ds: MultiLabelDataset, j: int, subsample: float | None = None,
                seed: int = 0) -> SelectionReport:
    """Oracle selection: the examples whose noisy label of class ``j`` is correct."""
    if subsample is not None and not (0.0 < subsample <= 1.0):
        raise ValidationError(f"subsample={subsample} outside (0, 1]")
    sel = _stratified(ds, j, subsample, None, seed)
    return make_report(ds.noisy_labels, ds.clean_labels, sel, j, "gold", subsample=subsample)


def class_margin(ds: MultiLabelDataset, j: int) -> np.ndarray:
    """Signed distance of each example from the prototype midpoint of class ``j``."""
    mu = ds.class_prototypes[j]
    return ds.features @ mu / (mu @ mu) - 0.5


def biased_select(ds: MultiLabelDataset, j: int, bias_strength: float, seed: int = 0,
                  subsample: float = 0.5, margin=None) -> SelectionReport:
    """Clean-consistent selection that prefers easy (large-margin) examples.

    Each stratum keeps ``subsample`` of its clean-consistent examples, drawn
    without replacement with weight exp(bias_strength * |margin|).
    """
    if bias_strength < 0:
        raise ValidationError("bias_strength must be >= 0")
    m = class_margin(ds, j) if margin is None else np.asarray(margin, dtype=float)
    log_w = bias_strength * np.abs(m) if bias_strength > 0 else None
    sel = _stratified(ds, j, subsample, log_w, seed)
    return make_report(ds.noisy_labels, ds.clean_labels, sel, j, "biased",
                       bias_strength=bias_strength, subsample=subsample)
