"""Synthetic correlated multi-label data and class-dependent label noise.

Clean labels come from a mixture of label profiles: every example draws one
group, classes of that group switch on with a high rate and every other class
with a low rate.  Features are the sum of the prototypes of the active classes
plus isotropic Gaussian noise, so each class is linearly detectable from its
own prototype.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError

REGIMES = ("MLML", "PML", "ULF", "ALF", "PAIRWISE")


@dataclass(frozen=True)
class TransitionMatrix2:
    """Row-stochastic 2x2 flip matrix of one class.

    ``rho_minus`` is P(noisy=1 | clean=0) and ``rho_plus`` is
    P(noisy=0 | clean=1).
    """

    rho_minus: float
    rho_plus: float

    def __post_init__(self):
        for name in ("rho_minus", "rho_plus"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise ValidationError(f"{name}={v!r} outside [0, 1]")

    @classmethod
    def identity(cls) -> "TransitionMatrix2":
        return cls(0.0, 0.0)

    @classmethod
    def from_matrix(cls, m) -> "TransitionMatrix2":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 1]), float(m[1, 0]))

    @property
    def satisfies_assumption1(self) -> bool:
        return self.rho_minus + self.rho_plus < 1.0

    def matrix(self) -> np.ndarray:
        # rows built as (1 - x, x) so they sum to one exactly
        return np.array(
            [[1.0 - self.rho_minus, self.rho_minus], [self.rho_plus, 1.0 - self.rho_plus]]
        )

    def row_swapped(self) -> "TransitionMatrix2":
        """Matrix after relabelling the clean values 0 <-> 1."""
        return TransitionMatrix2(1.0 - self.rho_plus, 1.0 - self.rho_minus)

    def canonical(self) -> "TransitionMatrix2":
        return self.row_swapped() if self.rho_minus + self.rho_plus > 1.0 else self

    def to_list(self) -> list[list[float]]:
        return self.matrix().tolist()


@dataclass(frozen=True)
class NoiseConfig:
    regime: str = "ULF"
    rho: float = 0.2
    n_a: float | None = None
    per_class_override: tuple[TransitionMatrix2, ...] | None = None

    def validate(self, q: int, strict: bool = True) -> None:
        if self.regime not in REGIMES:
            raise ValidationError(f"noise.regime: unknown regime {self.regime!r}")
        if not (0.0 <= self.rho < 1.0):
            raise ValidationError(f"noise.rho: {self.rho} outside [0, 1)")
        if self.per_class_override is not None and len(self.per_class_override) != q:
            raise ValidationError(
                f"noise.per_class_override: expected {q} matrices, got {len(self.per_class_override)}"
            )
        if self.regime == "ALF":
            if self.n_a is None or self.n_a <= 0:
                raise ValidationError("noise.n_a: ALF needs a positive mean label count")
            if self.n_a >= q:
                raise ValidationError(f"noise.n_a: ALF needs n_a < q (n_a={self.n_a}, q={q})")
            rm = self.n_a * self.rho / (q - self.n_a)
            if rm >= 1.0:
                raise ValidationError(f"noise.n_a: ALF rho_minus={rm:.4g} is not below 1")
        if strict and self.regime != "PAIRWISE":
            for t in make_noise_matrices(self, q, strict=False):
                if not t.satisfies_assumption1:
                    raise ValidationError(
                        f"noise.rho: rho_minus + rho_plus = {t.rho_minus + t.rho_plus:.4g} "
                        "violates rho_minus + rho_plus < 1"
                    )


def make_noise_matrices(config: NoiseConfig, q: int, strict: bool = True) -> list[TransitionMatrix2]:
    """Per-class transition matrices for one of the benchmark noise regimes."""
    if strict:
        config.validate(q, strict=True)
    if config.per_class_override is not None:
        return list(config.per_class_override)
    rho = config.rho
    if config.regime == "MLML":
        t = TransitionMatrix2(0.0, rho)
    elif config.regime == "PML":
        t = TransitionMatrix2(rho, 0.0)
    elif config.regime == "ULF":
        t = TransitionMatrix2(rho, rho)
    elif config.regime == "ALF":
        if config.n_a is None or config.n_a >= q:
            raise ValidationError(f"noise.n_a: ALF needs n_a < q (n_a={config.n_a}, q={q})")
        t = TransitionMatrix2(config.n_a * rho / (q - config.n_a), rho)
    else:
        # pair-wise noise is instance dependent; no class-level matrix applies
        t = TransitionMatrix2.identity()
    return [t] * q


@dataclass(frozen=True)
class MultiLabelDataset:
    features: np.ndarray
    clean_labels: np.ndarray
    noisy_labels: np.ndarray
    class_prototypes: np.ndarray
    group_assignment: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n, q = self.clean_labels.shape
        if n < 1 or q < 2:
            raise ValidationError(f"dataset needs n >= 1 and q >= 2, got n={n}, q={q}")
        if self.noisy_labels.shape != (n, q) or self.features.shape[0] != n:
            raise ValidationError("features, clean and noisy labels disagree in shape")
        if self.class_prototypes.shape != (q, self.features.shape[1]):
            raise ValidationError("prototype matrix does not match (q, d)")
        for arr in (self.features, self.clean_labels, self.noisy_labels,
                    self.class_prototypes, self.group_assignment):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.clean_labels.shape[0]

    @property
    def q(self) -> int:
        return self.clean_labels.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def estimable(self) -> bool:
        pos = self.clean_labels.sum(axis=0)
        return bool(np.all(pos >= 1) and np.all(pos <= self.n - 1))

    @property
    def true_transitions(self) -> list[TransitionMatrix2] | None:
        rows = self.meta.get("true_rho")
        if rows is None:
            return None
        return [TransitionMatrix2(rm, rp) for rm, rp in rows]

    def realized_mean_labels(self) -> float:
        return float(self.clean_labels.sum(axis=1).mean())

    def empirical_flip_rates(self) -> np.ndarray:
        """(q, 2) array of measured (rho_minus, rho_plus) against the clean labels."""
        y, yb = self.clean_labels, self.noisy_labels
        out = np.full((self.q, 2), np.nan)
        neg, pos = (y == 0).sum(0), (y == 1).sum(0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, 0] = ((y == 0) & (yb == 1)).sum(0) / neg
            out[:, 1] = ((y == 1) & (yb == 0)).sum(0) / pos
        return out


def class_rng(seed: int, stream: int, salt: int = 0) -> np.random.Generator:
    """Independent generator for one class (or other stream index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(salt, stream)))


def conditional_gap(labels: np.ndarray) -> np.ndarray:
    """|P(L_i=0 | L_j=0) - P(L_i=0 | L_j=1)| for every ordered pair, indexed [j, i].

    Undefined entries (a class value never observed) are NaN; the diagonal is NaN.
    """
    y = np.asarray(labels, dtype=float)
    n = y.shape[0]
    pos = y.sum(axis=0)
    neg = n - pos
    both1 = y.T @ y                         # [j, i] = #(j=1, i=1)
    i0_j1 = pos[:, None] - both1            # #(j=1, i=0)
    i0_j0 = (n - pos[None, :]) - i0_j1      # #(i=0) - #(i=0, j=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        gap = np.abs(i0_j0 / neg[:, None] - i0_j1 / pos[:, None])
    np.fill_diagonal(gap, np.nan)
    return gap


def _prototypes(q, d, groups, group_of, shared, scale, rng):
    k = q + groups
    if d >= k:
        basis, _ = np.linalg.qr(rng.standard_normal((d, k)))
        basis = basis.T
    else:
        basis = rng.standard_normal((k, d))
        basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    unique, centers = basis[:q], basis[q:]
    protos = math.sqrt(shared) * centers[group_of] + math.sqrt(1.0 - shared) * unique
    return scale * protos


def _sample_clean(n, group_of, groups, p_in, p_out, rng):
    z = rng.integers(0, groups, size=n)
    rate = np.where(group_of[None, :] == z[:, None], p_in, p_out)
    return (rng.random(rate.shape) < rate).astype(np.int8)


def generate_clean_dataset(
    n: int,
    q: int,
    d: int,
    groups: int,
    sigma: float,
    seed: int,
    *,
    p_in: float = 0.6,
    p_out: float = 0.03,
    shared: float = 0.0,
    scale: float = 1.0,
) -> MultiLabelDataset:
    """Draw a clean dataset from the profile-mixture generator.

    ``p_in``/``p_out`` are the activation rates of classes inside/outside the
    drawn group; ``shared`` is the fraction of prototype energy shared by all
    classes of a group (0 keeps every prototype orthogonal when ``d >= q +
    groups``).
    """
    if min(n, q, d, groups) < 1:
        raise ValidationError("n, q, d and groups must all be >= 1")
    if q < 2:
        raise ValidationError("q must be >= 2")
    if groups > q:
        raise ValidationError(f"groups={groups} exceeds q={q}")
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if not (0.0 <= p_out <= 1.0 and 0.0 <= p_in <= 1.0 and 0.0 <= shared <= 1.0):
        raise ValidationError("p_in, p_out and shared must lie in [0, 1]")

    group_of = (np.arange(q) * groups) // q
    protos = _prototypes(q, d, groups, group_of, shared, scale, class_rng(seed, 0, salt=1))
    params = dict(n=n, q=q, d=d, groups=groups, sigma=sigma, p_in=p_in,
                  p_out=p_out, shared=shared, scale=scale)
    return _draw(n, protos, group_of, params, seed)


def _draw(n, protos, group_of, params, seed):
    rng = class_rng(seed, 0, salt=2)
    y = _sample_clean(n, group_of, params["groups"], params["p_in"], params["p_out"], rng)
    x = y @ protos
    if params["sigma"] > 0:
        x = x + params["sigma"] * rng.standard_normal(x.shape)
    meta = {"generator": dict(params, n=n), "regime": None, "true_rho": None}
    return MultiLabelDataset(
        features=x,
        clean_labels=y,
        noisy_labels=y.copy(),
        class_prototypes=protos,
        group_assignment=group_of,
        seed=seed,
        meta=meta,
    )


def sample_like(ds: MultiLabelDataset, n: int, seed: int) -> MultiLabelDataset:
    """Fresh noise-free draw sharing the prototypes and groups of ``ds``."""
    params = dict(ds.meta["generator"])
    return _draw(n, np.array(ds.class_prototypes), np.array(ds.group_assignment), params, seed)


def inject_class_dependent_noise(
    ds: MultiLabelDataset, T: list[TransitionMatrix2], seed: int, regime: str | None = None
) -> MultiLabelDataset:
    """Flip every label bit independently according to its class matrix."""
    if len(T) != ds.q:
        raise ValidationError(f"expected {ds.q} transition matrices, got {len(T)}")
    y = ds.clean_labels
    noisy = np.empty_like(y)
    for j, t in enumerate(T):
        u = class_rng(seed, j, salt=3).random(ds.n)
        flip = np.where(y[:, j] == 1, u < t.rho_plus, u < t.rho_minus)
        noisy[:, j] = np.where(flip, 1 - y[:, j], y[:, j])
    meta = dict(ds.meta, regime=regime or "custom", noise_seed=seed,
                true_rho=[[t.rho_minus, t.rho_plus] for t in T])
    return replace(ds, noisy_labels=noisy, meta=meta)


def class_pairing(q: int) -> tuple[list[tuple[int, int]], int | None]:
    """Fixed pairing (0,1), (2,3), ...; returns the pairs and the unpaired class."""
    pairs = [(a, a + 1) for a in range(0, q - 1, 2)]
    return pairs, (q - 1 if q % 2 else None)


def inject_pairwise_noise(
    ds: MultiLabelDataset, pair_rate: float, seed: int, force: np.ndarray | None = None
) -> MultiLabelDataset:
    """Move a positive label onto its paired class with probability ``pair_rate``.

    A move only happens when the paired class is clean-negative, so no label is
    ever duplicated.  ``force`` (boolean, n x q) overrides the random draw and
    exists for deterministic tests.
    """
    if not (0.0 <= pair_rate < 1.0):
        raise ValidationError(f"pair_rate={pair_rate} outside [0, 1)")
    y = ds.clean_labels
    noisy = y.copy()
    pairs, unpaired = class_pairing(ds.q)
    eligible_total = moved_total = 0
    for a, b in pairs:
        for src, dst in ((a, b), (b, a)):
            eligible = (y[:, src] == 1) & (y[:, dst] == 0)
            if force is not None:
                move = eligible & force[:, src]
            else:
                move = eligible & (class_rng(seed, src, salt=4).random(ds.n) < pair_rate)
            noisy[move, src] = 0
            noisy[move, dst] = 1
            eligible_total += int(eligible.sum())
            moved_total += int(move.sum())
    meta = dict(ds.meta, regime="PAIRWISE", noise_seed=seed, pair_rate=pair_rate,
                unpaired_class=unpaired, pairs=pairs,
                realized_swap_fraction=moved_total / eligible_total if eligible_total else 0.0,
                true_rho=None)
    return replace(ds, noisy_labels=noisy, meta=meta)


# ---------------------------------------------------------------- serialization

_FILES = ("features", "clean", "noisy", "prototypes")


def save_dataset(ds: MultiLabelDataset, path, fmt: str = "csv") -> Path:
    """Write ``meta.json`` plus one matrix file per array into ``path``."""
    if fmt not in ("csv", "npy"):
        raise ValidationError(f"unknown dataset format {fmt!r}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = dict(features=ds.features, clean=ds.clean_labels, noisy=ds.noisy_labels,
                  prototypes=ds.class_prototypes)
    for name, arr in arrays.items():
        if fmt == "npy":
            np.save(path / f"{name}.npy", np.asarray(arr), allow_pickle=False)
        else:
            number_fmt = "%d" if arr.dtype.kind in "iub" else "%.17g"
            np.savetxt(path / f"{name}.csv", arr, fmt=number_fmt, delimiter=",")
    meta = {
        "n": ds.n, "q": ds.q, "d": ds.d, "seed": ds.seed, "format": fmt,
        "regime": ds.meta.get("regime"),
        "true_rho": ds.meta.get("true_rho"),
        "group_assignment": [int(g) for g in ds.group_assignment],
        "meta": {k: v for k, v in ds.meta.items() if k not in ("regime", "true_rho")},
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> MultiLabelDataset:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    fmt = meta.get("format", "csv")
    arrays = {}
    for name in _FILES:
        if fmt == "npy":
            arrays[name] = np.load(path / f"{name}.npy", allow_pickle=False)
        else:
            arrays[name] = np.loadtxt(path / f"{name}.csv", delimiter=",", ndmin=2)
    q = meta["q"]
    extra = dict(meta.get("meta", {}), regime=meta.get("regime"), true_rho=meta.get("true_rho"))
    if "pairs" in extra:
        extra["pairs"] = [tuple(p) for p in extra["pairs"]]
    return MultiLabelDataset(
        features=arrays["features"].astype(float).reshape(meta["n"], meta["d"]),
        clean_labels=arrays["clean"].astype(np.int8).reshape(meta["n"], q),
        noisy_labels=arrays["noisy"].astype(np.int8).reshape(meta["n"], q),
        class_prototypes=arrays["prototypes"].astype(float).reshape(q, meta["d"]),
        group_assignment=np.asarray(meta["group_assignment"], dtype=np.int64),
        seed=meta["seed"],
        meta=extra,
    )
