"""Numerical probes of when the co-occurrence decomposition ``E = T^T P M`` is unique.

With ``M`` unknown, any pair of row-stochastic matrices (A, B) chosen so that
``(A^T)^-1 P B^-1`` stays diagonal yields a second decomposition.  With ``M``
known the decomposition is unique up to relabelling; ``certify_unique_given_M``
checks this with a multi-start local search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datagen import TransitionMatrix2
from .errors import InvalidWitness, NonInvertibleConditional, ValidationError
from .estimator import SINGULAR_FLOOR, solve_bilinear

DET_FLOOR = 1e-12
SIMPLEX_TOL = 1e-12
MATCH_TOL = 1e-6
DISTINCT_TOL = 1e-3


def _row_stochastic(m, tol=SIMPLEX_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    return bool(np.all(m >= -tol) and np.all(m <= 1 + tol)
                and np.allclose(m.sum(axis=1), 1.0, atol=tol))


@dataclass
class AlternativeSolution:
    T_alt: np.ndarray
    M_alt: np.ndarray
    P_alt: np.ndarray
    params: tuple[float, float]
    coupled: tuple[float, float]
    reconstruction_residual: float
    t_gap: float

    @property
    def p_alt(self) -> float:
        return float(self.P_alt[1, 1])

    def to_dict(self) -> dict:
        return {
            "T_alt": self.T_alt.tolist(), "M_alt": self.M_alt.tolist(),
            "P_alt": self.P_alt.tolist(),
            "a_minus": self.params[0], "b_minus": self.params[1],
            "a_plus": self.coupled[0], "b_plus": self.coupled[1],
            "reconstruction_residual": self.reconstruction_residual,
            "t_l1_gap": self.t_gap,
        }


def construct_alternative(T, p: float, M, a_minus: float, b_minus: float) -> AlternativeSolution:
    """Second decomposition of ``E = T^T diag(1-p, p) M`` from mixing matrices A and B.

    ``A = [[1-a_-, a_-], [a_+, 1-a_+]]`` acts on T and ``B`` (same layout) on M;
    a_+ and b_+ are fixed by requiring the new prior matrix to be diagonal.
    """
    T = T.matrix() if isinstance(T, TransitionMatrix2) else np.asarray(T, dtype=float)
    M = np.asarray(M, dtype=float)
    if np.isclose(b_minus, p) or np.isclose(a_minus, p):
        raise ValidationError("a_minus and b_minus must differ from p")
    a_plus = b_minus * (1.0 - p) / (b_minus - p)
    b_plus = a_minus * (1.0 - p) / (a_minus - p)
    A = np.array([[1.0 - a_minus, a_minus], [a_plus, 1.0 - a_plus]])
    B = np.array([[1.0 - b_minus, b_minus], [b_plus, 1.0 - b_plus]])
    if abs(np.linalg.det(A)) < DET_FLOOR or abs(np.linalg.det(B)) < DET_FLOOR:
        raise InvalidWitness("mixing matrix is singular")
    T_alt = A @ T
    M_alt = B @ M
    if not _row_stochastic(T_alt):
        raise InvalidWitness(f"T_alt leaves the simplex: {T_alt.tolist()}")
    if not _row_stochastic(M_alt):
        raise InvalidWitness(f"M_alt leaves the simplex: {M_alt.tolist()}")
    P = np.diag([1.0 - p, p])
    P_alt = np.linalg.inv(A.T) @ P @ np.linalg.inv(B)
    E = T.T @ P @ M
    resid = float(np.abs(E - T_alt.T @ P_alt @ M_alt).sum())
    return AlternativeSolution(T_alt, M_alt, P_alt, (float(a_minus), float(b_minus)),
                               (float(a_plus), float(b_plus)), resid,
                               float(np.abs(T - T_alt).sum()))


def find_alternative(T, p: float, M, grid=None) -> AlternativeSolution | None:
    """Scan (a_-, b_-) and return the valid witness farthest from ``T``."""
    grid = np.linspace(-0.5, 0.5, 41) if grid is None else np.asarray(grid, dtype=float)
    best = None
    for a in grid:
        for b in grid:
            if a == 0 and b == 0:
                continue
            try:
                w = construct_alternative(T, p, M, a, b)
            except (InvalidWitness, ValidationError):
                continue
            if best is None or w.t_gap > best.t_gap:
                best = w
    return best


@dataclass
class UniquenessCertificate:
    """Outcome of the randomized uniqueness search.

    ``unique`` only means that no counterexample was found.
    """

    unique: bool
    p: float
    T: TransitionMatrix2
    m_known: bool
    n_candidates: int = 0
    n_rejected: int = 0
    n_matching: int = 0
    counterexamples: list = field(default_factory=list)
    witness: AlternativeSolution | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "unique": self.unique, "m_known": self.m_known, "p": self.p,
            "T": self.T.to_list(), "n_candidates": self.n_candidates,
            "n_rejected": self.n_rejected, "n_matching": self.n_matching,
            "counterexamples": self.counterexamples,
            "witness": self.witness.to_dict() if self.witness else None,
            "note": self.note,
        }


def _forward(rm, rp, p, M):
    # batched T'^T diag(1-p, p) M for vectors of parameters
    t0 = np.stack([1 - rm, rm], axis=-1)
    t1 = np.stack([rp, 1 - rp], axis=-1)
    return ((1 - p)[:, None, None] * t0[:, :, None] * M[0][None, None, :]
            + p[:, None, None] * t1[:, :, None] * M[1][None, None, :])


def _jacobian(rm, rp, p, M):
    n = rm.size
    J = np.empty((n, 4, 3))
    d_rm = np.outer([-1.0, 1.0], M[0]).ravel()
    d_rp = np.outer([1.0, -1.0], M[1]).ravel()
    t0 = np.stack([1 - rm, rm], axis=-1)
    t1 = np.stack([rp, 1 - rp], axis=-1)
    J[:, :, 0] = (1 - p)[:, None] * d_rm[None, :]
    J[:, :, 1] = p[:, None] * d_rp[None, :]
    J[:, :, 2] = (t1[:, :, None] * M[1][None, None, :]
                  - t0[:, :, None] * M[0][None, None, :]).reshape(n, 4)
    return J


def _local_search(E, M, rm, rp, p, iters=60, damping=1e-9):
    for _ in range(iters):
        r = (_forward(rm, rp, p, M) - E[None]).reshape(-1, 4)
        J = _jacobian(rm, rp, p, M)
        JtJ = np.einsum("nki,nkj->nij", J, J) + damping * np.eye(3)[None]
        step = np.linalg.solve(JtJ, -np.einsum("nki,nk->ni", J, r)[..., None])[..., 0]
        rm, rp, p = rm + step[:, 0], rp + step[:, 1], p + step[:, 2]
    return rm, rp, p


def certify_unique_given_M(E, M, n_candidates: int = 10_000, seed: int = 0,
                           m_known: bool = True,
                           singular_floor: float = SINGULAR_FLOOR) -> UniquenessCertificate:
    """Solve for (p, T) given ``M`` and search for a distinct decomposition.

    Each random start (T', p') is refined by Gauss-Newton on the squared
    reconstruction error.  A counterexample is a valid (T', p') that
    reproduces ``E`` within 1e-6 L1 while its canonical form differs from the
    solution by at least 1e-3 L1.  With ``m_known=False`` the search is
    refused and an explicit alternative decomposition is returned.
    """
    E = np.asarray(E, dtype=float)
    M = np.asarray(M, dtype=float)
    if n_candidates < 1:
        raise ValidationError("n_candidates must be >= 1")
    gap = abs(1.0 - M[0, 1] - M[1, 0])
    if gap < singular_floor:
        raise NonInvertibleConditional(f"|1 - m01 - m10| = {gap:.3g} below {singular_floor}")
    p, raw = solve_bilinear(E, M, singular_floor, p_floor=1e-9)
    T = TransitionMatrix2.from_matrix(np.clip(raw, 0.0, 1.0))
    if not m_known:
        w = find_alternative(raw, p, M)
        return UniquenessCertificate(
            False, p, T, m_known=False, witness=w,
            note="M unknown: decomposition not identifiable"
                 + ("" if w else "; no valid witness found on the scan grid"),
        )

    rng = np.random.default_rng(seed)
    rm0, rp0 = rng.uniform(0, 1, n_candidates), rng.uniform(0, 1, n_candidates)
    p0 = rng.uniform(0, 1, n_candidates)
    rm, rp, pp = _local_search(E, M, rm0, rp0, p0)
    valid = ((rm >= -SIMPLEX_TOL) & (rm <= 1 + SIMPLEX_TOL) & (rp >= -SIMPLEX_TOL)
             & (rp <= 1 + SIMPLEX_TOL) & (pp > 0) & (pp < 1))
    resid = np.abs(_forward(rm, rp, pp, M) - E[None]).sum(axis=(1, 2))
    match = valid & np.isfinite(resid) & (resid <= MATCH_TOL)
    ref = T.canonical().matrix()
    counter = []
    for k in np.flatnonzero(match):
        cand = TransitionMatrix2(float(np.clip(rm[k], 0, 1)), float(np.clip(rp[k], 0, 1)))
        d = float(np.abs(cand.canonical().matrix() - ref).sum())
        if d >= DISTINCT_TOL:
            counter.append({"T": cand.to_list(), "p": float(pp[k]),
                            "residual": float(resid[k]), "l1_gap": d})
    return UniquenessCertificate(
        not counter, p, T, m_known=True, n_candidates=n_candidates,
        n_rejected=int((~valid).sum()), n_matching=int(match.sum()),
        counterexamples=counter,
        note="no counterexample found" if not counter else "counterexample found",
    )


def kruskal_rank_2x2(M) -> int:
    """Kruskal rank of a 2x2 matrix: 0 for the zero matrix, 2 iff both rows are nonzero
    and linearly independent, else 1."""
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 2):
        raise ValidationError("expected a 2x2 matrix")
    row_zero = np.all(M == 0, axis=1)
    if row_zero.all():
        return 0
    if row_zero.any():
        return 1
    return 2 if abs(np.linalg.det(M)) > DET_FLOOR else 1
