from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multilabel_t.errors import InvalidWitness, NonInvertibleConditional, ValidationError
from multilabel_t.estimator import solve_bilinear
from multilabel_t.identifiability import (
    certify_unique_given_M,
    construct_alternative,
    find_alternative,
    kruskal_rank_2x2,
)

T0 = np.array([[0.8, 0.2], [0.2, 0.8]])
M0 = np.array([[0.9, 0.1], [0.3, 0.7]])
SWAP = np.array([[0, 1], [1, 0]])


def joint(T, p, M):
    return np.asarray(T).T @ np.diag([1 - p, p]) @ np.asarray(M)


def exact_witness(T, p, M, a, b):
    # rational-arithmetic oracle for the alternative decomposition
    T = [[F(str(x)) for x in r] for r in T]
    M = [[F(str(x)) for x in r] for r in M]
    p, a, b = F(str(p)), F(str(a)), F(str(b))
    ap = b * (1 - p) / (b - p)
    bp = a * (1 - p) / (a - p)
    A = [[1 - a, a], [ap, 1 - ap]]
    B = [[1 - b, b], [bp, 1 - bp]]

    def mul(X, Y):
        return [[sum(X[i][k] * Y[k][j] for k in range(2)) for j in range(2)] for i in range(2)]

    def inv(X):
        d = X[0][0] * X[1][1] - X[0][1] * X[1][0]
        return [[X[1][1] / d, -X[0][1] / d], [-X[1][0] / d, X[0][0] / d]]

    At = [[A[0][0], A[1][0]], [A[0][1], A[1][1]]]
    P = mul(mul(inv(At), [[1 - p, 0], [0, p]]), inv(B))
    return mul(A, T), mul(B, M), P


class TestWitness:
    def test_fixture_matches_exact(self):
        w = construct_alternative(T0, 0.5, M0, 0.1, 0.1)
        Ta, Ma, Pa = exact_witness(T0, 0.5, M0, 0.1, 0.1)
        np.testing.assert_allclose(w.T_alt, np.array(Ta, float), atol=1e-15)
        np.testing.assert_allclose(w.M_alt, np.array(Ma, float), atol=1e-15)
        np.testing.assert_allclose(w.P_alt, np.array(Pa, float), atol=1e-15)
        assert Pa[0][1] == 0 and Pa[1][0] == 0
        assert Pa[1][1] == F(16, 41)
        assert w.coupled == (-0.125, -0.125)
        assert w.reconstruction_residual <= 1e-12
        assert w.t_gap == pytest.approx(0.27)

    def test_fixture_values(self):
        w = construct_alternative(T0, 0.5, M0, 0.1, 0.1)
        np.testing.assert_allclose(w.T_alt, [[0.74, 0.26], [0.125, 0.875]], atol=1e-12)
        np.testing.assert_allclose(w.M_alt, [[0.84, 0.16], [0.225, 0.775]], atol=1e-12)

    def test_zero_params_give_original(self):
        w = construct_alternative(T0, 0.5, M0, 0.0, 0.0)
        np.testing.assert_array_equal(w.T_alt, T0)
        assert w.t_gap == 0.0

    def test_off_simplex(self):
        with pytest.raises(InvalidWitness, match="M_alt"):
            construct_alternative(T0, 0.5, M0, 0.4, 0.1)

    def test_param_equal_to_prior(self):
        with pytest.raises(ValidationError):
            construct_alternative(T0, 0.5, M0, 0.5, 0.1)

    @given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.2, 0.8))
    def test_valid_witnesses_reproduce_joint(self, a, b, p):
        try:
            w = construct_alternative(T0, p, M0, a, b)
        except (InvalidWitness, ValidationError):
            return
        assert w.reconstruction_residual <= 1e-12
        assert abs(w.P_alt[0, 1]) <= 1e-12 and abs(w.P_alt[1, 0]) <= 1e-12
        for m in (w.T_alt, w.M_alt):
            np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)

    def test_search_finds_distinct(self):
        w = find_alternative(T0, 0.5, M0)
        assert w is not None and w.t_gap >= 0.27


class TestCertificate:
    def test_unique_given_M(self):
        E = joint(T0, 0.5, M0)
        cert = certify_unique_given_M(E, M0, n_candidates=2000, seed=1)
        assert cert.unique and not cert.counterexamples
        assert cert.n_matching > 0
        p, raw = solve_bilinear(E, M0, p_floor=1e-9)
        assert abs(cert.p - p) <= 1e-12
        np.testing.assert_allclose(cert.T.matrix(), raw, atol=1e-12)
        np.testing.assert_allclose(cert.T.matrix(), T0, atol=1e-12)

    def test_relabelled_clean_value(self):
        # swapping the clean value swaps T's rows, M's rows and flips the prior
        T = np.array([[0.85, 0.15], [0.3, 0.7]])
        E = joint(T, 0.35, M0)
        cert = certify_unique_given_M(E, SWAP @ M0, n_candidates=500)
        np.testing.assert_allclose(joint(SWAP @ T, 0.65, SWAP @ M0), E, atol=1e-15)
        assert cert.p == pytest.approx(0.65, abs=1e-12)
        np.testing.assert_allclose(cert.T.matrix(), SWAP @ T, atol=1e-12)

    def test_unknown_M_refused(self):
        cert = certify_unique_given_M(joint(T0, 0.5, M0), M0, m_known=False)
        assert not cert.unique and cert.witness is not None
        assert cert.witness.t_gap > 0.1
        assert cert.to_dict()["witness"]["reconstruction_residual"] <= 1e-12

    def test_singular_M(self):
        with pytest.raises(NonInvertibleConditional):
            certify_unique_given_M(np.full((2, 2), 0.25), np.full((2, 2), 0.5))

    def test_bad_count(self):
        with pytest.raises(ValidationError):
            certify_unique_given_M(joint(T0, 0.5, M0), M0, n_candidates=0)


class TestKruskal:
    @pytest.mark.parametrize("m, k", [
        ([[0, 0], [0, 0]], 0),
        ([[1, 0], [0, 0]], 1),
        ([[0.5, 0.5], [0.5, 0.5]], 1),
        ([[1, 2], [2, 4]], 1),
        ([[0.9, 0.1], [0.3, 0.7]], 2),
        ([[0, 1], [1, 0]], 2),
    ])
    def test_cases(self, m, k):
        assert kruskal_rank_2x2(m) == k

    @given(arrays(np.float64, (2, 2), elements=st.floats(-1, 1, allow_subnormal=False)))
    def test_full_iff_invertible(self, m):
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if 0 < abs(det) <= 1e-10:
            return
        assert (kruskal_rank_2x2(m) == 2) == (det != 0)

    def test_shape(self):
        with pytest.raises(ValidationError):
            kruskal_rank_2x2(np.eye(3))
