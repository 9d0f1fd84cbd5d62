import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from nullgrad.errors import QuadratureError
from nullgrad.model import (GaussianMoments, LinearSystem, TimeGrid, drift_integral, gramian, semigroup,
                            semigroup_action, transition_moments)
from nullgrad.quadrature import integrate

KOL = LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]])
OU = LinearSystem([[-1.0]], [[1.0]])


def taylor_expm(A, terms=60):
    """Plain Taylor series with scaling and squaring, an oracle independent of Pade."""
    norm = np.linalg.norm(A, 1)
    k = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    X = A / 2**k
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for j in range(1, terms):
        term = term @ X / j
        out = out + term
    for _ in range(k):
        out = out @ out
    return out


def van_loan_gramian(A, B, t):
    d = A.shape[0]
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = -A
    M[:d, d:] = B @ B.T
    M[d:, d:] = A.T
    E = scipy.linalg.expm(M * t)
    F = E[d:, d:].T
    return F @ E[:d, d:]


def random_stable(rng, d, m):
    A = rng.normal(size=(d, d))
    A -= (np.max(np.linalg.eigvals(A).real) + 0.5) * np.eye(d)
    return LinearSystem(A, rng.normal(size=(d, m)))


def test_semigroup_examples():
    assert np.array_equal(semigroup(LinearSystem(np.zeros((3, 3)), np.eye(3)), 7.0), np.eye(3))
    assert np.allclose(semigroup(KOL, 1.0), [[1.0, 1.0], [0.0, 1.0]], atol=1e-15)
    assert semigroup(OU, 1.0)[0, 0] == pytest.approx(0.36787944117144233, rel=1e-14)


def test_semigroup_at_zero_is_identity():
    rng = np.random.default_rng(1)
    sys = LinearSystem(rng.normal(size=(4, 4)), np.eye(4))
    assert np.array_equal(semigroup(sys, 0.0), np.eye(4))


def test_semigroup_rejects_bad_time():
    with pytest.raises(ValueError):
        semigroup(OU, math.nan)
    with pytest.raises(ValueError):
        semigroup(OU, -1.0)


def test_semigroup_matches_taylor_oracle():
    rng = np.random.default_rng(2)
    for _ in range(10):
        A = rng.normal(size=(4, 4))
        sys = LinearSystem(A, np.eye(4))
        assert np.allclose(semigroup(sys, 0.7), taylor_expm(0.7 * A), rtol=1e-11, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_semigroup_law(seed, s, t):
    sys = random_stable(np.random.default_rng(seed), 4, 2)
    lhs = semigroup(sys, s + t)
    rhs = semigroup(sys, s) @ semigroup(sys, t)
    scale = np.linalg.norm(semigroup(sys, s), 2) * np.linalg.norm(semigroup(sys, t), 2)
    assert np.linalg.norm(lhs - rhs, 2) <= 1e-10 * scale


def test_semigroup_action_uniform_grid_matches_expm():
    rng = np.random.default_rng(3)
    sys = random_stable(rng, 3, 3)
    s = np.linspace(0.0, 2.0, 201)
    S = semigroup_action(sys, s, np.eye(3))
    for k in (0, 50, 200):
        assert np.allclose(S[k], scipy.linalg.expm(s[k] * sys.A), rtol=1e-11, atol=1e-13)
    S_rev = semigroup_action(sys, s[::-1], np.eye(3))
    assert np.allclose(S_rev[::-1], S, rtol=1e-11, atol=1e-13)


def test_diagonal_flag_and_elementwise_path():
    lam = -np.arange(1.0, 6.0) ** 2
    sys = LinearSystem(np.diag(lam), np.eye(5))
    assert sys.diagonal
    assert np.allclose(semigroup(sys, 0.3), np.diag(np.exp(0.3 * lam)))
    assert not KOL.diagonal


def test_gramian_examples():
    assert np.allclose(gramian(LinearSystem(np.zeros((2, 2)), np.eye(2)), 2.0), 2 * np.eye(2))
    assert np.allclose(gramian(KOL, 1.0), [[1 / 3, 1 / 2], [1 / 2, 1.0]], rtol=1e-12)
    assert gramian(OU, 1.0)[0, 0] == pytest.approx(0.43233235838169365, rel=1e-12)


def test_gramian_matches_van_loan():
    rng = np.random.default_rng(4)
    for _ in range(5):
        sys = random_stable(rng, 4, 2)
        G = gramian(sys, 1.3)
        assert np.allclose(G, van_loan_gramian(sys.A, sys.B, 1.3), rtol=1e-9, atol=1e-12)


def test_gramian_diagonal_closed_form_matches_quadrature():
    lam = np.array([-1.0, -4.0, 0.0])
    B = np.array([[1.0, 0.2], [0.0, 0.5], [0.3, 1.0]])
    diag = LinearSystem(np.diag(lam), B)
    G = gramian(diag, 0.8)
    assert np.allclose(G, van_loan_gramian(np.diag(lam), B, 0.8), rtol=1e-10, atol=1e-14)


def test_gramian_symmetric_psd_and_monotone():
    rng = np.random.default_rng(5)
    sys = random_stable(rng, 5, 2)
    prev = np.zeros((5, 5))
    for t in (0.1, 0.5, 1.0, 2.0):
        G = gramian(sys, t)
        assert np.array_equal(G, G.T)
        assert np.linalg.eigvalsh(G)[0] >= -1e-10 * np.trace(G)
        assert np.linalg.eigvalsh(G - prev)[0] >= -1e-10 * np.trace(G)
        prev = G


def test_gramian_additivity():
    rng = np.random.default_rng(6)
    sys = random_stable(rng, 3, 1)
    s, t = 0.4, 0.9
    S = semigroup(sys, t)
    lhs = gramian(sys, s + t)
    rhs = gramian(sys, t) + S @ gramian(sys, s) @ S.T
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-12)


def test_quadrature_reports_failure():
    with pytest.raises(QuadratureError) as info:
        integrate(lambda s: np.sign(np.sin(1e4 * s)) * np.sqrt(np.abs(np.sin(1e4 * s))), 0.0, 1.0, rtol=1e-14)
    assert info.value.achieved_error is not None


def test_transition_moments_examples():
    m = transition_moments(KOL, [3.0, -1.0], 0.0)
    assert np.array_equal(m.mean, [3.0, -1.0])
    assert np.array_equal(m.cov, np.zeros((2, 2)))
    ou = LinearSystem([[-1.0]], [[1.0]], a=[2.0])
    m = transition_moments(ou, [0.0], 1.0)
    assert m.mean[0] == pytest.approx(2 * (1 - math.exp(-1)), rel=1e-13)
    assert m.cov[0, 0] == pytest.approx(0.4323323583816936, rel=1e-12)
    m = transition_moments(KOL, [1.0, 0.0], 1.0)
    assert np.allclose(m.mean, [1.0, 0.0])
    assert np.allclose(m.cov, [[1 / 3, 1 / 2], [1 / 2, 1.0]])


def test_transition_mean_uses_semigroup_without_drift():
    rng = np.random.default_rng(7)
    sys = random_stable(rng, 4, 2)
    x = rng.normal(size=4)
    assert np.array_equal(transition_moments(sys, x, 0.6).mean, semigroup(sys, 0.6) @ x)


def test_drift_integral_matches_van_loan_block():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(3, 3))
    a = rng.normal(size=3)
    sys = LinearSystem(A, np.eye(3), a)
    # integral_0^t e^{rA} a dr via a fine Simpson rule
    r = np.linspace(0.0, 0.9, 2001)
    vals = np.stack([scipy.linalg.expm(ri * A) @ a for ri in r])
    ref = scipy.integrate.simpson(vals, x=r, axis=0)
    assert np.allclose(drift_integral(sys, 0.9), ref, rtol=1e-9, atol=1e-11)


def test_linear_system_validation():
    with pytest.raises(ValueError):
        LinearSystem([[1.0, 2.0]], [[1.0]])
    with pytest.raises(ValueError):
        LinearSystem([[1.0]], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        LinearSystem([[math.inf]], [[1.0]])
    with pytest.raises(ValueError):
        LinearSystem([[1.0]], [[1.0]], a=[1.0, 2.0])
    sys = LinearSystem([[1.0]], [1.0])
    assert (sys.d, sys.m) == (1, 1)
    with pytest.raises(ValueError):
        sys.A[0, 0] = 3.0


def test_time_grid():
    g = TimeGrid(2.0, 8)
    assert g.h == 0.25
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 2.0
    assert np.all(np.diff(g.nodes) > 0)
    assert g.refine().steps == 16
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 4)


def test_gaussian_moments_validation():
    GaussianMoments(np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        GaussianMoments(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        GaussianMoments(np.zeros(2), -np.eye(2))
