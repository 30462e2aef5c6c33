import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from resistrade import (AdmissibilityError, KernelSpec, PenaltyKernelParams, TimeGrid, build_nystrom,
                        build_penalty_matrices, kernel_l2_constant, kernel_value, symmetrized_kernel_matrix)
from resistrade.kernels import is_discrete_completely_monotone


def test_grid_nodes():
    g = TimeGrid(1.3, 7)
    t = g.nodes
    assert t[0] == 0 and t[-1] == 1.3
    assert np.all(np.diff(t) > 0)
    np.testing.assert_allclose(np.diff(t), g.delta, rtol=1e-12)


@pytest.mark.parametrize("T,N", [(0.0, 10), (-1.0, 10), (1.0, 0), (1.0, 2.5)])
def test_grid_rejects_bad_values(T, N):
    with pytest.raises(ValueError):
        TimeGrid(T, N)


@pytest.mark.parametrize("spec,t,expected", [
    (KernelSpec(1.0, 1.0, 0.5), 1.0, 2.0),
    (KernelSpec(0.0, 0.467, 0.614), 1.0, 0.467),
    (KernelSpec(0.0, 1.0, 0.5), 0.25, 2.0),
])
def test_kernel_value(spec, t, expected):
    assert kernel_value(spec, t) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("t", [0.0, -0.1])
def test_kernel_value_domain(t):
    with pytest.raises(ValueError):
        kernel_value(KernelSpec(), t)


@pytest.mark.parametrize("kw", [dict(lam=-1), dict(kappa_inf=-0.1), dict(nu=0.0), dict(nu=1.0)])
def test_kernel_spec_validation(kw):
    with pytest.raises(ValueError):
        KernelSpec(**kw)


def test_constant_kernel_cells():
    g = TimeGrid(1.0, 100)
    m = build_nystrom(KernelSpec(1.0, 0.0, 0.5), g)
    lower = np.tril(np.ones((100, 100)), -1).astype(bool)
    np.testing.assert_allclose(m.L[lower], 0.01, rtol=1e-13)
    assert np.all(m.L[~lower] == 0)
    # row sums equal kappa_inf * t_i
    np.testing.assert_allclose(m.L.sum(axis=1), g.nodes[:-1], atol=1e-13)


def test_power_law_cells():
    g = TimeGrid(1.0, 100)
    m = build_nystrom(KernelSpec(0.0, 1.0, 0.5), g)
    assert m.L[2, 0] == pytest.approx(2 * (np.sqrt(0.02) - np.sqrt(0.01)), rel=1e-12)
    assert m.L[2, 0] == pytest.approx(0.0828427, abs=1e-7)
    np.testing.assert_allclose(np.diag(m.M), 0.2, rtol=1e-12)
    val, _ = quad(lambda s: (0.02 - s) ** -0.5, 0.0, 0.01)
    assert m.L[2, 0] == pytest.approx(val, rel=1e-10)


def _oracle(kinf, lam, nu, a, b, anchor, forward):
    """Adaptive quadrature of the kernel over [a, b]; an algebraic weight takes the endpoint singularity."""
    if forward:
        if np.isclose(b, anchor, rtol=0, atol=1e-14):
            val, _ = quad(lambda s: lam, a, b, weight="alg", wvar=(0.0, nu - 1))
        else:
            val, _ = quad(lambda s: lam * (anchor - s) ** (nu - 1), a, b, epsabs=0, epsrel=1e-13, limit=200)
    else:
        if np.isclose(a, anchor, rtol=0, atol=1e-14):
            val, _ = quad(lambda s: lam, a, b, weight="alg", wvar=(nu - 1, 0.0))
        else:
            val, _ = quad(lambda s: lam * (s - anchor) ** (nu - 1), a, b, epsabs=0, epsrel=1e-13, limit=200)
    return val + kinf * (b - a)


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(0.05, 3.0), nu=st.floats(0.3, 0.95), kinf=st.floats(0.0, 2.0),
       T=st.floats(0.2, 3.0), N=st.integers(3, 30), data=st.data())
def test_cells_match_adaptive_quadrature(lam, nu, kinf, T, N, data):
    spec = KernelSpec(kinf, lam, nu)
    g = TimeGrid(T, N)
    m = build_nystrom(spec, g)
    t = g.nodes
    i = data.draw(st.integers(1, N - 1))
    j = data.draw(st.integers(0, i - 1))
    ref = _oracle(kinf, lam, nu, t[j], t[j + 1], t[i], forward=True)
    assert m.L[i, j] == pytest.approx(ref, rel=1e-10)
    k = data.draw(st.integers(0, N - 1))
    p = data.draw(st.integers(k, N - 1))
    ref2 = _oracle(kinf, lam, nu, t[p], t[p + 1], t[k], forward=False)
    assert m.M[k, p] == pytest.approx(ref2, rel=1e-10)


def test_matrices_structure_and_terminal_row():
    g = TimeGrid(2.0, 40)
    m = build_nystrom(KernelSpec(0.5, 0.8, 0.6), g)
    assert np.all(np.triu(m.L) == 0)
    assert np.all(np.tril(m.M, -1) == 0)
    assert np.all(np.isfinite(m.L)) and np.all(m.L >= 0) and np.all(m.M >= 0)
    ref, _ = quad(lambda s: 0.5 + 0.8 * (2.0 - s) ** -0.4, g.nodes[3], g.nodes[4])
    assert m.L_terminal[3] == pytest.approx(ref, rel=1e-10)


def test_penalty_matrices():
    g = TimeGrid(1.0, 100)
    m = build_penalty_matrices(PenaltyKernelParams(0.0, 500.0), g)
    lower = np.tril(np.ones((100, 100)), -1).astype(bool)
    np.testing.assert_allclose(m.L[lower], 5.0, rtol=1e-13)
    z = build_penalty_matrices(PenaltyKernelParams(0.0, 0.0), g)
    assert not z.L.any() and not z.M.any()
    h = build_penalty_matrices(PenaltyKernelParams(1.0, 0.0), g)
    np.testing.assert_allclose(h.L[50, :50], 0.005, rtol=1e-12)
    # column weights on the adjoint side
    assert h.M[10, 60] == pytest.approx((1.0 - 0.6) * 0.01, rel=1e-12)


def test_penalty_params_validation():
    with pytest.raises(ValueError):
        PenaltyKernelParams(-1.0, 0.0)


def test_l2_constant():
    assert kernel_l2_constant(KernelSpec(0.0, 1.0, 0.75), 1.0) == pytest.approx(2.0, rel=1e-14)
    assert kernel_l2_constant(KernelSpec(1.0, 0.0, 0.6), 2.0) == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(AdmissibilityError):
        kernel_l2_constant(KernelSpec(0.0, 1.0, 0.5), 1.0)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(0.1, 2.0), nu=st.floats(0.55, 0.95), kinf=st.floats(0.0, 2.0), T=st.floats(0.1, 3.0))
def test_l2_constant_matches_quadrature(lam, nu, kinf, T):
    ref, _ = quad(lambda s: (kinf + lam * s ** (nu - 1)) ** 2, 0.0, T, limit=200)
    assert kernel_l2_constant(KernelSpec(kinf, lam, nu), T) == pytest.approx(ref, rel=1e-7)


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0.01, 5.0), nu=st.floats(0.05, 0.99), kinf=st.floats(0.0, 3.0),
       T=st.floats(0.1, 10.0), N=st.integers(3, 200))
def test_discrete_complete_monotonicity(lam, nu, kinf, T, N):
    g = TimeGrid(T, N)
    assert is_discrete_completely_monotone(KernelSpec(kinf, lam, nu), g.nodes[1:])


@pytest.mark.parametrize("N", [50, 100, 200])
@pytest.mark.parametrize("nu", [0.5, 0.614, 0.9])
def test_symmetrized_kernel_psd(N, nu):
    S = symmetrized_kernel_matrix(KernelSpec(0.0, 0.467, nu), TimeGrid(1.0, N))
    np.testing.assert_allclose(S, S.T)
    assert np.linalg.eigvalsh(S).min() >= -1e-10
