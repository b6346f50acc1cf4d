import numpy as np
import pytest

from quasineutral.errors import ConfigError, IncompatibleRHSError
from quasineutral.fem import (
    Mesh1D, Tridiag, assemble, dual_norm, h1_norm, h1_seminorm, integrate, l2_norm,
    lp_norm, mean_value, solve_bordered, zero_mean,
)


@pytest.mark.parametrize("n", [2, 0, -5])
def test_mesh_rejects_too_few_nodes(n):
    with pytest.raises(ConfigError, match="nodes"):
        Mesh1D(0.0, 1.0, n)


def test_mesh_rejects_empty_interval():
    with pytest.raises(ConfigError, match="domain"):
        Mesh1D(1.0, 1.0, 10)


def test_mesh_nodes_read_only():
    m = Mesh1D(0.0, 2.0, 5)
    assert m.h == 0.5
    np.testing.assert_allclose(m.nodes, [0, 0.5, 1, 1.5, 2])
    with pytest.raises(ValueError):
        m.nodes[0] = 3.0


@pytest.mark.parametrize("n", [3, 7, 200])
def test_stiffness_annihilates_constants(n):
    f = assemble(Mesh1D(0.0, 1.0, n))
    np.testing.assert_allclose(f.stiffness @ np.ones(n), 0.0, atol=1e-10 * n)


@pytest.mark.parametrize("n", [3, 50, 200])
def test_weights_sum_to_length_and_match_mass_rows(n):
    f = assemble(Mesh1D(-1.0, 2.0, n))
    assert np.isclose(f.weights.sum(), 3.0, rtol=1e-14)
    np.testing.assert_allclose(f.mass @ np.ones(n), f.weights, rtol=1e-13)


def test_matrices_symmetric():
    f = assemble(Mesh1D(0.0, 1.0, 12))
    for A in (f.stiffness, f.mass):
        M = A.toarray()
        np.testing.assert_array_equal(M, M.T)


@pytest.mark.parametrize("n", [11, 101])
def test_trapezoid_rule_on_quadratic(n):
    # trapezoid error for x^2 on [0,1] is exactly h^2/6
    f = assemble(Mesh1D(0.0, 1.0, n))
    h = f.mesh.h
    assert integrate(f.x ** 2, f) == pytest.approx(1.0 / 3.0 + h * h / 6.0, rel=1e-13)


def test_norms_of_simple_fields():
    f = assemble(Mesh1D(0.0, 1.0, 101))
    x = f.x
    assert h1_seminorm(x, f) == pytest.approx(1.0, rel=1e-12)
    assert l2_norm(np.ones_like(x), f) == pytest.approx(1.0, rel=1e-14)
    assert lp_norm(2 * np.ones_like(x), f, 4) == pytest.approx(2.0, rel=1e-14)
    assert h1_norm(x, f) ** 2 == pytest.approx(1.0 + integrate(x * x, f), rel=1e-12)
    assert mean_value(x, f) == pytest.approx(0.5, rel=1e-14)
    assert integrate(zero_mean(x, f), f) == pytest.approx(0.0, abs=1e-15)
    assert dual_norm(f.weights, f) == pytest.approx(1.0, rel=1e-14)


def test_field_shape_checked():
    f = assemble(Mesh1D(0.0, 1.0, 10))
    with pytest.raises(ValueError):
        l2_norm(np.ones(9), f)


def test_neumann_poisson_second_order():
    # -u'' = pi^2 cos(pi x) with u' = 0 at both ends and zero mean: u = cos(pi x)
    errors = []
    for n in (21, 41, 81, 161):
        f = assemble(Mesh1D(0.0, 1.0, n))
        rhs = f.mass @ (np.pi ** 2 * np.cos(np.pi * f.x))
        u, mu = solve_bordered(f.stiffness, rhs, f, strict=True, rtol=1e-8)
        errors.append(np.max(np.abs(u - np.cos(np.pi * f.x))))
        assert abs(mu) < 1e-8
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(rates > 1.9)


def test_incompatible_rhs_raises():
    f = assemble(Mesh1D(0.0, 1.0, 30))
    with pytest.raises(IncompatibleRHSError):
        solve_bordered(f.stiffness, f.weights.copy(), f, strict=True)
    x, mu = solve_bordered(f.stiffness, f.weights.copy(), f)
    assert mu == pytest.approx(1.0, rel=1e-10)
    assert abs(f.weights @ x) < 1e-14


def test_dense_and_tridiagonal_bordered_agree():
    f = assemble(Mesh1D(0.0, 1.0, 25))
    rng = np.random.default_rng(3)
    A = f.stiffness.plus_diag(f.weights * rng.uniform(0.1, 1.0, f.n))
    b = rng.standard_normal(f.n)
    x1, mu1 = solve_bordered(A, b, f)
    x2, mu2 = solve_bordered(A.toarray(), b, f)
    np.testing.assert_allclose(x1, x2, rtol=1e-10, atol=1e-12)
    assert mu1 == pytest.approx(mu2, rel=1e-10)


def test_stiffness_condition_grows_like_h_minus_two():
    # power iteration for the largest eigenvalue of S on zero-mean fields,
    # inverse iteration with the bordered solve for the smallest
    conds = []
    for n in (20, 40, 80):
        f = assemble(Mesh1D(0.0, 1.0, n))
        rng = np.random.default_rng(0)
        v = zero_mean(rng.standard_normal(n), f)
        for _ in range(3000):
            v = f.stiffness @ v
            v /= np.linalg.norm(v)
        lmax = v @ (f.stiffness @ v)
        v = zero_mean(rng.standard_normal(n), f)
        for _ in range(200):
            v, _ = solve_bordered(f.stiffness, f.weights * v, f)
            v /= np.sqrt(f.weights @ v ** 2)
        lmin = (v @ (f.stiffness @ v)) / (f.weights @ v ** 2)
        conds.append(lmax / f.weights[1] / lmin)
    assert conds[1] / conds[0] == pytest.approx(4.0, rel=0.1)
    assert conds[2] / conds[1] == pytest.approx(4.0, rel=0.1)


def test_tridiag_quad_and_matvec():
    T = Tridiag(np.array([0.0, 1.0, 2.0]), np.array([4.0, 5.0, 6.0]),
                np.array([7.0, 8.0, 0.0]))
    x = np.array([1.0, -1.0, 2.0])
    np.testing.assert_allclose(T @ x, T.toarray() @ x)
    assert T.quad(x) == pytest.approx(x @ T.toarray() @ x)
