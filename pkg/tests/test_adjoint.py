import numpy as np
import pytest

from quasineutral.adjoint import (
    K_matrix, TrackingTargets, adjoint_rhs, apply_K, multipliers, nonlocal_residual,
    solve_adjoint, solve_adjoint_lambda, solve_adjoint_zero,
)
from quasineutral.fem import solve_bordered
from quasineutral.state import solve_state


@pytest.fixture(scope="module")
def states(canonical200):
    from quasineutral.state import DopingProfile
    forms, C, targets = canonical200
    dp = DopingProfile.build(forms, C, 1e-6)
    return {lam: solve_state(dp, lam, 1e-11) for lam in (1e-3, 1e-5, 1e-8, 0.0)}, targets


def test_targets_validated():
    with pytest.raises(ValueError):
        TrackingTargets(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        TrackingTargets(np.array([1.0, np.nan]), np.ones(2))


@pytest.mark.parametrize("lam", [1e-3, 0.0])
def test_K_structure(states, lam):
    sols, targets = states
    sol = sols[lam]
    w = sol.forms.weights
    WK = w[:, None] * K_matrix(sol)
    assert np.max(np.abs(WK - WK.T)) <= 1e-12 * np.max(np.abs(WK))
    np.testing.assert_allclose(apply_K(np.ones(w.size), sol), 0.0, atol=1e-14)
    h = np.sin(9 * sol.forms.x)
    np.testing.assert_allclose(apply_K(h, sol), K_matrix(sol) @ h, atol=1e-13)
    f = adjoint_rhs(sol, targets)
    assert abs(w @ f) <= 1e-14 * np.sum(w * np.abs(f))


@pytest.mark.parametrize("lam", [1e-3, 1e-5, 1e-8])
def test_fixed_point_matches_dense_nonlocal_solve(states, lam):
    sols, targets = states
    sol = sols[lam]
    forms = sol.forms
    w = forms.weights
    A = lam * forms.stiffness.toarray() + w[:, None] * K_matrix(sol)
    xi_ref, _ = solve_bordered(A, w * adjoint_rhs(sol, targets), forms)
    adj = solve_adjoint(sol, targets, 1e-11)
    scale = np.max(np.abs(xi_ref))
    assert np.max(np.abs(adj.xi - xi_ref)) <= 1e-7 * scale
    assert adj.residual < 1e-10
    xa, xb = multipliers(xi_ref, sol, targets)
    assert adj.xi_alpha == pytest.approx(xa, rel=1e-6, abs=1e-12)
    assert adj.xi_beta == pytest.approx(xb, rel=1e-6, abs=1e-12)


def test_plain_and_anderson_agree(states):
    sols, targets = states
    sol = sols[1e-3]
    fast = solve_adjoint_lambda(sol, targets, 1e-11)
    slow = solve_adjoint_lambda(sol, targets, 1e-11, accelerate=False)
    np.testing.assert_allclose(fast.xi, slow.xi, atol=1e-8)
    assert fast.iterations < slow.iterations


def test_zero_space_charge_adjoint(states):
    sols, targets = states
    adj = solve_adjoint_zero(sols[0.0], targets)
    assert abs(sols[0.0].forms.weights @ adj.xi) < 1e-14
    assert nonlocal_residual(adj.xi, sols[0.0], targets) < 1e-12


def test_lambda_solver_rejects_zero_state(states):
    sols, targets = states
    with pytest.raises(ValueError):
        solve_adjoint_lambda(sols[0.0], targets)


def test_exact_targets_give_zero_adjoint(states):
    sols, _ = states
    for lam in (1e-3, 0.0):
        sol = sols[lam]
        adj = solve_adjoint(sol, TrackingTargets(sol.n, sol.p))
        np.testing.assert_allclose(adj.xi, 0.0, atol=1e-12)
        assert abs(adj.xi_alpha) < 1e-12 and abs(adj.xi_beta) < 1e-12
