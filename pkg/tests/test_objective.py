import numpy as np
import pytest

from quasineutral.adjoint import TrackingTargets
from quasineutral.objective import DesignProblem, evaluate_cost, heaviside_split, reduced_cost
from quasineutral.state import DopingProfile, solve_state
from quasineutral.verify import fd_gradient

from conftest import smooth_zero_mean


def test_heaviside_midpoint_and_threshold():
    hp, hm = heaviside_split(np.array([2.0, 0.0, -1.0, 1e-17, -1e-17]))
    np.testing.assert_array_equal(hp, [1.0, 0.5, 0.0, 0.5, 0.5])
    np.testing.assert_array_equal(hp + hm, 1.0)


def test_cost_terms(canonical50):
    forms, C, targets = canonical50
    dp = DopingProfile.build(forms, C, 1e-6)
    sol = solve_state(dp, 1e-3)
    cost = evaluate_cost(sol, dp, targets, 1e-4)
    w = forms.weights
    assert cost.J1 == pytest.approx(0.5 * w @ (sol.n - targets.n_d) ** 2)
    assert cost.J2 == pytest.approx(0.5 * w @ (sol.p - targets.p_d) ** 2)
    assert cost.J3 == 0.0
    assert cost.as_dict()["J"] == cost.total > 0.0


def test_regularization_term(canonical50):
    forms, C, targets = canonical50
    problem = DesignProblem(forms, C, targets, sigma=2e-3, lambda2=1e-3)
    u = smooth_zero_mean(forms)
    assert problem.evaluate(u).cost.J3 == pytest.approx(1e-3 * forms.stiffness.quad(u))
    base = DopingProfile.build(forms, C, 1e-6)
    assert reduced_cost(u, base, targets, 2e-3, 1e-3).total == pytest.approx(
        problem.reduced_cost(u).total, rel=1e-10)


@pytest.mark.parametrize("lam", [1e-3, 1e-5, 0.0])
@pytest.mark.parametrize("freeze", [False, True])
def test_gradient_matches_finite_differences(canonical50, lam, freeze):
    forms, C, targets = canonical50
    problem = DesignProblem(forms, C, targets, lambda2=lam, tol=1e-12,
                            freeze_totals=freeze)
    u = smooth_zero_mean(forms, amp=0.02)
    g = problem.evaluate(u, gradient=True).gradient
    g_fd = fd_gradient(u, problem)
    assert np.max(np.abs(g.g - g_fd)) <= 1e-5 * np.max(np.abs(g.g))


def test_riesz_representation(canonical50):
    forms, C, targets = canonical50
    problem = DesignProblem(forms, C, targets, lambda2=1e-4)
    ev = problem.evaluate(np.zeros(forms.n), gradient=True)
    g = ev.gradient
    w = forms.weights
    assert abs(w @ g.g) < 1e-14
    r = forms.stiffness @ g.g - g.derivative
    # residual is a multiple of the weights
    np.testing.assert_allclose(r / w, (r / w)[0], atol=1e-10 * np.max(np.abs(g.derivative / w)))
    assert g.norm_Y == pytest.approx(np.sqrt(g.g @ (forms.stiffness @ g.g)))


def test_attainable_targets_give_zero_gradient(canonical50):
    forms, C, _ = canonical50
    dp = DopingProfile.build(forms, C, 1e-6)
    sol = solve_state(dp, 1e-3, 1e-12)
    problem = DesignProblem(forms, C, TrackingTargets(sol.n, sol.p), lambda2=1e-3, tol=1e-12)
    ev = problem.evaluate(np.zeros(forms.n), gradient=True)
    assert ev.cost.total < 1e-20
    assert ev.gradient.norm_Y < 1e-9
