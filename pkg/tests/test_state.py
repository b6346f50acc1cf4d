import numpy as np
import pytest

from quasineutral.errors import InadmissibleProfileError
from quasineutral.fem import Mesh1D, assemble, integrate
from quasineutral.state import (
    ChargeTotals, DopingProfile, newton_aux_solve, solve_state, solve_state_lambda,
    solve_state_zero, state_residual,
)
from quasineutral.verify import brute_force_state, tiny_cases


def _forms(n=60):
    return assemble(Mesh1D(0.0, 1.0, n))


@pytest.mark.parametrize("c", [0.0, 0.5, -0.3])
@pytest.mark.parametrize("lam2", [1e-2, 1e-6, 0.0])
def test_constant_doping_gives_flat_potential(c, lam2):
    f = _forms()
    dp = DopingProfile.build(f, np.full(f.n, c), 1e-6)
    sol = solve_state(dp, lam2)
    assert np.max(np.abs(sol.V)) <= 1e-10
    np.testing.assert_allclose(sol.n - sol.p - c, 0.0, atol=1e-10)


def test_totals_from_doping():
    f = _forms(101)
    C = np.where(f.x < 0.5, 1.0, -0.5)
    t = ChargeTotals.from_doping(C, f, 1e-6)
    h = f.mesh.h
    # nodes 0..49 carry +1 and nodes 50..100 carry -0.5 (trapezoid weights)
    assert t.N == pytest.approx(1e-6 + h * (0.5 + 49), rel=1e-12)
    assert t.P == pytest.approx(1e-6 + 0.5 * h * (0.5 + 50), rel=1e-12)


def test_inadmissible_totals_rejected():
    with pytest.raises(InadmissibleProfileError):
        ChargeTotals(-1.0, 1.0, 1e-6).check()
    f = _forms(10)
    with pytest.raises(ValueError):
        DopingProfile.build(f, np.zeros(9), 1e-6)
    with pytest.raises(ValueError):
        DopingProfile.build(f, np.zeros(10), 0.0)


def test_profile_is_immutable(profile200):
    with pytest.raises(ValueError):
        profile200.C[0] = 1.0


@pytest.mark.parametrize("lam2", [1e-2, 1e-4, 1e-7, 0.0])
def test_solution_invariants(profile200, lam2):
    dp = profile200
    sol = solve_state(dp, lam2, 1e-10)
    f = dp.forms
    assert abs(integrate(sol.V, f)) < 1e-13
    assert integrate(sol.n, f) == pytest.approx(dp.N, rel=1e-9)
    assert integrate(sol.p, f) == pytest.approx(dp.P, rel=1e-9)
    assert np.all(sol.n > 0) and np.all(sol.p > 0)
    assert state_residual(sol, dp) < 1e-9
    np.testing.assert_allclose(sol.n, sol.alpha * np.exp(-sol.V), rtol=1e-10)
    np.testing.assert_allclose(sol.p, sol.beta * np.exp(sol.V), rtol=1e-10)


def test_zero_space_charge_closed_form(profile200):
    sol = solve_state_zero(profile200, 1e-12)
    np.testing.assert_allclose(sol.n - sol.p, profile200.C, atol=1e-12)
    np.testing.assert_allclose(sol.n * sol.p, sol.gamma4, rtol=1e-10)


@pytest.mark.parametrize("lam2, delta2", [(1e-1, 1e-4), (0.0, 0.5)])
def test_literal_and_accelerated_agree(lam2, delta2):
    f = _forms(40)
    C = 0.8 * np.cos(np.pi * f.x) + 0.1
    dp = DopingProfile.build(f, C, delta2)
    fast = solve_state(dp, lam2, 1e-10)
    slow = solve_state(dp, lam2, 1e-10, accelerate=False)
    np.testing.assert_allclose(fast.V, slow.V, atol=1e-7)
    assert slow.iterations >= fast.iterations


def test_history_logged(profile200):
    sol = solve_state_lambda(profile200, 1e-4)
    assert sol.history and {"iteration", "mismatch", "dV_H1"} <= set(sol.history[0])
    assert sol.iterations == len(sol.history)


def test_warm_start_reaches_same_state(profile200):
    cold = solve_state(profile200, 1e-5, 1e-10)
    warm = solve_state(profile200, 1e-5, 1e-10, initial=cold)
    np.testing.assert_allclose(warm.V, cold.V, atol=1e-8)
    assert warm.iterations <= cold.iterations


def test_aux_problem_residual():
    f = _forms(30)
    C = np.sin(2 * np.pi * f.x)
    V, its, res = newton_aux_solve(f, C, 0.3, 0.7, 1e-2, tol=1e-13)
    r = 1e-2 * (f.stiffness @ V) + f.weights * (0.7 * np.exp(V) - 0.3 * np.exp(-V) + C)
    r -= f.weights * r.sum() / f.weights.sum()
    assert np.max(np.abs(r / f.weights)) < 1e-9


def test_frozen_totals_without_solution_at_zero_space_charge():
    f = _forms(30)
    C_ref = np.where(f.x < 0.5, 1.0, -1.0)
    base = DopingProfile.build(f, C_ref, 1e-6)
    dp = base.with_control(np.where(f.x < 0.5, 0.5, -0.5), freeze_totals=True)
    with pytest.raises(InadmissibleProfileError):
        solve_state_zero(dp)


@pytest.mark.parametrize("case", range(len(tiny_cases())))
def test_matches_energy_minimizer(case):
    dp, lam2 = tiny_cases()[case]
    ref = brute_force_state(dp, lam2)
    V = solve_state(dp, lam2, 1e-12).V
    assert np.max(np.abs(V - ref)) <= 1e-6


def test_zero_doping_minimizer_is_zero():
    f = _forms(5)
    dp = DopingProfile.build(f, np.zeros(5), 1e-6)
    np.testing.assert_allclose(brute_force_state(dp, 1e-2), 0.0, atol=1e-12)


def test_potential_approaches_zero_space_charge_limit(profile200):
    V0 = solve_state(profile200, 0.0, 1e-10).V
    gaps = [np.linalg.norm(solve_state(profile200, lam, 1e-10).V - V0)
            for lam in (1e-3, 1e-5, 1e-7, 1e-9)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
