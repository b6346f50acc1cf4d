import math

import numpy as np
import pytest

from quasineutral.errors import ConfigError, LineSearchError, SolverError
from quasineutral.objective import CostBreakdown, DesignProblem, GradientField
from quasineutral.optimize import OptimizerConfig, armijo_step, optimize


@pytest.mark.parametrize("kw", [
    {"sigma": 0.0}, {"omega0": -1.0}, {"gamma_armijo": 1.5}, {"max_iter": 0},
    {"tol_opt": math.nan}, {"lambda2": -1e-3}, {"max_armijo_halvings": 2.5},
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        OptimizerConfig(**kw)


def _quadratic(u):
    return CostBreakdown(0.5 * float(u @ u), 0.0, 0.0)


def test_armijo_halvings_on_quadratic():
    # (1 - w)^2 <= 1 - 2 gamma w first holds at w = 50 / 2^5
    u = np.array([1.0, -2.0, 0.5])
    grad = GradientField(u.copy(), float(np.linalg.norm(u)), u.copy())
    omega, u_next, cost, halvings = armijo_step(u, grad, _quadratic(u), OptimizerConfig(),
                                                _quadratic)
    assert halvings == 5 and omega == 50.0 / 32
    np.testing.assert_allclose(u_next, (1 - omega) * u)


def test_armijo_treats_solver_failure_as_rejection():
    u = np.array([1.0, 0.0])
    grad = GradientField(u.copy(), 1.0, u.copy())

    def evaluate(v):
        if abs(v[0]) > 2.0:
            raise SolverError("probe failed")
        return _quadratic(v)

    omega, *_ = armijo_step(u, grad, _quadratic(u), OptimizerConfig(), evaluate)
    assert omega <= 1.5625


def test_literal_signs_on_descent_problem_fails():
    u = np.array([1.0, 0.0])
    grad = GradientField(u.copy(), 1.0, u.copy())
    cfg = OptimizerConfig(literal_signs=True, max_armijo_halvings=60)
    with pytest.raises(LineSearchError):
        armijo_step(u, grad, _quadratic(u), cfg, _quadratic)


@pytest.mark.parametrize("lam", [1e-4, 0.0])
def test_descent_run(canonical50, lam):
    forms, C, targets = canonical50
    problem = DesignProblem(forms, C, targets, lambda2=lam)
    run = optimize(problem, OptimizerConfig(lambda2=lam))
    assert run.converged and run.iterations <= 500
    costs = run.costs
    assert all(b < a for a, b in zip(costs, costs[1:]))
    assert costs[-1] > 0.0
    assert abs(forms.weights @ run.iterates[-1].u) < 1e-13
    assert run.wall_times["total"] >= run.wall_times["state"] > 0.0
    g0 = run.iterates[0].grad_norm
    assert run.iterates[-1].grad_norm <= max(0.05 * g0, 5e-5)


def test_iteration_cap_reported(canonical50):
    forms, C, targets = canonical50
    problem = DesignProblem(forms, C, targets)
    run = optimize(problem, OptimizerConfig(max_iter=2, tol_opt=1e-12, tol_abs=1e-14))
    assert not run.converged and run.stop_reason == "iteration cap"
    assert run.iterations == 2


def test_failure_attaches_partial_run(canonical50):
    forms, C, targets = canonical50
    problem = DesignProblem(forms, C, targets)
    with pytest.raises(LineSearchError) as info:
        optimize(problem, OptimizerConfig(literal_signs=True, max_armijo_halvings=3))
    assert info.value.run.iterates and info.value.run.stop_reason.startswith("failed")
