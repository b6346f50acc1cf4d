import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from quasineutral.adjoint import K_matrix, TrackingTargets, adjoint_rhs
from quasineutral.experiments import SweepRow, read_sweep_csv, write_sweep_csv
from quasineutral.fem import Mesh1D, assemble, integrate
from quasineutral.state import DopingProfile, solve_state, state_residual
from quasineutral.verify import apriori_bounds, energy_functional

values = st.floats(-2.0, 2.0, allow_nan=False)


@st.composite
def dopings(draw, min_nodes=5, max_nodes=40):
    n = draw(st.integers(min_nodes, max_nodes))
    C = np.array(draw(st.lists(values, min_size=n, max_size=n)))
    delta2 = draw(st.sampled_from([1e-6, 1e-4, 1e-2]))
    forms = assemble(Mesh1D(0.0, 1.0, n))
    return DopingProfile.build(forms, C, delta2)


lambdas = st.sampled_from([0.0, 1e-5, 1e-3, 1e-1])


@settings(max_examples=40, deadline=None)
@given(dopings(), lambdas)
def test_state_invariants(dp, lam2):
    sol = solve_state(dp, lam2, 1e-10)
    f = dp.forms
    assert abs(integrate(sol.V, f)) <= 1e-12 * max(1.0, np.max(np.abs(sol.V)))
    assert math.isclose(integrate(sol.n, f), dp.N, rel_tol=1e-8)
    assert math.isclose(integrate(sol.p, f), dp.P, rel_tol=1e-8)
    assert np.all(sol.n > 0) and np.all(sol.p > 0)
    assert state_residual(sol, dp) <= 1e-8 * (1.0 + np.max(np.abs(dp.C)))
    assert energy_functional(sol.V, dp, lam2) <= 1e-14


@settings(max_examples=40, deadline=None)
@given(dopings())
def test_zero_space_charge_identities(dp):
    sol = solve_state(dp, 0.0, 1e-12)
    np.testing.assert_allclose(sol.n - sol.p, dp.C, atol=1e-12)
    np.testing.assert_allclose(sol.n + sol.p, np.sqrt(4 * sol.gamma4 + dp.C ** 2),
                               rtol=1e-12)
    grad_ratio, dens_ratio = apriori_bounds(sol, dp)
    assert grad_ratio <= 1.0 + 1e-10 and dens_ratio >= 1.0 - 1e-10


@settings(max_examples=30, deadline=None)
@given(dopings(max_nodes=25), lambdas, st.integers(0, 2 ** 32 - 1))
def test_adjoint_operator_structure(dp, lam2, seed):
    sol = solve_state(dp, lam2, 1e-10)
    rng = np.random.default_rng(seed)
    t = TrackingTargets(rng.uniform(0, 2, dp.forms.n), rng.uniform(0, 2, dp.forms.n))
    w = dp.forms.weights
    WK = w[:, None] * K_matrix(sol)
    assert np.max(np.abs(WK - WK.T)) <= 1e-12 * np.max(np.abs(WK))
    f = adjoint_rhs(sol, t)
    assert abs(w @ f) <= 1e-13 * (1.0 + np.sum(w * np.abs(f)))


@settings(max_examples=30, deadline=None)
@given(dopings(max_nodes=15), st.floats(0.0, 2.0), st.integers(0, 2 ** 32 - 1))
def test_energy_convexity(dp, lam2, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, dp.forms.n))
    lhs = energy_functional(0.5 * (u + v), dp, lam2)
    rhs = 0.5 * (energy_functional(u, dp, lam2) + energy_functional(v, dp, lam2))
    assert lhs <= rhs + 1e-12 * (1.0 + abs(rhs))


finite = st.floats(allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite, finite, finite, finite,
                          st.integers(0, 10 ** 6)), min_size=0, max_size=6))
def test_sweep_csv_round_trip(tmp_path_factory, data):
    rows = [SweepRow(*vals, status="ok") for vals in data]
    path = write_sweep_csv(rows, tmp_path_factory.mktemp("rt") / "sweep.csv")
    assert read_sweep_csv(path) == rows
