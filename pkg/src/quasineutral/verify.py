"""Independent oracles: energy minimization, finite differences, a priori bounds.

Nothing here calls the production Newton or fixed-point solvers inside its
own minimization path; the brute-force state uses a generic trust-region
minimizer on the convex energy whose stationarity condition is the discrete
state equation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize

from .errors import ConfigError, SolverError
from .fem import h1_seminorm, solve_bordered
from .objective import DesignProblem
from .state import DopingProfile, solve_state

BRUTE_FORCE_MAX_NODES = 7
# Oracle thresholds, declared once.
BRUTE_FORCE_TOL = 1e-6
GRADCHECK_TOL = 1e-4
FD_EPS = 1e-6
FD_INNER_TOL = 1e-12
LOG_OVERFLOW = 700.0


@dataclass
class OracleReport:
    """Outcome of one oracle comparison; ``passed`` iff ``max_rel_err <= threshold``."""

    name: str
    max_abs_err: float
    max_rel_err: float
    threshold: float
    details: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err <= self.threshold)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{self.name}: {verdict} max_abs_err={self.max_abs_err:.3e} "
                f"max_rel_err={self.max_rel_err:.3e} (threshold {self.threshold:g})")


def _log_mean_exp(s, w):
    if np.max(np.abs(s)) > LOG_OVERFLOW:
        raise SolverError(f"potential out of representable range (|V| > {LOG_OVERFLOW:g})")
    # the shifted sum reduces to sum(w) / sum(w) for constant s, so constants map to 0
    m = float(np.max(s))
    return m + math.log(np.sum(w * np.exp(s - m)) / np.sum(w))


def energy_functional(V, dp: DopingProfile, lambda2: float) -> float:
    """Discrete convex energy whose minimizer over zero-mean fields is the state.

    ``lambda2/2 V^T S V + N log(mean e^{-V}) + P log(mean e^{V}) + w @ (C V)``,
    all integrals lumped. It vanishes at every constant field.
    """
    forms = dp.forms
    V = np.asarray(V, dtype=float)
    w = forms.weights
    return (0.5 * lambda2 * forms.stiffness.quad(V)
            + dp.N * _log_mean_exp(-V, w)
            + dp.P * _log_mean_exp(V, w)
            + float(w @ (dp.C * V)))


def _energy_derivatives(V, dp: DopingProfile, lambda2: float):
    forms = dp.forms
    w = forms.weights
    S = forms.stiffness.toarray()
    a = w * np.exp(-V - np.max(-V))
    b = w * np.exp(V - np.max(V))
    a /= a.sum()
    b /= b.sum()
    grad = lambda2 * (S @ V) - dp.N * a + dp.P * b + w * dp.C
    hess = (lambda2 * S + dp.N * (np.diag(a) - np.outer(a, a))
            + dp.P * (np.diag(b) - np.outer(b, b)))
    return grad, hess


def brute_force_state(dp: DopingProfile, lambda2: float, gtol=1e-13) -> np.ndarray:
    """Minimize :func:`energy_functional` over zero-mean nodal fields.

    Uses ``scipy.optimize.minimize`` (trust-exact) on coordinates of an
    orthonormal basis of the constraint space. Limited to tiny meshes.
    """
    forms = dp.forms
    if forms.n > BRUTE_FORCE_MAX_NODES:
        raise ConfigError(f"brute_force_state: at most {BRUTE_FORCE_MAX_NODES} nodes")
    Q = null_space(forms.weights[None, :])

    def fun(z):
        return energy_functional(Q @ z, dp, lambda2)

    def jac(z):
        return Q.T @ _energy_derivatives(Q @ z, dp, lambda2)[0]

    def hess(z):
        H = _energy_derivatives(Q @ z, dp, lambda2)[1]
        return Q.T @ H @ Q

    res = minimize(fun, np.zeros(Q.shape[1]), jac=jac, hess=hess, method="trust-exact",
                   options={"gtol": gtol, "maxiter": 2000})
    # Minority-carrier directions have curvature near delta2, so a small
    # gradient still leaves a visible error; polish with full Newton steps
    # while the gradient keeps shrinking.
    z = res.x
    gnorm = np.linalg.norm(jac(z))
    for _ in range(50):
        z_new = z - np.linalg.solve(hess(z), jac(z))
        g_new = np.linalg.norm(jac(z_new))
        if not g_new < gnorm:
            break
        z, gnorm = z_new, g_new
    return Q @ z


def brute_force_report(cases, tol=1e-12) -> OracleReport:
    """Compare ``solve_state`` with :func:`brute_force_state` on ``(dp, lambda2)`` cases."""
    details = []
    worst_abs = worst_rel = 0.0
    for dp, lam2 in cases:
        ref = brute_force_state(dp, lam2)
        V = solve_state(dp, lam2, tol).V
        err = float(np.max(np.abs(V - ref)))
        worst_abs = max(worst_abs, err)
        worst_rel = max(worst_rel, err)
        details.append({"lambda2": lam2, "n_nodes": dp.forms.n, "linf_err": err})
    # The comparison is absolute in L-infinity.
    return OracleReport("brute-force state", worst_abs, worst_rel, BRUTE_FORCE_TOL, details)


def _zero_mean_basis(forms, i):
    e = np.zeros(forms.n)
    e[i] = 1.0
    return e - forms.weights[i] / forms.measure


def fd_derivative(u, problem: DesignProblem, eps: float = FD_EPS) -> np.ndarray:
    """Central differences of the reduced cost along each zero-mean nodal direction."""
    if not 1e-8 <= eps <= 1e-4:
        raise ConfigError(f"eps: must lie in [1e-8, 1e-4], got {eps!r}")
    u = np.asarray(u, dtype=float)
    d = np.empty(problem.forms.n)
    for i in range(problem.forms.n):
        e = _zero_mean_basis(problem.forms, i)
        jp = problem.reduced_cost(u + eps * e).total
        jm = problem.reduced_cost(u - eps * e).total
        d[i] = (jp - jm) / (2.0 * eps)
    return d


def fd_gradient(u, problem: DesignProblem, eps: float = FD_EPS) -> np.ndarray:
    """Riesz representative of the finite-difference derivative (zero mean).

    Components of the derivative along the weights drop out of the bordered
    solve, so projected basis directions give the same gradient as the
    analytic path.
    """
    d = fd_derivative(u, problem, eps)
    g, _ = solve_bordered(problem.forms.stiffness, d, problem.forms)
    return g


def directional_fd(u, problem: DesignProblem, h, eps: float = FD_EPS) -> float:
    """Central difference of the reduced cost along ``h``."""
    u = np.asarray(u, dtype=float)
    return (problem.reduced_cost(u + eps * h).total
            - problem.reduced_cost(u - eps * h).total) / (2.0 * eps)


def random_directions(forms, count, seed):
    """Zero-mean random directions with unit H1 seminorm."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        h = rng.standard_normal(forms.n)
        h -= (forms.weights @ h) / forms.measure
        out.append(h / h1_seminorm(h, forms))
    return out


def gradient_check(problem: DesignProblem, u=None, *, directions=5, seed=0,
                   eps: float = FD_EPS) -> OracleReport:
    """Compare ``dJ(u)[h] = (g, h)_Y`` with central differences along random ``h``.

    The relative error of a direction is ``|a - f| / max(|a|, |f|)`` for the
    analytic value ``a = (g, h)_Y`` and the difference quotient ``f``.
    """
    forms = problem.forms
    u = np.zeros(forms.n) if u is None else np.asarray(u, dtype=float)
    ev = problem.evaluate(u, gradient=True)
    g = ev.gradient
    details = []
    worst_abs = worst_rel = 0.0
    for h in random_directions(forms, directions, seed):
        analytic = forms.stiffness.quad(g.g, h)
        fd = directional_fd(u, problem, h, eps)
        err = abs(analytic - fd)
        scale = max(abs(analytic), abs(fd), np.finfo(float).tiny)
        worst_abs = max(worst_abs, err)
        worst_rel = max(worst_rel, err / scale)
        details.append({"analytic": analytic, "fd": fd, "abs_err": err,
                        "rel_err": err / scale})
    return OracleReport(f"gradient check (lambda2={problem.lambda2:g})", worst_abs,
                        worst_rel, GRADCHECK_TOL, details)


def apriori_bounds(sol, dp: DopingProfile):
    """Slack in the zero-space-charge bounds.

    Returns ``(gradient_ratio, density_ratio)`` where
    ``gradient_ratio = gamma^2 |V|_{H1} / (0.5 |C|_{H1})`` and
    ``density_ratio = min(n + p) / (2 gamma^2)``.
    """
    forms = dp.forms
    g2 = sol.gamma2
    cgrad = h1_seminorm(dp.C, forms)
    vgrad = h1_seminorm(sol.V, forms)
    grad_ratio = 0.0 if vgrad == 0.0 else g2 * vgrad / (0.5 * cgrad)
    return grad_ratio, float(np.min(sol.n + sol.p)) / (2.0 * g2)


# Tiny sign-changing instances: (doping, lambda2, delta2).
TINY_CORPUS = (
    ((0.0, 0.3, 0.0, -0.3, 0.0), 1e-2, 1e-6),
    ((0.0, 0.3, 0.0, -0.3, 0.0), 0.0, 1e-6),
    ((1.0, 0.5, -0.2, -0.8, 0.1, 0.4), 1e-3, 1e-6),
    ((1.0, 0.5, -0.2, -0.8, 0.1, 0.4), 0.0, 1e-6),
    ((-0.6, -0.1, 0.2, 0.9, 0.9, 0.2, -0.4), 1e-2, 1e-4),
    ((-0.6, -0.1, 0.2, 0.9, 0.9, 0.2, -0.4), 0.0, 1e-4),
    ((2.0, 2.0, 0.5, -1.0, -1.5), 1e-3, 1e-2),
    ((2.0, 2.0, 0.5, -1.0, -1.5), 0.0, 1e-2),
    ((0.05, -0.02, 0.01, -0.04, 0.03, -0.01), 1e-1, 1e-6),
    ((0.05, -0.02, 0.01, -0.04, 0.03, -0.01), 0.0, 1e-6),
    ((1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0), 1e-4, 1e-6),
    ((1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0), 0.0, 1e-6),
)


def tiny_cases(corpus=TINY_CORPUS):
    """``(DopingProfile, lambda2)`` pairs on the unit interval for the corpus."""
    from .fem import Mesh1D, assemble

    cases = []
    for C, lam2, delta2 in corpus:
        forms = assemble(Mesh1D(0.0, 1.0, len(C)))
        cases.append((DopingProfile.build(forms, np.array(C, float), delta2), lam2))
    return cases
