"""Tracking cost, reduced cost and its Riesz gradient.

With the control ``u = C - C_ref`` (zero mean) the cost is

    J = 1/2 |n - n_d|^2 + 1/2 |p - p_d|^2 + sigma/2 u^T S u,

the first two terms in the lumped ``w``-weighted norm. The derivative of the
reduced cost in a zero-mean direction ``h`` is ``h @ d`` with

    d = sigma S u + W xi - W (xi_alpha H+(C) + xi_beta H-(C)),

where the last term accounts for the totals ``N, P`` following ``C``
(``H+`` is 1 on ``C > 0``, 1/2 on ``C = 0``, 0 on ``C < 0``; ``H- = 1 - H+``).
It drops out when the totals are frozen. The gradient ``g`` is the
representative of ``d`` in the inner product ``(g, h)_Y = g^T S h`` on
zero-mean fields.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointSolution, TrackingTargets, solve_adjoint
from .fem import AssembledForms, solve_bordered
from .state import DEFAULT_TOL, DopingProfile, StateSolution, solve_state


@dataclass(frozen=True)
class CostBreakdown:
    """Electron tracking, hole tracking and regularization terms."""

    J1: float
    J2: float
    J3: float

    @property
    def total(self) -> float:
        return self.J1 + self.J2 + self.J3

    def as_dict(self):
        return {"J": self.total, "J1": self.J1, "J2": self.J2, "J3": self.J3}


@dataclass(frozen=True)
class GradientField:
    """Zero-mean Riesz gradient ``g`` with ``norm_Y = sqrt(g^T S g)``."""

    g: np.ndarray
    norm_Y: float
    derivative: np.ndarray = field(repr=False)


def evaluate_cost(sol: StateSolution, dp: DopingProfile, targets: TrackingTargets,
                  sigma: float) -> CostBreakdown:
    w = dp.forms.weights
    en = sol.n - targets.n_d
    ep = sol.p - targets.p_d
    u = dp.C - dp.C_ref
    J1 = 0.5 * float(w @ (en * en))
    J2 = 0.5 * float(w @ (ep * ep))
    J3 = 0.5 * sigma * max(dp.forms.stiffness.quad(u), 0.0)
    return CostBreakdown(J1, J2, J3)


def heaviside_split(C, rtol=1e-12):
    """``(H+, H-)`` of the doping with the midpoint value at ``C = 0``.

    Values within ``rtol * max(1, max|C|)`` of zero count as zero, so
    round-off from re-centering the control does not pick a one-sided value.
    """
    C = np.asarray(C, dtype=float)
    zero = rtol * max(1.0, float(np.max(np.abs(C))))
    hp = np.where(C > zero, 1.0, np.where(C < -zero, 0.0, 0.5))
    return hp, 1.0 - hp


def cost_derivative(u, adj: AdjointSolution, forms: AssembledForms, sigma: float,
                    C=None, freeze_totals=False) -> np.ndarray:
    """Nodal derivative vector ``d`` of the reduced cost (see module docs)."""
    w = forms.weights
    d = sigma * forms.stiffness.matvec(np.asarray(u, float)) + w * adj.xi
    if not freeze_totals:
        if C is None:
            raise ValueError("the doping is needed for the totals sensitivity")
        hp, hm = heaviside_split(C)
        d -= w * (adj.xi_alpha * hp + adj.xi_beta * hm)
    return d


def riesz_gradient(u, adj: AdjointSolution, forms: AssembledForms, sigma: float,
                   C=None, freeze_totals=False) -> GradientField:
    """Solve ``S g + mu w = d``, ``w @ g = 0`` for the Riesz gradient."""
    d = cost_derivative(u, adj, forms, sigma, C, freeze_totals)
    g, _ = solve_bordered(forms.stiffness, d, forms)
    return GradientField(g, math.sqrt(max(forms.stiffness.quad(g), 0.0)), d)


@dataclass
class Evaluation:
    """Everything computed at one control."""

    u: np.ndarray
    profile: DopingProfile
    state: StateSolution
    cost: CostBreakdown
    adjoint: AdjointSolution | None = None
    gradient: GradientField | None = None


@dataclass
class DesignProblem:
    """Reduced design problem around a reference doping.

    Holds the mesh forms, reference profile, targets and solver parameters so
    the optimizer and the finite-difference oracle evaluate the same map
    ``u -> J(Phi(C_ref + u), C_ref + u)``.
    """

    forms: AssembledForms
    C_ref: np.ndarray
    targets: TrackingTargets
    sigma: float = 1e-4
    lambda2: float = 0.0
    delta2: float = 1e-6
    tol: float = DEFAULT_TOL
    freeze_totals: bool = False
    adjoint_tol: float | None = None

    def __post_init__(self):
        self.C_ref = np.asarray(self.C_ref, dtype=float)
        self.reference = DopingProfile.build(self.forms, self.C_ref, self.delta2)
        if self.targets.n_d.shape != self.C_ref.shape:
            raise ValueError("targets and reference doping differ in length")
        if not self.sigma > 0.0:
            raise ValueError("sigma must be positive")

    def profile(self, u) -> DopingProfile:
        return self.reference.with_control(u, freeze_totals=self.freeze_totals)

    def evaluate(self, u, *, gradient=False) -> Evaluation:
        u = np.asarray(u, dtype=float)
        dp = self.profile(u)
        sol = solve_state(dp, self.lambda2, self.tol)
        ev = Evaluation(u, dp, sol, evaluate_cost(sol, dp, self.targets, self.sigma))
        if gradient:
            self.add_adjoint(ev)
            self.add_gradient(ev)
        return ev

    def add_adjoint(self, ev: Evaluation) -> AdjointSolution:
        atol = self.tol if self.adjoint_tol is None else self.adjoint_tol
        ev.adjoint = solve_adjoint(ev.state, self.targets, atol)
        return ev.adjoint

    def add_gradient(self, ev: Evaluation) -> GradientField:
        if ev.adjoint is None:
            self.add_adjoint(ev)
        ev.gradient = riesz_gradient(ev.u, ev.adjoint, self.forms, self.sigma,
                                     ev.profile.C, self.freeze_totals)
        return ev.gradient

    def reduced_cost(self, u) -> CostBreakdown:
        return self.evaluate(u).cost


def reduced_cost(u, dp_base: DopingProfile, targets: TrackingTargets, sigma: float,
                 lambda2: float, tol: float = DEFAULT_TOL, *,
                 freeze_totals=False) -> CostBreakdown:
    """Cost of ``C = C_ref + u`` after a fresh state solve."""
    dp = dp_base.with_control(u, freeze_totals=freeze_totals)
    sol = solve_state(dp, lambda2, tol)
    return evaluate_cost(sol, dp, targets, sigma)
