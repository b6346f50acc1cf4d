"""Adjoint solvers for the tracking functional.

The adjoint ``xi`` solves the nonlocal problem

    lam2 * S xi + W K[xi] = W (K_n[n - n_d] - K_p[p - p_d]),   w @ xi = 0,

with ``K_n[h] = n (h - (w @ (n h)) / N)``, ``K_p`` likewise and ``K = K_n + K_p``.
For ``lam2 > 0`` the nonlocal coupling is moved to two scalar multipliers

    xi_alpha = (w @ (n (xi - (n - n_d)))) / N,
    xi_beta  = (w @ (p (xi + (p - p_d)))) / P,

leaving a sparse local problem per fixed-point sweep. For ``lam2 = 0`` the
dense Fredholm system ``W K xi = W f`` is solved directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .fem import Tridiag, dual_norm, h1_norm, solve_bordered
from .state import StateSolution

MAX_ITER = 10_000
ANDERSON_DEPTH = 2


@dataclass(frozen=True)
class TrackingTargets:
    """Desired electron and hole densities."""

    n_d: np.ndarray
    p_d: np.ndarray

    def __post_init__(self):
        for name in ("n_d", "p_d"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: need a finite nodal vector")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.n_d.shape != self.p_d.shape:
            raise ValueError("n_d and p_d must have the same length")


@dataclass
class AdjointSolution:
    """Zero-mean adjoint field with its scalar multipliers."""

    xi: np.ndarray
    xi_alpha: float
    xi_beta: float
    lambda2: float
    iterations: int
    residual: float
    history: list = field(default_factory=list, repr=False)


def _totals(sol: StateSolution):
    w = sol.forms.weights
    return float(w @ sol.n), float(w @ sol.p)


def apply_K(h, sol: StateSolution) -> np.ndarray:
    """Nodal ``K_n[h] + K_p[h]`` with lumped quadrature for the inner integrals."""
    w = sol.forms.weights
    h = np.asarray(h, dtype=float)
    N, P = _totals(sol)
    n, p = sol.n, sol.p
    return n * (h - (w @ (n * h)) / N) + p * (h - (w @ (p * h)) / P)


def K_matrix(sol: StateSolution) -> np.ndarray:
    """Dense matrix of ``h -> K[h]``: ``diag(n + p) - H``."""
    w = sol.forms.weights
    N, P = _totals(sol)
    n, p = sol.n, sol.p
    H = np.outer(n, n * w) / N + np.outer(p, p * w) / P
    return np.diag(n + p) - H


def adjoint_rhs(sol: StateSolution, targets: TrackingTargets) -> np.ndarray:
    """Nodal ``f = K_n[n - n_d] - K_p[p - p_d]``; integrates to zero."""
    w = sol.forms.weights
    N, P = _totals(sol)
    n, p = sol.n, sol.p
    en = n - targets.n_d
    ep = p - targets.p_d
    return n * (en - (w @ (n * en)) / N) - p * (ep - (w @ (p * ep)) / P)


def multipliers(xi, sol: StateSolution, targets: TrackingTargets):
    """``(xi_alpha, xi_beta)`` for a given adjoint field."""
    w = sol.forms.weights
    N, P = _totals(sol)
    n, p = sol.n, sol.p
    xa = float(w @ (n * (xi - (n - targets.n_d)))) / N
    xb = float(w @ (p * (xi + (p - targets.p_d)))) / P
    return xa, xb


def nonlocal_residual(xi, sol: StateSolution, targets: TrackingTargets) -> float:
    """Dual norm of ``lam2 S xi + W (K[xi] - f)`` on the zero-mean subspace."""
    forms = sol.forms
    w = forms.weights
    r = sol.lambda2 * forms.stiffness.matvec(np.asarray(xi, float))
    r += w * (apply_K(xi, sol) - adjoint_rhs(sol, targets))
    r -= w * (r.sum() / w.sum())
    return dual_norm(r, forms)


def _check_targets(sol, targets):
    if targets.n_d.shape != sol.n.shape:
        raise ValueError("targets and state live on different meshes")


def solve_adjoint_lambda(sol: StateSolution, targets: TrackingTargets,
                         tol: float = 1e-8, *, accelerate=True, max_iter=MAX_ITER):
    """Fixed-point adjoint solver for ``lambda2 > 0``.

    Each sweep solves the bordered local problem

        lam2 S xi + W (n + p) xi + mu w = W (n(n - n_d) - p(p - p_d)
                                            + n xi_alpha + p xi_beta),

    re-centers ``xi`` and updates the multipliers; it stops once
    ``||xi_k - xi_{k-1}||_{H1} <= tol``. The multiplier map is affine, so
    Anderson mixing (``accelerate=True``) reaches the fixed point in a few
    sweeps. ``accelerate=False`` runs the plain iteration. ``history`` logs
    the successive-difference ratios and ``q_k = N|eps_alpha|^2 + P|eps_beta|^2``
    of the multiplier increments.
    """
    if not sol.lambda2 > 0.0:
        raise ValueError("solve_adjoint_lambda needs a state with lambda2 > 0")
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    _check_targets(sol, targets)
    forms = sol.forms
    w = forms.weights
    S = forms.stiffness
    n, p = sol.n, sol.p
    N, P = _totals(sol)
    lam2 = sol.lambda2
    A = Tridiag(lam2 * S.lower, lam2 * S.diag + w * (n + p), lam2 * S.upper)
    base = n * (n - targets.n_d) - p * (p - targets.p_d)

    x = np.zeros(2)
    xs, gs = [], []
    xi_prev = None
    diff_prev = q_prev = None
    history = []
    for k in range(1, max_iter + 1):
        xi, _ = solve_bordered(A, w * (base + n * x[0] + p * x[1]), forms)
        xi -= (w @ xi) / forms.measure
        gx = np.array(multipliers(xi, sol, targets))
        eps = gx - x
        q = N * eps[0] ** 2 + P * eps[1] ** 2
        diff = math.inf if xi_prev is None else h1_norm(xi - xi_prev, forms)
        history.append({
            "iteration": k,
            "dxi_H1": diff,
            "ratio": _ratio(diff, diff_prev),
            "q": q,
            "q_ratio": _ratio(q, q_prev),
        })
        if diff <= tol:
            res = nonlocal_residual(xi, sol, targets)
            return AdjointSolution(xi, float(gx[0]), float(gx[1]), lam2, k, res, history)
        xi_prev, diff_prev, q_prev = xi, diff, q
        if accelerate:
            xs.append(x.copy())
            gs.append(gx)
            xs, gs = xs[-(ANDERSON_DEPTH + 1):], gs[-(ANDERSON_DEPTH + 1):]
            x = _anderson(xs, gs)
        else:
            x = gx
    raise ConvergenceError(
        f"adjoint solver (lambda2={lam2:g}) did not converge in {max_iter} iterations",
        history=history,
    )


def _ratio(a, b):
    if b is None or b == 0.0 or not math.isfinite(b):
        return math.nan
    return a / b


def _anderson(xs, gs):
    """Type-II Anderson update from the stored iterates and map values."""
    if len(xs) == 1:
        return gs[-1]
    R = [g - x for x, g in zip(xs, gs)]
    dR = np.column_stack([R[i + 1] - R[i] for i in range(len(R) - 1)])
    dG = np.column_stack([gs[i + 1] - gs[i] for i in range(len(gs) - 1)])
    coef, *_ = np.linalg.lstsq(dR, R[-1], rcond=None)
    return gs[-1] - dG @ coef


def solve_adjoint_zero(sol: StateSolution, targets: TrackingTargets):
    """Dense Fredholm adjoint for ``lambda2 = 0``.

    Solves ``W (D - H) xi + mu w = W f`` with ``w @ xi = 0`` where
    ``D = diag(n + p)`` and ``H`` discretizes the two normalizing integrals.
    A nonzero multiplier means the data violates the compatibility condition
    and is reported as an error.
    """
    _check_targets(sol, targets)
    forms = sol.forms
    w = forms.weights
    A = w[:, None] * K_matrix(sol)
    F = w * adjoint_rhs(sol, targets)
    xi, _ = solve_bordered(A, F, forms, strict=True, rtol=1e-9)
    xa, xb = multipliers(xi, sol, targets)
    res = nonlocal_residual(xi, sol, targets)
    return AdjointSolution(xi, xa, xb, 0.0, 1, res, [])


def solve_adjoint(sol: StateSolution, targets: TrackingTargets, tol: float = 1e-8, **kw):
    """Dispatch on ``sol.lambda2``."""
    if sol.lambda2 == 0.0:
        return solve_adjoint_zero(sol, targets)
    return solve_adjoint_lambda(sol, targets, tol, **kw)
