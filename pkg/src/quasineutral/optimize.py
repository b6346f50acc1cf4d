"""Steepest descent on the reduced cost with Armijo backtracking.

The step is taken against the Riesz gradient, ``u_next = u - omega g``, and
accepted once

    J(u - omega g) <= J(u) - gamma * omega * ||g||_Y^2,

halving ``omega`` from ``omega0`` otherwise. ``literal_signs=True`` runs the
literal rule instead: trial ``u + omega g`` accepted once
``J(u + omega g) < J(u) + gamma * omega * ||g||_Y^2``; since ``g`` is an ascent
direction this normally exhausts the halvings.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LineSearchError, SolverError
from .objective import CostBreakdown, DesignProblem, Evaluation, GradientField


@dataclass(frozen=True)
class OptimizerConfig:
    """Descent parameters and stopping tolerances."""

    sigma: float = 1e-4
    gamma_armijo: float = 1e-4
    omega0: float = 50.0
    tol_opt: float = 5e-2
    tol_abs: float = 5e-5
    tol_inner: float = 1e-8
    max_iter: int = 500
    max_armijo_halvings: int = 40
    lambda2: float = 0.0
    literal_signs: bool = False
    freeze_totals: bool = False

    def __post_init__(self):
        for name in ("sigma", "gamma_armijo", "omega0", "tol_opt", "tol_abs", "tol_inner"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{name}: must be a positive number, got {value!r}")
        if not self.gamma_armijo < 1.0:
            raise ConfigError(f"gamma_armijo: must be below 1, got {self.gamma_armijo}")
        for name in ("max_iter", "max_armijo_halvings"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name}: must be an integer >= 1, got {value!r}")
        if not (math.isfinite(self.lambda2) and self.lambda2 >= 0.0):
            raise ConfigError(f"lambda2: must be finite and >= 0, got {self.lambda2!r}")


@dataclass
class IterateRecord:
    """One accepted iterate: control, cost, gradient norm and step data."""

    k: int
    u: np.ndarray = field(repr=False)
    cost: CostBreakdown
    grad_norm: float
    omega: float = math.nan
    halvings: int = 0


@dataclass
class OptRun:
    """Trajectory and final state of one descent run."""

    lambda2: float
    iterates: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    final: Evaluation | None = field(default=None, repr=False)
    wall_times: dict = field(default_factory=lambda: {
        "state": 0.0, "adjoint": 0.0, "gradient": 0.0, "total": 0.0})
    state_solves: int = 0

    @property
    def costs(self):
        return [rec.cost.total for rec in self.iterates]

    @property
    def iterations(self) -> int:
        return max(len(self.iterates) - 1, 0)

    @property
    def C(self):
        return self.final.profile.C

    @property
    def V(self):
        return self.final.state.V


class _Timed:
    """Wraps a design problem and accumulates per-phase wall time."""

    def __init__(self, problem: DesignProblem, run: OptRun):
        self.problem = problem
        self.run = run

    def state(self, u) -> Evaluation:
        t0 = time.perf_counter()
        try:
            return self.problem.evaluate(u)
        finally:
            self.run.wall_times["state"] += time.perf_counter() - t0
            self.run.state_solves += 1

    def gradient(self, ev: Evaluation) -> GradientField:
        t0 = time.perf_counter()
        self.problem.add_adjoint(ev)
        t1 = time.perf_counter()
        self.problem.add_gradient(ev)
        t2 = time.perf_counter()
        self.run.wall_times["adjoint"] += t1 - t0
        self.run.wall_times["gradient"] += t2 - t1
        return ev.gradient


def armijo_step(u, grad: GradientField, cost: CostBreakdown, cfg: OptimizerConfig,
                evaluate):
    """Backtracking from ``omega0`` until the sufficient-decrease test holds.

    Parameters
    ----------
    evaluate : callable
        Maps a control to an object with a ``cost`` attribute (or a
        :class:`CostBreakdown`); solver failures at a probe count as
        insufficient decrease.

    Returns
    -------
    omega, u_next, result_next, halvings
    """
    norm2 = grad.norm_Y ** 2
    if not norm2 > 0.0:
        raise ValueError("Armijo step needs a nonzero gradient")
    sign = 1.0 if cfg.literal_signs else -1.0
    omega = cfg.omega0
    for halvings in range(cfg.max_armijo_halvings + 1):
        u_next = u + sign * omega * grad.g
        try:
            result = evaluate(u_next)
        except SolverError:
            result = None
        if result is not None:
            trial = getattr(result, "cost", result).total
            if cfg.literal_signs:
                ok = trial < cost.total + cfg.gamma_armijo * omega * norm2
            else:
                ok = trial <= cost.total - cfg.gamma_armijo * omega * norm2
            if ok:
                return omega, u_next, result, halvings
        omega *= 0.5
    raise LineSearchError(
        f"no descent step found after {cfg.max_armijo_halvings} halvings "
        f"(|g|_Y = {grad.norm_Y:.3e})"
    )


def optimize(problem: DesignProblem, cfg: OptimizerConfig, u0=None) -> OptRun:
    """Steepest descent from ``u0`` (default 0, i.e. the reference doping).

    Stops when ``||g_k|| / ||g_0|| <= tol_opt`` or ``||g_k|| <= tol_abs`` (both
    in the Y norm) or after ``max_iter`` steps. Solver and line-search
    failures propagate with the partial run attached as ``exc.run``.
    """
    forms = problem.forms
    u = np.zeros(forms.n) if u0 is None else np.array(u0, dtype=float)
    u -= (forms.weights @ u) / forms.measure
    run = OptRun(problem.lambda2)
    timed = _Timed(problem, run)
    t_start = time.perf_counter()
    try:
        ev = timed.state(u)
        grad = timed.gradient(ev)
        g0 = grad.norm_Y
        run.iterates.append(IterateRecord(0, u.copy(), ev.cost, g0))
        k = 0
        while True:
            gk = grad.norm_Y
            if gk <= cfg.tol_abs:
                run.converged, run.stop_reason = True, "absolute gradient"
                break
            if gk <= cfg.tol_opt * g0:
                run.converged, run.stop_reason = True, "relative gradient"
                break
            if k >= cfg.max_iter:
                run.stop_reason = "iteration cap"
                break
            omega, u, ev, halvings = armijo_step(u, grad, ev.cost, cfg, timed.state)
            k += 1
            grad = timed.gradient(ev)
            run.iterates.append(IterateRecord(k, u.copy(), ev.cost, grad.norm_Y,
                                              omega, halvings))
        run.final = ev
    except SolverError as exc:
        run.stop_reason = f"failed: {exc}"
        run.wall_times["total"] = time.perf_counter() - t_start
        exc.run = run
        raise
    run.wall_times["total"] = time.perf_counter() - t_start
    return run
