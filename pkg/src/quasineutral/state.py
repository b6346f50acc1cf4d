"""Forward solvers for the nonlocal Poisson equation and its quasi-neutral limit.

The state equation on a mesh with stiffness ``S`` and lumped weights ``w`` is

    lam2 * S V + W (p - n + C) = 0,   n = N e^{-V} / (w @ e^{-V}),
                                      p = P e^{V} / (w @ e^{V}),

with ``w @ V = 0``. For ``lam2 = 0`` the densities follow in closed form from
``n - p = C`` and ``n p = gamma^4``.

Both solvers iterate on the normalizers ``(alpha, beta)``. The auxiliary
problem only depends on ``gamma^4 = alpha * beta`` up to a constant shift of
``V``, so the outer loop is a scalar root search in ``t = log gamma^4``. Since
``w @ (n - p) = w @ C`` holds for every ``t``, matching ``w @ n = N`` alone
fixes both totals. The plain normalizer update is ``t <- t + f(t)`` with
``f(t) = log(N P) - log((w @ n)(w @ p))`` (``accelerate=False``); it stalls
because ``f`` flattens exponentially once the minority carriers are small.
The default runs a bracketed Newton iteration on ``t`` with the exact
derivative of the carrier total, obtained from the closed form for
``lam2 = 0`` and from one extra tridiagonal solve with the converged
auxiliary Jacobian for ``lam2 > 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConvergenceError, InadmissibleProfileError, SolverError
from .fem import AssembledForms, dual_norm, h1_norm, l2_norm

DEFAULT_TOL = 1e-8
MAX_OUTER = 10_000
MAX_NEWTON = 200
_MAX_LOG_STEP = 5.0


@dataclass(frozen=True)
class ChargeTotals:
    """Total carrier charges ``N = delta2 + int C+`` and ``P = delta2 - int C-``."""

    N: float
    P: float
    delta2: float

    @classmethod
    def from_doping(cls, C, forms: AssembledForms, delta2: float) -> "ChargeTotals":
        C = np.asarray(C, dtype=float)
        w = forms.weights
        N = delta2 + float(w @ np.maximum(C, 0.0))
        P = delta2 - float(w @ np.minimum(C, 0.0))
        return cls(N, P, float(delta2))

    def check(self):
        if not (self.N > 0.0 and self.P > 0.0) or not (
            math.isfinite(self.N) and math.isfinite(self.P)
        ):
            raise InadmissibleProfileError(
                f"inadmissible doping profile: N = {self.N:.6g}, P = {self.P:.6g} "
                "(both must be positive)"
            )
        return self


@dataclass(frozen=True)
class DopingProfile:
    """Nodal doping ``C`` with its reference profile and carrier totals."""

    forms: AssembledForms
    C: np.ndarray
    C_ref: np.ndarray
    totals: ChargeTotals

    @classmethod
    def build(cls, forms, C, delta2, C_ref=None, totals=None) -> "DopingProfile":
        """Validate nodal data and derive the totals unless given explicitly."""
        C = np.array(C, dtype=float)
        if C.shape != (forms.n,):
            raise ValueError(f"doping: expected {forms.n} nodal values, got {C.shape}")
        if not np.all(np.isfinite(C)):
            raise ValueError("doping: non-finite values")
        C_ref = C.copy() if C_ref is None else np.array(C_ref, dtype=float)
        if C_ref.shape != C.shape:
            raise ValueError("reference doping: shape mismatch")
        if not delta2 > 0.0:
            raise ValueError(f"delta2 must be positive, got {delta2}")
        if totals is None:
            totals = ChargeTotals.from_doping(C, forms, delta2)
        totals.check()
        C.setflags(write=False)
        C_ref.setflags(write=False)
        return cls(forms, C, C_ref, totals)

    @property
    def N(self) -> float:
        return self.totals.N

    @property
    def P(self) -> float:
        return self.totals.P

    @property
    def delta2(self) -> float:
        return self.totals.delta2

    def with_control(self, u, *, freeze_totals=False) -> "DopingProfile":
        """Profile ``C_ref + u``; totals are recomputed unless frozen."""
        totals = self.totals if freeze_totals else None
        return DopingProfile.build(
            self.forms, self.C_ref + np.asarray(u, float), self.delta2,
            C_ref=self.C_ref, totals=totals,
        )


@dataclass
class StateSolution:
    """Converged state: zero-mean potential, densities and normalizers."""

    V: np.ndarray
    n: np.ndarray
    p: np.ndarray
    alpha: float
    beta: float
    lambda2: float
    iterations: int
    residual: float
    newton_iterations: int = 0
    history: list = field(default_factory=list, repr=False)
    forms: AssembledForms | None = field(default=None, repr=False)

    @property
    def gamma2(self) -> float:
        return math.sqrt(self.alpha * self.beta)

    @property
    def gamma4(self) -> float:
        return self.alpha * self.beta


def _densities(V, totals: ChargeTotals, w):
    em = np.exp(-V)
    ev = np.exp(V)
    alpha = totals.N / float(w @ em)
    beta = totals.P / float(w @ ev)
    return alpha * em, alpha, beta * ev, beta


def newton_aux_solve(forms: AssembledForms, C, alpha, beta, lambda2, V0=None,
                     tol=1e-12, *, zero_mean=True, max_iter=MAX_NEWTON):
    """Damped Newton for ``-lam2 V'' - alpha e^{-V} + beta e^{V} + C = 0``.

    With ``zero_mean=True`` the Neumann problem is solved in the zero-mean
    subspace through a bordered system, otherwise the free Neumann problem is
    solved (it is uniquely solvable for ``alpha, beta > 0``).

    Returns
    -------
    V : ndarray
    iterations : int
    residual : float
        Dual-norm residual ``sqrt(r^T W^{-1} r)`` of the weak form.
    """
    if not lambda2 > 0.0:
        raise ValueError("auxiliary problem needs lambda2 > 0")
    if alpha < 0.0 or beta < 0.0:
        raise ValueError("normalizers must be nonnegative")
    C = np.ascontiguousarray(C, dtype=float)
    V0 = np.zeros(forms.n) if V0 is None else np.asarray(V0, dtype=float)
    if not np.all(np.isfinite(V0)):
        raise ValueError("initial potential must be finite")
    S = forms.stiffness
    try:
        V, _, it, res, status = kernels.newton_aux(
            S.lower, S.diag, S.upper, forms.weights, C, lambda2, alpha, beta,
            V0, tol, max_iter, zero_mean,
        )
    except FloatingPointError as exc:
        raise SolverError(f"auxiliary Newton: {exc}") from exc
    if status == kernels.STATUS_OVERFLOW:
        raise SolverError("potential out of representable range (|V| > 700)")
    if status != kernels.STATUS_OK:
        reason = "line search failed" if status == kernels.STATUS_LINE_SEARCH else (
            "iteration cap reached")
        raise SolverError(f"auxiliary Newton diverged ({reason}); last residual {res:.3e}")
    return V, it, res


class _LogGammaSearch:
    """Bracketed Newton iteration for an increasing scalar residual ``phi(t)``.

    Steps are capped at ``_MAX_LOG_STEP``; a step leaving the current bracket
    is replaced by bisection.
    """

    def __init__(self, t0):
        self.t = t0
        self.lo = None  # largest t with phi < 0
        self.hi = None  # smallest t with phi > 0

    def next(self, phi, dphi):
        t = self.t
        if phi < 0.0 and (self.lo is None or t > self.lo):
            self.lo = t
        elif phi > 0.0 and (self.hi is None or t < self.hi):
            self.hi = t
        if dphi > 0.0 and math.isfinite(dphi):
            step = -phi / dphi
        else:
            step = -math.copysign(_MAX_LOG_STEP, phi)
        tn = t + max(-_MAX_LOG_STEP, min(_MAX_LOG_STEP, step))
        if self.lo is not None and self.hi is not None and not (self.lo < tn < self.hi):
            tn = 0.5 * (self.lo + self.hi)
        self.t = tn
        return tn


def _mismatch(n, p, totals, w):
    return math.log(totals.N * totals.P) - math.log(float(w @ n) * float(w @ p))


def _finish(V, dp: DopingProfile, lambda2, iterations, newton_its, history):
    forms = dp.forms
    w = forms.weights
    V = V - float(w @ V) / forms.measure
    n, alpha, p, beta = _densities(V, dp.totals, w)
    sol = StateSolution(V, n, p, alpha, beta, float(lambda2), iterations, 0.0,
                        newton_its, history, forms)
    sol.residual = state_residual(sol, dp)
    return sol


def solve_state_lambda(dp: DopingProfile, lambda2: float, tol: float = DEFAULT_TOL,
                       *, accelerate=True, max_iter=MAX_OUTER, initial=None):
    """Fixed-point solver for ``lambda2 > 0``.

    Alternates the auxiliary Newton solve with the normalizer update and
    stops once ``||V_k - V_{k-1}||_{H1} <= tol`` (zero-mean representatives)
    and the relative charge mismatch is below ``tol``.

    Parameters
    ----------
    accelerate : bool
        Drive ``log gamma^4`` by the bracketed Newton iteration (default). ``False``
        runs the plain normalizer update ``alpha = N / int e^{-V}``,
        ``beta = P / int e^{V}``.
    initial : StateSolution, optional
        Warm start (potential and normalizers), e.g. from a nearby control.
    """
    if not lambda2 > 0.0:
        raise ValueError("solve_state_lambda needs lambda2 > 0")
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    totals = dp.totals.check()
    forms = dp.forms
    w = forms.weights
    C = np.ascontiguousarray(dp.C)
    newton_tol = 1e-3 * tol
    S = forms.stiffness
    if initial is None:
        V = np.zeros(forms.n)
        alpha, beta = totals.N / forms.measure, totals.P / forms.measure
    else:
        V = np.array(initial.V, dtype=float)
        alpha, beta = initial.alpha, initial.beta
    # the split of gamma^4 into alpha, beta only shifts V by a constant
    shift = 0.5 * math.log(alpha / beta)
    search = _LogGammaSearch(math.log(alpha * beta))
    history = []
    newton_total = 0
    V_prev = None
    for k in range(1, max_iter + 1):
        if accelerate:
            g2 = math.exp(0.5 * search.t)
            a, b = g2, g2
            V_start = V + shift
        else:
            a, b = alpha, beta
            V_start = V
        V_new, its, _ = newton_aux_solve(forms, C, a, b, lambda2, V_start,
                                         newton_tol, zero_mean=False)
        newton_total += its
        n = a * np.exp(-V_new)
        p = b * np.exp(V_new)
        if accelerate:
            V_new = V_new - shift
        f = _mismatch(n, p, totals, w)
        Vz = V_new - float(w @ V_new) / forms.measure
        diff = math.inf if V_prev is None else h1_norm(Vz - V_prev, forms)
        history.append({"iteration": k, "log_gamma4": math.log(a * b),
                        "mismatch": f, "dV_H1": diff, "newton": its})
        if diff <= tol and abs(f) <= tol:
            return _finish(Vz, dp, lambda2, k, newton_total, history)
        V_prev = Vz
        V = Vz
        if accelerate:
            # d/dt of the aux solution: J dV/dt = -W (p - n) / 2
            dV = kernels.tridiag_solve(lambda2 * S.lower, lambda2 * S.diag + w * (n + p),
                                       lambda2 * S.upper, -0.5 * w * (p - n))
            total_n = float(w @ n)
            dtotal = float(w @ (n * (0.5 - dV)))
            search.next(math.log(total_n / totals.N), dtotal / total_n)
        else:
            alpha = totals.N / float(w @ np.exp(-V))
            beta = totals.P / float(w @ np.exp(V))
    raise ConvergenceError(
        f"state solver (lambda2={lambda2:g}) did not converge in {max_iter} iterations",
        history=history,
    )


def solve_state_zero(dp: DopingProfile, tol: float = DEFAULT_TOL, *,
                     accelerate=True, max_iter=MAX_OUTER, initial=None):
    """Solver for the zero-space-charge limit ``lambda2 = 0``.

    Each pass evaluates the closed-form densities for the current ``gamma^4``,
    forms the zero-mean potential ``V = ln p - mean(ln p)`` and updates the
    normalizers; it stops once ``||V_k - V_{k-1}||_{L2} <= tol`` and the
    relative charge mismatch is below ``tol``.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    totals = dp.totals.check()
    forms = dp.forms
    w = forms.weights
    C = np.ascontiguousarray(dp.C)
    pos = C > 0.0
    # excess target N - int C+ (delta2 unless the totals are frozen)
    target = totals.N - float(w @ np.maximum(C, 0.0))
    if target <= 0.0:
        # n - p = C forces int n > int C+, so no solution exists
        raise InadmissibleProfileError(
            f"inadmissible doping profile for lambda2 = 0: N = {totals.N:.6g} "
            f"does not exceed int C+ = {totals.N - target:.6g}"
        )
    if initial is None:
        t = math.log(totals.N * totals.P / forms.measure**2)
    else:
        t = math.log(initial.alpha * initial.beta)
    search = _LogGammaSearch(t)
    history = []
    V_prev = None
    for k in range(1, max_iter + 1):
        gamma4 = math.exp(search.t)
        n, p = kernels.closed_form_densities(C, gamma4)
        if not (np.all(np.isfinite(p)) and np.all(p > 0.0)):
            raise SolverError("non-finite or vanishing density in closed form")
        V = np.log(p)
        V -= float(w @ V) / forms.measure
        f = _mismatch(n, p, totals, w)
        diff = math.inf if V_prev is None else l2_norm(V - V_prev, forms)
        history.append({"iteration": k, "log_gamma4": search.t, "mismatch": f,
                        "dV_L2": diff})
        if diff <= tol and abs(f) <= tol:
            return _finish(V, dp, 0.0, k, 0, history)
        V_prev = V
        if accelerate:
            # d n / d gamma^4 = d p / d gamma^4 = 1 / sqrt(4 gamma^4 + C^2)
            dtotal = gamma4 * float(w @ (1.0 / (n + p)))
            # n - C+ is the smaller root, free of cancellation
            excess = float(w @ np.where(pos, p, n))
            search.next(math.log(excess / target), dtotal / excess)
        else:
            search.t += f
    raise ConvergenceError(
        f"zero-space-charge solver did not converge in {max_iter} iterations",
        history=history,
    )


def solve_state(dp: DopingProfile, lambda2: float, tol: float = DEFAULT_TOL, **kw):
    """Dispatch to the ``lambda2 > 0`` or ``lambda2 = 0`` solver."""
    if lambda2 < 0.0 or not math.isfinite(lambda2):
        raise ValueError(f"lambda2 must be finite and >= 0, got {lambda2}")
    if lambda2 == 0.0:
        return solve_state_zero(dp, tol, **kw)
    return solve_state_lambda(dp, lambda2, tol, **kw)


def state_residual(sol: StateSolution, dp: DopingProfile) -> float:
    """Dual norm of the weak residual ``lam2 S V + W(p - n + C)``, zero-mean part."""
    forms = dp.forms
    w = forms.weights
    r = sol.lambda2 * forms.stiffness.matvec(np.asarray(sol.V, float))
    r += w * (sol.p - sol.n + dp.C)
    r -= w * (r.sum() / w.sum())
    return dual_norm(r, forms)
