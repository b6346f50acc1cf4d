"""Pure-Python reference implementation of the hot kernels.

Mirrors ``_ckernels.pyx`` line for line; used when the extension is not
built and as the oracle the compiled kernels are tested against.
"""
import math

import numpy as np

# Exponent guard: e**700 is still representable in double precision.
V_MAX = 700.0

STATUS_OK = 0
STATUS_MAX_ITER = 1
STATUS_LINE_SEARCH = 2
STATUS_OVERFLOW = 3


def tridiag_solve(lower, diag, upper, rhs):
    """Thomas algorithm; ``lower[0]`` and ``upper[-1]`` are ignored."""
    m = diag.shape[0]
    cp = np.empty(m)
    dp = np.empty(m)
    piv = diag[0]
    if piv == 0.0 or not math.isfinite(piv):
        raise FloatingPointError("zero pivot in tridiagonal solve at row 0")
    cp[0] = upper[0] / piv
    dp[0] = rhs[0] / piv
    for i in range(1, m):
        piv = diag[i] - lower[i] * cp[i - 1]
        if piv == 0.0 or not math.isfinite(piv):
            raise FloatingPointError(f"zero pivot in tridiagonal solve at row {i}")
        cp[i] = upper[i] / piv if i < m - 1 else 0.0
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / piv
    x = np.empty(m)
    x[m - 1] = dp[m - 1]
    for i in range(m - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def bordered_tridiag_solve(lower, diag, upper, border, rhs, border_rhs):
    """Solve ``[[A, b], [b^T, 0]] [x; mu] = [rhs; border_rhs]`` for tridiagonal A.

    The first ``m - 1`` unknowns are eliminated by the Thomas sweep; the last
    unknown and the multiplier come from a 2x2 system. This tolerates a
    singular A whose kernel is not orthogonal to the border (e.g. a Neumann
    stiffness matrix), as long as every proper leading minor is nonzero.
    """
    m = diag.shape[0]
    cp = np.empty(m)
    ep = np.empty(m)
    rp = np.empty(m)
    d = diag[0]
    e = border[0]
    r = rhs[0]
    rho = border[0]
    z = 0.0
    s = border_rhs
    for i in range(m - 1):
        if d == 0.0 or not math.isfinite(d):
            raise FloatingPointError(f"zero pivot in bordered solve at row {i}")
        cp[i] = upper[i] / d
        ep[i] = e / d
        rp[i] = r / d
        z -= rho * ep[i]
        s -= rho * rp[i]
        rho = border[i + 1] - rho * cp[i]
        li = lower[i + 1]
        d = diag[i + 1] - li * cp[i]
        e = border[i + 1] - li * ep[i]
        r = rhs[i + 1] - li * rp[i]
    det = d * z - e * rho
    scale = abs(d * z) + abs(e * rho)
    if not math.isfinite(det) or abs(det) <= 1e-14 * scale or scale == 0.0:
        raise FloatingPointError("bordered system is singular")
    x = np.empty(m)
    x[m - 1] = (r * z - e * s) / det
    mu = (d * s - rho * r) / det
    for i in range(m - 2, -1, -1):
        x[i] = rp[i] - cp[i] * x[i + 1] - ep[i] * mu
    return x, mu


def _aux_residual(s_lower, s_diag, s_upper, w, C, lam2, alpha, beta, V, zero_mean):
    ev = np.exp(V)
    em = np.exp(-V)
    SV = s_diag * V
    SV[1:] += s_lower[1:] * V[:-1]
    SV[:-1] += s_upper[:-1] * V[1:]
    F = lam2 * SV + w * (beta * ev - alpha * em + C)
    mu = -F.sum() / w.sum() if zero_mean else 0.0
    r = F + mu * w
    norm = math.sqrt(float(np.sum(r * r / w)))
    aV = np.abs(V)
    SaV = np.abs(s_diag) * aV
    SaV[1:] += np.abs(s_lower[1:]) * aV[:-1]
    SaV[:-1] += np.abs(s_upper[:-1]) * aV[1:]
    fs = lam2 * SaV + w * (beta * ev + alpha * em + np.abs(C))
    floor = 16.0 * np.finfo(float).eps * math.sqrt(float(np.sum(fs * fs / w)))
    return F, mu, norm, floor, ev, em


def newton_aux(s_lower, s_diag, s_upper, w, C, lam2, alpha, beta, V0, tol,
               max_iter, zero_mean):
    """Damped Newton for ``lam2*S V + W(beta e^V - alpha e^-V + C) (+ mu w) = 0``.

    Returns ``(V, mu, iterations, residual_norm, status)``.
    """
    V = np.array(V0, dtype=float)
    if zero_mean:
        V -= (w @ V) / w.sum()
    if np.max(np.abs(V)) > V_MAX:
        return V, 0.0, 0, math.inf, STATUS_OVERFLOW
    F, mu, norm, floor, ev, em = _aux_residual(
        s_lower, s_diag, s_upper, w, C, lam2, alpha, beta, V, zero_mean)
    it = 0
    while True:
        if norm <= tol or norm <= floor:
            return V, mu, it, norm, STATUS_OK
        if it >= max_iter:
            return V, mu, it, norm, STATUS_MAX_ITER
        jd = lam2 * s_diag + w * (beta * ev + alpha * em)
        jl = lam2 * s_lower
        ju = lam2 * s_upper
        if zero_mean:
            dV, _ = bordered_tridiag_solve(jl, jd, ju, w, -F, 0.0)
        else:
            dV = tridiag_solve(jl, jd, ju, -F)
        t = 1.0
        accepted = False
        for _ in range(60):
            trial = V + t * dV
            if np.max(np.abs(trial)) <= V_MAX:
                tF, tmu, tnorm, tfloor, tev, tem = _aux_residual(
                    s_lower, s_diag, s_upper, w, C, lam2, alpha, beta, trial,
                    zero_mean)
                if tnorm <= (1.0 - 1e-4 * t) * norm:
                    accepted = True
                    break
            t *= 0.5
        it += 1
        if not accepted:
            return V, mu, it, norm, STATUS_LINE_SEARCH
        V, F, mu, norm, floor, ev, em = trial, tF, tmu, tnorm, tfloor, tev, tem


def closed_form_densities(C, gamma4):
    """Nodal roots of ``n - p = C``, ``n p = gamma4`` without cancellation."""
    C = np.asarray(C, dtype=float)
    root = np.sqrt(4.0 * gamma4 + C * C)
    pos = C > 0.0
    # the smaller root is always formed as 2*gamma4 / (|C| + root)
    p = np.where(pos, 2.0 * gamma4 / (C + root), 0.5 * (root - C))
    n = np.where(pos, 0.5 * (root + C), 2.0 * gamma4 / (root - C))
    return n, p
