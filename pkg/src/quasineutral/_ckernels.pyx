# cython: language_level=3
"""Compiled kernels: Thomas solves, damped aux Newton, closed-form densities.

Same algorithms and signatures as ``_pykernels``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, fabs, isfinite, INFINITY

cnp.import_array()

cdef double V_MAX = 700.0
cdef double EPS = 2.220446049250313e-16

STATUS_OK = 0
STATUS_MAX_ITER = 1
STATUS_LINE_SEARCH = 2
STATUS_OVERFLOW = 3


cdef int _thomas(const double[:] lower, const double[:] diag,
                 const double[:] upper, const double[:] rhs,
                 double[:] cp, double[:] dp, double[:] x) noexcept nogil:
    cdef Py_ssize_t m = diag.shape[0], i
    cdef double piv = diag[0]
    if piv == 0.0 or not isfinite(piv):
        return 0
    cp[0] = upper[0] / piv
    dp[0] = rhs[0] / piv
    for i in range(1, m):
        piv = diag[i] - lower[i] * cp[i - 1]
        if piv == 0.0 or not isfinite(piv):
            return i
        cp[i] = upper[i] / piv if i < m - 1 else 0.0
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / piv
    x[m - 1] = dp[m - 1]
    for i in range(m - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return -1


cdef int _bordered(const double[:] lower, const double[:] diag,
                   const double[:] upper, const double[:] border,
                   const double[:] rhs, double border_rhs,
                   double[:] cp, double[:] ep, double[:] rp,
                   double[:] x, double* mu_out) noexcept nogil:
    # returns -1 on success, row index of a zero pivot, or -2 if singular
    cdef Py_ssize_t m = diag.shape[0], i
    cdef double d = diag[0], e = border[0], r = rhs[0], rho = border[0]
    cdef double z = 0.0, s = border_rhs, li, det, scale, mu
    for i in range(m - 1):
        if d == 0.0 or not isfinite(d):
            return i
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
    scale = fabs(d * z) + fabs(e * rho)
    if not isfinite(det) or fabs(det) <= 1e-14 * scale or scale == 0.0:
        return -2
    x[m - 1] = (r * z - e * s) / det
    mu = (d * s - rho * r) / det
    for i in range(m - 2, -1, -1):
        x[i] = rp[i] - cp[i] * x[i + 1] - ep[i] * mu
    mu_out[0] = mu
    return -1


def tridiag_solve(const double[:] lower, const double[:] diag,
                  const double[:] upper, const double[:] rhs):
    """Thomas algorithm; ``lower[0]`` and ``upper[-1]`` are ignored."""
    cdef Py_ssize_t m = diag.shape[0]
    cdef double[:] cp = np.empty(m), dp = np.empty(m)
    x = np.empty(m)
    cdef double[:] xv = x
    cdef int row = _thomas(lower, diag, upper, rhs, cp, dp, xv)
    if row >= 0:
        raise FloatingPointError(f"zero pivot in tridiagonal solve at row {row}")
    return x


def bordered_tridiag_solve(const double[:] lower, const double[:] diag,
                           const double[:] upper, const double[:] border,
                           const double[:] rhs, double border_rhs):
    """Solve ``[[A, b], [b^T, 0]] [x; mu] = [rhs; border_rhs]`` for tridiagonal A."""
    cdef Py_ssize_t m = diag.shape[0]
    cdef double[:] cp = np.empty(m), ep = np.empty(m), rp = np.empty(m)
    x = np.empty(m)
    cdef double[:] xv = x
    cdef double mu = 0.0
    cdef int code = _bordered(lower, diag, upper, border, rhs, border_rhs,
                              cp, ep, rp, xv, &mu)
    if code == -2:
        raise FloatingPointError("bordered system is singular")
    if code >= 0:
        raise FloatingPointError(f"zero pivot in bordered solve at row {code}")
    return x, mu


cdef double _residual(const double[:] sl, const double[:] sd, const double[:] su,
                      const double[:] w, const double[:] C, double lam2,
                      double alpha, double beta, const double[:] V, bint zero_mean,
                      double[:] F, double[:] ev, double[:] em,
                      double* mu_out, double* floor_out) noexcept nogil:
    cdef Py_ssize_t m = V.shape[0], i
    cdef double sv, sav, fsum = 0.0, wsum = 0.0, mu = 0.0, norm = 0.0
    cdef double fl = 0.0, fs, ri
    for i in range(m):
        ev[i] = exp(V[i])
        em[i] = exp(-V[i])
    for i in range(m):
        sv = sd[i] * V[i]
        sav = fabs(sd[i] * V[i])
        if i > 0:
            sv += sl[i] * V[i - 1]
            sav += fabs(sl[i] * V[i - 1])
        if i < m - 1:
            sv += su[i] * V[i + 1]
            sav += fabs(su[i] * V[i + 1])
        F[i] = lam2 * sv + w[i] * (beta * ev[i] - alpha * em[i] + C[i])
        fs = lam2 * sav + w[i] * (beta * ev[i] + alpha * em[i] + fabs(C[i]))
        fl += fs * fs / w[i]
        fsum += F[i]
        wsum += w[i]
    if zero_mean:
        mu = -fsum / wsum
    for i in range(m):
        ri = F[i] + mu * w[i]
        norm += ri * ri / w[i]
    mu_out[0] = mu
    floor_out[0] = 16.0 * EPS * sqrt(fl)
    return sqrt(norm)


def newton_aux(const double[:] s_lower, const double[:] s_diag,
               const double[:] s_upper, const double[:] w, const double[:] C,
               double lam2, double alpha, double beta, V0, double tol,
               int max_iter, bint zero_mean):
    """Damped Newton for ``lam2*S V + W(beta e^V - alpha e^-V + C) (+ mu w) = 0``.

    Returns ``(V, mu, iterations, residual_norm, status)``.
    """
    cdef Py_ssize_t m = s_diag.shape[0], i
    V_arr = np.array(V0, dtype=np.float64)
    trial_arr = np.empty(m)
    cdef double[:] V = V_arr, trial = trial_arr
    cdef double[:] F = np.empty(m), ev = np.empty(m), em = np.empty(m)
    cdef double[:] tF = np.empty(m), tev = np.empty(m), tem = np.empty(m)
    cdef double[:] jd = np.empty(m), jl = np.empty(m), ju = np.empty(m)
    cdef double[:] negF = np.empty(m), dV = np.empty(m)
    cdef double[:] cp = np.empty(m), ep = np.empty(m), rp = np.empty(m)
    cdef double wsum = 0.0, mean = 0.0, vmax = 0.0, mu = 0.0, floor = 0.0
    cdef double norm, tnorm, tmu = 0.0, tfloor = 0.0, t, dummy = 0.0
    cdef int it = 0, ls, code
    cdef bint accepted, inrange

    with nogil:
        if zero_mean:
            for i in range(m):
                wsum += w[i]
                mean += w[i] * V[i]
            mean /= wsum
            for i in range(m):
                V[i] -= mean
        for i in range(m):
            if fabs(V[i]) > vmax:
                vmax = fabs(V[i])
    if vmax > V_MAX:
        return V_arr, 0.0, 0, INFINITY, STATUS_OVERFLOW

    with nogil:
        norm = _residual(s_lower, s_diag, s_upper, w, C, lam2, alpha, beta, V,
                         zero_mean, F, ev, em, &mu, &floor)
    while True:
        if norm <= tol or norm <= floor:
            return V_arr, mu, it, norm, STATUS_OK
        if it >= max_iter:
            return V_arr, mu, it, norm, STATUS_MAX_ITER
        with nogil:
            for i in range(m):
                jd[i] = lam2 * s_diag[i] + w[i] * (beta * ev[i] + alpha * em[i])
                jl[i] = lam2 * s_lower[i]
                ju[i] = lam2 * s_upper[i]
                negF[i] = -F[i]
            if zero_mean:
                code = _bordered(jl, jd, ju, w, negF, 0.0, cp, ep, rp, dV, &dummy)
            else:
                code = _thomas(jl, jd, ju, negF, cp, ep, dV)
        if code != -1:
            raise FloatingPointError("singular Newton system in aux solve")
        t = 1.0
        accepted = False
        with nogil:
            for ls in range(60):
                inrange = True
                for i in range(m):
                    trial[i] = V[i] + t * dV[i]
                    if fabs(trial[i]) > V_MAX:
                        inrange = False
                if inrange:
                    tnorm = _residual(s_lower, s_diag, s_upper, w, C, lam2, alpha,
                                      beta, trial, zero_mean, tF, tev, tem,
                                      &tmu, &tfloor)
                    if tnorm <= (1.0 - 1e-4 * t) * norm:
                        accepted = True
                        break
                t *= 0.5
        it += 1
        if not accepted:
            return V_arr, mu, it, norm, STATUS_LINE_SEARCH
        with nogil:
            for i in range(m):
                V[i] = trial[i]
                F[i] = tF[i]
                ev[i] = tev[i]
                em[i] = tem[i]
        mu = tmu
        norm = tnorm
        floor = tfloor


def closed_form_densities(const double[:] C, double gamma4):
    """Nodal roots of ``n - p = C``, ``n p = gamma4`` without cancellation."""
    cdef Py_ssize_t m = C.shape[0], i
    n_arr = np.empty(m)
    p_arr = np.empty(m)
    cdef double[:] n = n_arr, p = p_arr
    cdef double c, root
    with nogil:
        for i in range(m):
            c = C[i]
            root = sqrt(4.0 * gamma4 + c * c)
            if c > 0.0:
                p[i] = 2.0 * gamma4 / (c + root)
                n[i] = 0.5 * (root + c)
            else:
                p[i] = 0.5 * (root - c)
                n[i] = 2.0 * gamma4 / (root - c)
    return n_arr, p_arr
