"""Backend selection for the hot kernels.

The Cython extension ``_ckernels`` is used when it has been built; otherwise
the pure-Python ``_pykernels`` is used. Set ``QUASINEUTRAL_PURE_PYTHON=1`` to
force the fallback. Solvers look functions up through this module at call
time, so :func:`use_backend` switches every solver at once.
"""
import contextlib
import os

from . import _pykernels

try:
    if os.environ.get("QUASINEUTRAL_PURE_PYTHON"):
        raise ImportError("pure-Python backend forced by environment")
    from . import _ckernels
except ImportError:
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

V_MAX = _pykernels.V_MAX
STATUS_OK = _pykernels.STATUS_OK
STATUS_MAX_ITER = _pykernels.STATUS_MAX_ITER
STATUS_LINE_SEARCH = _pykernels.STATUS_LINE_SEARCH
STATUS_OVERFLOW = _pykernels.STATUS_OVERFLOW

BACKEND = "cython" if _ckernels is not None else "python"
_impl = _BACKENDS[BACKEND]


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"backend {name!r} not available (have {available_backends()})"
        ) from None


def set_backend(name):
    global _impl, BACKEND
    _impl = get_backend(name)
    BACKEND = name


@contextlib.contextmanager
def use_backend(name):
    previous = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def tridiag_solve(lower, diag, upper, rhs):
    return _impl.tridiag_solve(lower, diag, upper, rhs)


def bordered_tridiag_solve(lower, diag, upper, border, rhs, border_rhs=0.0):
    return _impl.bordered_tridiag_solve(lower, diag, upper, border, rhs,
                                        float(border_rhs))


def newton_aux(s_lower, s_diag, s_upper, weights, C, lam2, alpha, beta, V0,
               tol, max_iter, zero_mean):
    return _impl.newton_aux(s_lower, s_diag, s_upper, weights, C, float(lam2),
                            float(alpha), float(beta), V0, float(tol),
                            int(max_iter), bool(zero_mean))


def closed_form_densities(C, gamma4):
    return _impl.closed_form_densities(C, float(gamma4))
