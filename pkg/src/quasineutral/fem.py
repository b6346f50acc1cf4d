"""Uniform 1D P1 finite elements: mesh, assembly, quadrature, bordered solves.

All zero-order integrals use the lumped (trapezoidal) weights ``w``, which
coincide with the row sums of the consistent mass matrix, so the discrete
zero-mean constraint ``1^T M x = 0`` is simply ``w @ x = 0``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from . import kernels
from .errors import ConfigError, IncompatibleRHSError, SolverError


@dataclass(frozen=True)
class Mesh1D:
    """Uniform grid on ``[a, b]`` with ``n_nodes`` nodes."""

    a: float = 0.0
    b: float = 1.0
    n_nodes: int = 200

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 3:
            raise ConfigError(f"nodes: need an integer >= 3, got {self.n_nodes!r}")
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.b <= self.a:
            raise ConfigError(f"domain: need a < b, got [{self.a}, {self.b}]")

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n_nodes - 1)

    @property
    def length(self) -> float:
        return self.b - self.a

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.linspace(self.a, self.b, self.n_nodes)
        x.setflags(write=False)
        return x


@dataclass(frozen=True)
class Tridiag:
    """Tridiagonal matrix stored by bands.

    ``lower[i] = A[i, i-1]`` and ``upper[i] = A[i, i+1]``; ``lower[0]`` and
    ``upper[-1]`` are zero padding.
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    @property
    def shape(self):
        m = self.diag.shape[0]
        return (m, m)

    def matvec(self, x):
        y = self.diag * x
        y[1:] += self.lower[1:] * x[:-1]
        y[:-1] += self.upper[:-1] * x[1:]
        return y

    def __matmul__(self, x):
        return self.matvec(np.asarray(x, dtype=float))

    def scaled(self, c):
        return Tridiag(c * self.lower, c * self.diag, c * self.upper)

    def plus_diag(self, d):
        return Tridiag(self.lower, self.diag + d, self.upper)

    def quad(self, x, y=None):
        """Bilinear form ``x^T A y``."""
        return float(np.dot(x, self.matvec(np.asarray(x if y is None else y, float))))

    def toarray(self):
        A = np.diag(self.diag)
        A += np.diag(self.lower[1:], -1)
        A += np.diag(self.upper[:-1], 1)
        return A


@dataclass(frozen=True)
class AssembledForms:
    """Mass matrix, stiffness matrix and lumped quadrature weights of a mesh."""

    mesh: Mesh1D
    mass: Tridiag
    stiffness: Tridiag
    weights: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    @property
    def measure(self) -> float:
        return self.mesh.length

    @property
    def x(self) -> np.ndarray:
        return self.mesh.nodes


def assemble(mesh: Mesh1D) -> AssembledForms:
    """Assemble P1 mass/stiffness matrices and trapezoidal weights."""
    m, h = mesh.n_nodes, mesh.h
    off = np.full(m, -1.0 / h)
    sd = np.full(m, 2.0 / h)
    sd[0] = sd[-1] = 1.0 / h
    lower = off.copy()
    lower[0] = 0.0
    upper = off.copy()
    upper[-1] = 0.0
    stiffness = Tridiag(lower, sd, upper)

    moff = np.full(m, h / 6.0)
    md = np.full(m, 2.0 * h / 3.0)
    md[0] = md[-1] = h / 3.0
    mlower = moff.copy()
    mlower[0] = 0.0
    mupper = moff.copy()
    mupper[-1] = 0.0
    mass = Tridiag(mlower, md, mupper)

    w = np.full(m, h)
    w[0] = w[-1] = 0.5 * h
    for arr in (lower, sd, upper, mlower, md, mupper, w):
        arr.setflags(write=False)
    return AssembledForms(mesh, mass, stiffness, w)


def _check_field(values, forms: AssembledForms, name="field"):
    v = np.asarray(values, dtype=float)
    if v.shape != (forms.n,):
        raise ValueError(f"{name}: expected {forms.n} nodal values, got shape {v.shape}")
    return v


def integrate(values, forms: AssembledForms) -> float:
    """Trapezoidal integral ``w @ values`` over the mesh."""
    return float(forms.weights @ _check_field(values, forms))


def mean_value(values, forms: AssembledForms) -> float:
    return integrate(values, forms) / forms.measure


def zero_mean(values, forms: AssembledForms) -> np.ndarray:
    v = _check_field(values, forms)
    return v - mean_value(v, forms)


def l2_norm(values, forms: AssembledForms) -> float:
    v = _check_field(values, forms)
    return float(np.sqrt(forms.weights @ (v * v)))


def lp_norm(values, forms: AssembledForms, p: float) -> float:
    v = np.abs(_check_field(values, forms))
    return float((forms.weights @ v**p) ** (1.0 / p))


def h1_seminorm(values, forms: AssembledForms) -> float:
    v = _check_field(values, forms)
    return float(np.sqrt(max(forms.stiffness.quad(v), 0.0)))


def h1_norm(values, forms: AssembledForms) -> float:
    v = _check_field(values, forms)
    return float(np.sqrt(max(forms.stiffness.quad(v), 0.0) + forms.weights @ (v * v)))


def dual_norm(residual, forms: AssembledForms) -> float:
    """``sqrt(r^T W^{-1} r)``: the lumped-mass dual norm of a weak residual."""
    r = _check_field(residual, forms)
    return float(np.sqrt(np.sum(r * r / forms.weights)))


def solve_bordered(A, rhs, forms: AssembledForms, *, strict=False, rtol=1e-10):
    """Solve ``A x + mu w = rhs`` subject to ``w @ x = 0``.

    ``A`` is a :class:`Tridiag` (compiled Thomas sweep with bordering) or a
    dense array (LAPACK). Returns ``(x, mu)``. With ``strict=True`` a nonzero
    multiplier, i.e. a right-hand side outside the range of an operator whose
    kernel holds the constants, raises :class:`IncompatibleRHSError`.
    """
    b = _check_field(rhs, forms, "rhs")
    w = forms.weights
    if isinstance(A, Tridiag):
        try:
            x, mu = kernels.bordered_tridiag_solve(A.lower, A.diag, A.upper, w, b, 0.0)
        except FloatingPointError as exc:
            raise SolverError(f"bordered solve failed: {exc}") from exc
    else:
        A = np.asarray(A, dtype=float)
        m = forms.n
        B = np.zeros((m + 1, m + 1))
        B[:m, :m] = A
        B[:m, m] = w
        B[m, :m] = w
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            try:
                sol = scipy.linalg.solve(B, np.append(b, 0.0))
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
                raise SolverError(f"bordered dense solve failed: {exc}") from exc
        x, mu = sol[:m], float(sol[m])
    if not np.all(np.isfinite(x)):
        raise SolverError("bordered solve produced non-finite values")
    # remove round-off drift of the constraint
    x = x - (w @ x) / forms.measure
    if strict:
        scale = np.abs(b).sum() + 1e-300
        if abs(mu) * forms.measure > rtol * scale:
            raise IncompatibleRHSError(
                f"right-hand side violates compatibility: sum(rhs) = {b.sum():.3e} "
                f"(multiplier {mu:.3e})"
            )
    return x, mu
