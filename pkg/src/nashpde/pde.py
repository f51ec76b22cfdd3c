"""Finite-difference elliptic operator and the state, linearized, second-order and adjoint solves.

The operator is ``-div(A grad y)`` with a constant symmetric positive-definite
coefficient matrix ``A`` and homogeneous Dirichlet data, discretised with
second-order central differences on the interior nodes of a :class:`Grid`.
All linear systems are ``(K + diag(d)) x = b`` with ``d >= 0`` and are solved
by Jacobi-preconditioned conjugate gradients.  Because the nodal quadrature
weight is a constant, the matrix transpose is also the adjoint in the
discrete L2 pairing, so adjoint identities hold up to solver tolerance.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import expr as ex
from .mesh import Grid, GridFunction, GridMismatchError

logger = logging.getLogger(__name__)


class LinearSolverError(RuntimeError):
    pass


class NewtonConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (last residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class MonotonicityError(ValueError):
    pass


@dataclass(frozen=True)
class LinearSolveSettings:
    rel_tolerance: float = 1e-12
    max_iters: int | None = None  # None -> 10 * unknowns
    method: str = "cg"

    def __post_init__(self):
        if not 0.0 < self.rel_tolerance < 1.0:
            raise ValueError("rel_tolerance must lie in (0, 1)")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.method != "cg":
            raise ValueError(f"unsupported linear solver {self.method!r}")


@dataclass(frozen=True)
class NewtonSettings:
    abs_tolerance: float = 1e-11
    max_iters: int = 50
    max_halvings: int = 30

    def __post_init__(self):
        if not self.abs_tolerance > 0:
            raise ValueError("abs_tolerance must be positive")
        if self.max_iters < 1 or self.max_halvings < 0:
            raise ValueError("invalid Newton iteration limits")


DEFAULT_LINEAR = LinearSolveSettings()
DEFAULT_NEWTON = NewtonSettings()


def _second_difference(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr") / h**2


def _central_difference(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="csr") / (2 * h)


class EllipticOperator:
    """Discrete ``-div(A grad .)`` on the interior nodes of ``grid``.

    ``coefficients`` is the constant matrix ``A`` (``N x N``, default identity).
    """

    def __init__(self, grid: Grid, coefficients=None):
        self.grid = grid
        n = grid.dim
        a = np.eye(n) if coefficients is None else np.array(coefficients, dtype=float).reshape(n, n)
        if not np.array_equal(a, a.T):
            raise ValueError("coefficient matrix must be symmetric")
        eig = np.linalg.eigvalsh(a)
        if not eig[0] > 0:
            raise ValueError(f"coefficient matrix is not positive definite (smallest eigenvalue {eig[0]:.3g})")
        a.flags.writeable = False
        self.coefficients = a
        self.ellipticity = float(eig[0])

        shape, h = grid.interior_shape, grid.spacing
        if n == 1:
            K = a[0, 0] * _second_difference(shape[0], h[0])
        else:
            I0, I1 = sp.identity(shape[0], format="csr"), sp.identity(shape[1], format="csr")
            K = a[0, 0] * sp.kron(_second_difference(shape[0], h[0]), I1)
            K = K + a[1, 1] * sp.kron(I0, _second_difference(shape[1], h[1]))
            if a[0, 1] != 0.0:
                K = K - 2 * a[0, 1] * sp.kron(_central_difference(shape[0], h[0]), _central_difference(shape[1], h[1]))
        self.matrix = sp.csr_matrix(K)
        self.matrix.sum_duplicates()
        self.matrix.sort_indices()
        self.abs_matrix = abs(self.matrix)
        # positions of the diagonal entries inside the CSR data array
        rows = np.repeat(np.arange(self.size), np.diff(self.matrix.indptr))
        self._diag_pos = np.flatnonzero(rows == self.matrix.indices)
        self.coordinates = grid.coordinates()

    @property
    def size(self) -> int:
        return self.grid.size

    def shifted(self, shift: np.ndarray | None) -> sp.csr_matrix:
        """``K + diag(shift)`` without re-running sparse addition."""
        if shift is None:
            return self.matrix
        out = self.matrix.copy()
        out.data[self._diag_pos] += shift
        return out

    def apply(self, y: GridFunction) -> GridFunction:
        return GridFunction(self.grid, self.matrix @ y.values)


@functools.lru_cache(maxsize=256)
def derivatives(e: ex.Expr) -> tuple[ex.Expr, ex.Expr, ex.Expr]:
    """``(e, de/dy, d2e/dy2)`` for a parsed expression, cached."""
    d1 = ex.diff_y(e)
    return e, d1, ex.diff_y(d1)


def nodal_values(e: ex.Expr, op: EllipticOperator, y, yd=0.0) -> np.ndarray:
    out = ex.evaluate(e, op.coordinates, y=y, yd=yd)
    return np.broadcast_to(np.asarray(out, dtype=float), (op.size,)).copy()


def check_monotone(f, grid: Grid, y_range: tuple[float, float] = (-5.0, 5.0), samples: int = 41) -> None:
    """Reject ``f`` if ``df/dy`` is negative somewhere on grid nodes x sampled states."""
    f = ex.as_expr(f)
    if "yd" in ex.variables(f):
        raise ValueError("f may not reference yd")
    df = derivatives(f)[1]
    coords = grid.coordinates()
    for yv in np.linspace(y_range[0], y_range[1], samples):
        vals = np.asarray(ex.evaluate(df, coords, y=yv), dtype=float)
        worst = float(np.min(vals))
        if worst < -1e-12:
            raise MonotonicityError(
                f"f must be nondecreasing in y (df/dy >= 0); df/dy = {worst:.4g} at y = {yv:.4g}"
            )


def _check_grid(op: EllipticOperator, *fields: GridFunction) -> None:
    for g in fields:
        if g.grid != op.grid:
            raise GridMismatchError("grid function does not live on the operator grid")


class _DirectOperator(spla.LinearOperator):
    """Thin operator for scipy's CG: ``matvec`` skips the generic shape handling."""

    def __init__(self, apply, n: int):
        super().__init__(np.dtype(float), (n, n))
        self.matvec = apply

    def _matvec(self, x):
        return self.matvec(x)


def spd_solve(op: EllipticOperator, shift: np.ndarray | None, rhs: np.ndarray,
              settings: LinearSolveSettings = DEFAULT_LINEAR, x0: np.ndarray | None = None) -> np.ndarray:
    """Solve ``(K + diag(shift)) x = rhs`` by Jacobi-preconditioned CG (array level).

    ``x0`` is an optional initial guess; the stopping test is always relative
    to ``||rhs||``.
    """
    rhs = np.asarray(rhs, dtype=float)
    if not np.any(rhs):
        return np.zeros(op.size)
    A = op.shifted(shift)
    n = op.size
    inv_diag = 1.0 / A.data[op._diag_pos]
    maxiter = settings.max_iters or 10 * n
    start = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    x, info = spla.cg(_DirectOperator(A.__matmul__, n), rhs, x0=start, rtol=settings.rel_tolerance, atol=0.0,
                      maxiter=maxiter, M=_DirectOperator(inv_diag.__mul__, n))
    if info > 0:
        raise LinearSolverError(f"CG did not reach rel. tolerance {settings.rel_tolerance:g} in {maxiter} iterations")
    if info < 0 or not np.all(np.isfinite(x)):
        raise LinearSolverError("CG breakdown")
    return x


def state_residual(op: EllipticOperator, f: ex.Expr, y: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    """Residual ``K y + f(y) - rhs`` and its rounding floor (both nodal arrays -> norms)."""
    fy = nodal_values(f, op, y)
    r = op.matrix @ y + fy - rhs
    scale = np.sqrt(op.grid.cell_volume)
    floor = 64 * np.finfo(float).eps * scale * np.linalg.norm(op.abs_matrix @ np.abs(y) + np.abs(fy) + np.abs(rhs))
    return r, float(floor)


def solve_state_array(op: EllipticOperator, f, rhs: np.ndarray, y0: np.ndarray | None = None,
                      newton: NewtonSettings = DEFAULT_NEWTON,
                      linear: LinearSolveSettings = DEFAULT_LINEAR) -> np.ndarray:
    f = ex.as_expr(f)
    _, df, _ = derivatives(f)
    scale = np.sqrt(op.grid.cell_volume)
    y = np.zeros(op.size) if y0 is None else np.array(y0, dtype=float)
    r, floor = state_residual(op, f, y, rhs)
    norm = scale * np.linalg.norm(r)
    for it in range(newton.max_iters + 1):
        if norm <= max(newton.abs_tolerance, floor):
            return y
        if it == newton.max_iters:
            break
        dy = spd_solve(op, nodal_values(df, op, y), -r, linear)
        step = 1.0
        for _ in range(newton.max_halvings + 1):
            trial = y + step * dy
            try:
                r_trial, floor_trial = state_residual(op, f, trial, rhs)
            except ex.ExprDomainError:
                step *= 0.5
                continue
            norm_trial = scale * np.linalg.norm(r_trial)
            if norm_trial < norm or norm_trial <= max(newton.abs_tolerance, floor_trial):
                break
            step *= 0.5
        else:
            raise NewtonConvergenceError("line search failed to reduce the state residual", norm, it + 1)
        y, r, norm, floor = trial, r_trial, norm_trial, floor_trial
        logger.debug("newton %d: residual %.3e (step %.3g)", it + 1, norm, step)
    raise NewtonConvergenceError("Newton iteration limit reached", norm, newton.max_iters)


def solve_state(op: EllipticOperator, f, rhs: GridFunction, y0: GridFunction | None = None,
                newton: NewtonSettings = DEFAULT_NEWTON,
                linear: LinearSolveSettings = DEFAULT_LINEAR) -> GridFunction:
    """Solve ``K y + f(x, y) = rhs`` by damped Newton; ``y0`` defaults to zero."""
    _check_grid(op, rhs)
    start = None if y0 is None else y0.values
    return GridFunction(op.grid, solve_state_array(op, f, rhs.values, start, newton, linear))


def linearized_shift(op: EllipticOperator, f, y: np.ndarray) -> np.ndarray:
    return nodal_values(derivatives(ex.as_expr(f))[1], op, y)


def curvature(op: EllipticOperator, f, y: np.ndarray) -> np.ndarray:
    return nodal_values(derivatives(ex.as_expr(f))[2], op, y)


def solve_linearized(op: EllipticOperator, f, y: GridFunction, v: GridFunction,
                     linear: LinearSolveSettings = DEFAULT_LINEAR) -> GridFunction:
    """Derivative of the control-to-state map at ``y`` in direction ``v``."""
    _check_grid(op, y, v)
    return GridFunction(op.grid, spd_solve(op, linearized_shift(op, f, y.values), v.values, linear))


def solve_second_order(op: EllipticOperator, f, y: GridFunction, z1: GridFunction, z2: GridFunction,
                       linear: LinearSolveSettings = DEFAULT_LINEAR) -> GridFunction:
    """Second derivative of the control-to-state map for linearized responses ``z1``, ``z2``."""
    _check_grid(op, y, z1, z2)
    rhs = -curvature(op, f, y.values) * (z1.values * z2.values)
    return GridFunction(op.grid, spd_solve(op, linearized_shift(op, f, y.values), rhs, linear))


def solve_adjoint(op: EllipticOperator, f, y: GridFunction, source: GridFunction,
                  linear: LinearSolveSettings = DEFAULT_LINEAR) -> GridFunction:
    # K is symmetric, so the adjoint system shares the linearized matrix
    _check_grid(op, y, source)
    return GridFunction(op.grid, spd_solve(op, linearized_shift(op, f, y.values), source.values, linear))
