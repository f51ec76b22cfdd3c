"""Players, admissible boxes, perturbation parameters and the parametric player costs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from . import expr as ex
from .mesh import Grid, GridFunction, GridMismatchError
from .pde import (
    DEFAULT_LINEAR,
    DEFAULT_NEWTON,
    EllipticOperator,
    LinearSolveSettings,
    NewtonSettings,
    check_monotone,
    solve_state_array,
)


class GameSpecError(ValueError):
    """A game description violates one of its structural requirements."""


class InfeasiblePerturbationError(ValueError):
    pass


def _as_values(grid: Grid, value, name: str) -> np.ndarray:
    if isinstance(value, GridFunction):
        if value.grid != grid:
            raise GridMismatchError(f"{name} lives on a different grid")
        return value.values
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.size, float(arr))
    if arr.shape != (grid.size,):
        raise GridMismatchError(f"{name}: expected {grid.size} values, got shape {arr.shape}")
    return arr


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


class ControlProfile:
    """An m-tuple of grid functions stored as an ``(m, n)`` array.

    Norms and inner products are those of the Hilbert product L2(Omega)^m.
    """

    def __init__(self, grid: Grid, values):
        values = np.array(values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[1] != grid.size:
            raise GridMismatchError(f"profile must have shape (m, {grid.size}), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("profile values must be finite")
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    @classmethod
    def from_functions(cls, functions: Sequence[GridFunction]):
        grid = functions[0].grid
        for g in functions:
            if g.grid != grid:
                raise GridMismatchError("profile components live on different grids")
        return cls(grid, np.stack([g.values for g in functions]))

    @classmethod
    def zeros(cls, grid: Grid, m: int):
        return cls(grid, np.zeros((m, grid.size)))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.m

    def __getitem__(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.values[k])

    def __iter__(self):
        return (self[k] for k in range(self.m))

    def _other(self, other):
        if isinstance(other, ControlProfile):
            if other.grid != self.grid or other.m != self.m:
                raise GridMismatchError("profiles have different grids or player counts")
            return other.values
        return float(other)

    def __add__(self, other):
        return type(self)(self.grid, self.values + self._other(other))

    def __sub__(self, other):
        return type(self)(self.grid, self.values - self._other(other))

    def __mul__(self, other):
        return type(self)(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.grid, -self.values)

    def inner(self, other: "ControlProfile") -> float:
        return float(np.sum(self.values * self._other(other))) * self.grid.cell_volume

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2) * self.grid.cell_volume))

    def player_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=1) * self.grid.cell_volume)


class TiltVector(ControlProfile):
    """Linear tilt ``(u*_1, ..., u*_m)`` subtracted from each player's cost."""


@dataclass(frozen=True, eq=False)
class PlayerSpec:
    grid: Grid
    L: ex.Expr
    zeta: np.ndarray
    zeta_floor: float
    B: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    yd: np.ndarray = None

    def __post_init__(self):
        g = self.grid
        object.__setattr__(self, "L", ex.as_expr(self.L))
        for name in ("zeta", "B", "alpha", "beta"):
            object.__setattr__(self, name, _frozen(_as_values(g, getattr(self, name), name)))
        yd = np.zeros(g.size) if self.yd is None else _as_values(g, self.yd, "yd")
        object.__setattr__(self, "yd", _frozen(yd))
        if not self.zeta_floor > 0:
            raise GameSpecError(f"zeta_floor must be positive, got {self.zeta_floor}")
        if np.any(self.zeta < self.zeta_floor):
            raise GameSpecError(
                f"zeta must satisfy zeta >= zeta_floor = {self.zeta_floor}; min zeta = {self.zeta.min():.4g}"
            )
        if not np.all(self.alpha < self.beta):
            raise GameSpecError("alpha < beta must hold at every node")
        if not ex.variables(self.L) <= {"x1", "x2", "y", "yd"}:
            raise GameSpecError("L may only reference x1, x2, y, yd")


@dataclass(frozen=True, eq=False)
class GameSpec:
    op: EllipticOperator
    f: ex.Expr
    players: tuple[PlayerSpec, ...]
    sigma: float = 1e-6
    newton: NewtonSettings = DEFAULT_NEWTON
    linear: LinearSolveSettings = DEFAULT_LINEAR
    monotone_range: tuple[float, float] = (-5.0, 5.0)

    def __post_init__(self):
        object.__setattr__(self, "f", ex.as_expr(self.f))
        object.__setattr__(self, "players", tuple(self.players))
        if not self.players:
            raise GameSpecError("at least one player is required")
        for p in self.players:
            if p.grid != self.grid:
                raise GridMismatchError("player data must live on the game grid")
        if not self.sigma > 0:
            raise GameSpecError("sigma must be positive")
        check_monotone(self.f, self.grid, self.monotone_range)
        # stacked copies used by the solvers
        for name in ("zeta", "B", "alpha", "beta", "yd"):
            object.__setattr__(self, f"_{name}", _frozen(np.stack([getattr(p, name) for p in self.players])))

    @property
    def grid(self) -> Grid:
        return self.op.grid

    @property
    def m(self) -> int:
        return len(self.players)

    @property
    def zeta(self) -> np.ndarray:
        return self._zeta

    @property
    def B(self) -> np.ndarray:
        return self._B

    @property
    def yd(self) -> np.ndarray:
        return self._yd

    @property
    def min_zeta_floor(self) -> float:
        return min(p.zeta_floor for p in self.players)

    def zero_perturbation(self) -> "Perturbation":
        return Perturbation.zero(self.grid, self.m)

    def zero_tilt(self) -> TiltVector:
        return TiltVector.zeros(self.grid, self.m)

    def lower(self, e: "Perturbation") -> np.ndarray:
        return self._alpha + e.e_alpha

    def upper(self, e: "Perturbation") -> np.ndarray:
        return self._beta + e.e_beta

    def validate_perturbation(self, e: "Perturbation") -> None:
        if e.grid != self.grid or e.m != self.m:
            raise GridMismatchError("perturbation does not match the game")
        gap = self.upper(e) - self.lower(e) - self.sigma
        if np.any(gap < 0):
            k, i = np.unravel_index(int(np.argmin(gap)), gap.shape)
            raise InfeasiblePerturbationError(
                f"player {k}: shifted bounds violate alpha + e_alpha + sigma <= beta + e_beta "
                f"at node {i} (gap {gap[k, i] + self.sigma:.4g}, sigma {self.sigma:g})"
            )

    def perturbation(self, e_Y=0.0, e_J=0.0, e_alpha=0.0, e_beta=0.0) -> "Perturbation":
        """Build and validate a perturbation; scalars broadcast over nodes and players."""
        e = Perturbation(self.grid, e_Y, _per_player(self, e_J), _per_player(self, e_alpha), _per_player(self, e_beta))
        self.validate_perturbation(e)
        return e


def _per_player(spec: GameSpec, value) -> np.ndarray:
    if isinstance(value, ControlProfile):
        return value.values
    if isinstance(value, (list, tuple)):
        return np.stack([_as_values(spec.grid, v, "perturbation") for v in value])
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full((spec.m, spec.grid.size), float(arr))
    return np.broadcast_to(arr, (spec.m, spec.grid.size))


class Perturbation:
    """Basic parameter ``(e_Y, {e_kJ, e_kalpha, e_kbeta})``.

    ``norm`` is the sum norm: L2 for ``e_Y`` and ``e_kJ``, max-node for the
    bound shifts.
    """

    def __init__(self, grid: Grid, e_Y, e_J, e_alpha, e_beta):
        self.grid = grid
        self.e_Y = _frozen(_as_values(grid, e_Y, "e_Y"))
        arrays = [np.atleast_2d(np.asarray(a, dtype=float)) for a in (e_J, e_alpha, e_beta)]
        m = arrays[0].shape[0]
        for a in arrays:
            if a.shape != (m, grid.size):
                raise GridMismatchError(f"per-player perturbation must have shape ({m}, {grid.size})")
            if not np.all(np.isfinite(a)):
                raise ValueError("perturbation values must be finite")
        self.e_J, self.e_alpha, self.e_beta = (_frozen(a) for a in arrays)

    @classmethod
    def zero(cls, grid: Grid, m: int) -> "Perturbation":
        z = np.zeros((m, grid.size))
        return cls(grid, np.zeros(grid.size), z, z, z)

    @property
    def m(self) -> int:
        return self.e_J.shape[0]

    def _combine(self, other: "Perturbation", sign: float) -> "Perturbation":
        if other.grid != self.grid or other.m != self.m:
            raise GridMismatchError("perturbations do not match")
        return Perturbation(
            self.grid,
            self.e_Y + sign * other.e_Y,
            self.e_J + sign * other.e_J,
            self.e_alpha + sign * other.e_alpha,
            self.e_beta + sign * other.e_beta,
        )

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, c: float) -> "Perturbation":
        c = float(c)
        return Perturbation(self.grid, c * self.e_Y, c * self.e_J, c * self.e_alpha, c * self.e_beta)

    __rmul__ = __mul__

    def norm(self) -> float:
        w = np.sqrt(self.grid.cell_volume)
        # BLAS nrm2 rescales, so tiny perturbations keep their norm
        total = w * sla.norm(self.e_Y)
        total += sum(w * sla.norm(row) for row in self.e_J)
        if self.grid.size:
            total += np.sum(np.max(np.abs(self.e_alpha), axis=1)) + np.sum(np.max(np.abs(self.e_beta), axis=1))
        return float(total)


def total_source(spec: GameSpec, u: ControlProfile, e: Perturbation) -> GridFunction:
    """Right-hand side ``sum_i B_i u_i + e_Y`` of the perturbed state equation."""
    if u.m != spec.m or u.grid != spec.grid:
        raise GridMismatchError("control profile does not match the game")
    return GridFunction(spec.grid, np.sum(spec.B * u.values, axis=0) + e.e_Y)


def project_admissible(spec: GameSpec, e: Perturbation, u: ControlProfile) -> ControlProfile:
    """Node-wise clamp onto the shifted boxes (the exact L2 projection)."""
    return type(u)(spec.grid, np.clip(u.values, spec.lower(e), spec.upper(e)))


def is_feasible(spec: GameSpec, e: Perturbation, u: ControlProfile, tol: float = 0.0) -> bool:
    return bool(np.all(u.values >= spec.lower(e) - tol) and np.all(u.values <= spec.upper(e) + tol))


def solve_game_state(spec: GameSpec, u: ControlProfile, e: Perturbation, y0: np.ndarray | None = None) -> np.ndarray:
    return solve_state_array(spec.op, spec.f, total_source(spec, u, e).values, y0, spec.newton, spec.linear)


def cost_from_state(spec: GameSpec, k: int, u: ControlProfile, e: Perturbation, t: TiltVector | None,
                    y: np.ndarray) -> float:
    p = spec.players[k]
    uk = u.values[k]
    track = ex.evaluate(p.L, spec.op.coordinates, y=y, yd=p.yd)
    integrand = np.broadcast_to(track, uk.shape) + 0.5 * p.zeta * uk**2 + e.e_J[k] * y
    if t is not None:
        integrand = integrand - t.values[k] * uk
    return float(np.sum(integrand)) * spec.grid.cell_volume


def cost(spec: GameSpec, k: int, u: ControlProfile, e: Perturbation | None = None,
         t: TiltVector | None = None) -> float:
    """Tilted parametric cost of player ``k`` at the profile ``u``."""
    e = spec.zero_perturbation() if e is None else e
    y = solve_game_state(spec, u, e)
    return cost_from_state(spec, k, u, e, t, y)
