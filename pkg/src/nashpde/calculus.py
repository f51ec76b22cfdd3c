"""Derivatives of the player costs: adjoint gradients, Hessian blocks and the quadratic form.

With ``S = K + diag(df/dy(y))`` and ``W_k = d2L_k/dy2(y) - phi_k d2f/dy2(y)``,
the Hessian block of player ``k`` with respect to ``u_j`` acts as

    H_kj h = B_k S^{-1} (W_k S^{-1} (B_j h)) + [k == j] zeta_k h.

The perturbation ``e_kJ`` enters only through the adjoint source, so the
``e_kJ``-part of the second-order state term is already carried by ``phi_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import (
    ControlProfile,
    GameSpec,
    Perturbation,
    TiltVector,
    solve_game_state,
)
from .mesh import GridFunction
from .pde import nodal_values, derivatives, spd_solve


@dataclass(frozen=True, eq=False)
class EquilibriumPoint:
    """State and adjoints at a control profile; all arrays are nodal."""

    u: ControlProfile
    e: Perturbation
    y: GridFunction
    phi: tuple[GridFunction, ...]
    shift: np.ndarray  # df/dy(y)
    weights: np.ndarray  # (m, n): d2L_k/dy2(y) - phi_k d2f/dy2(y)

    @property
    def phi_values(self) -> np.ndarray:
        return np.stack([p.values for p in self.phi])


def evaluate_point(spec: GameSpec, u: ControlProfile, e: Perturbation | None = None,
                   y0: np.ndarray | None = None, phi0: np.ndarray | None = None) -> EquilibriumPoint:
    """State, adjoints and curvature weights at ``u``.

    ``y0`` and ``phi0`` are optional initial guesses for the state and the
    ``(m, n)`` adjoints; they only affect the iteration counts.
    """
    e = spec.zero_perturbation() if e is None else e
    y = solve_game_state(spec, u, e, y0)
    op = spec.op
    _, df, d2f = derivatives(spec.f)
    shift = nodal_values(df, op, y)
    f2 = nodal_values(d2f, op, y)
    phis, weights = [], []
    for k, p in enumerate(spec.players):
        _, dL, d2L = derivatives(p.L)
        source = nodal_values(dL, op, y, p.yd) + e.e_J[k]
        phi = spd_solve(op, shift, source, spec.linear, None if phi0 is None else phi0[k])
        phis.append(GridFunction(spec.grid, phi))
        weights.append(nodal_values(d2L, op, y, p.yd) - phi * f2)
    w = np.stack(weights)
    w.flags.writeable = False
    shift.flags.writeable = False
    return EquilibriumPoint(u, e, GridFunction(spec.grid, y), tuple(phis), shift, w)


def _solve(spec: GameSpec, pt: EquilibriumPoint, rhs: np.ndarray) -> np.ndarray:
    return spd_solve(spec.op, pt.shift, rhs, spec.linear)


def gradient(spec: GameSpec, pt: EquilibriumPoint, k: int) -> GridFunction:
    """L2 gradient of player ``k``'s cost with respect to its own control (no tilt)."""
    return GridFunction(spec.grid, spec.zeta[k] * pt.u.values[k] + spec.B[k] * pt.phi[k].values)


def pseudo_gradient(spec: GameSpec, pt: EquilibriumPoint) -> ControlProfile:
    return ControlProfile(spec.grid, spec.zeta * pt.u.values + spec.B * pt.phi_values)


def operator_F(spec: GameSpec, u: ControlProfile, e: Perturbation | None = None) -> ControlProfile:
    return pseudo_gradient(spec, evaluate_point(spec, u, e))


def hessian_block_apply(spec: GameSpec, pt: EquilibriumPoint, k: int, j: int, h_j: GridFunction) -> GridFunction:
    z = _solve(spec, pt, spec.B[j] * h_j.values)
    q = _solve(spec, pt, pt.weights[k] * z)
    out = spec.B[k] * q
    if k == j:
        out = out + spec.zeta[k] * h_j.values
    return GridFunction(spec.grid, out)


def jacobian_apply(spec: GameSpec, pt: EquilibriumPoint, h: np.ndarray) -> np.ndarray:
    """Nodal action of the derivative of F: row k is sum_j H_kj h_j (m + 1 solves)."""
    h = np.asarray(h, dtype=float).reshape(spec.m, -1)
    Z = _solve(spec, pt, np.sum(spec.B * h, axis=0))
    out = spec.zeta * h
    for k in range(spec.m):
        out[k] += spec.B[k] * _solve(spec, pt, pt.weights[k] * Z)
    return out


def jacobian_transpose_apply(spec: GameSpec, pt: EquilibriumPoint, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float).reshape(spec.m, -1)
    s = np.zeros(spec.grid.size)
    for k in range(spec.m):
        s += pt.weights[k] * _solve(spec, pt, spec.B[k] * h[k])
    return spec.zeta * h + spec.B * _solve(spec, pt, s)


def symmetric_jacobian_apply(spec: GameSpec, pt: EquilibriumPoint, h: np.ndarray) -> np.ndarray:
    return 0.5 * (jacobian_apply(spec, pt, h) + jacobian_transpose_apply(spec, pt, h))


def quadratic_form(spec: GameSpec, pt: EquilibriumPoint, h: ControlProfile) -> float:
    """Sum over all (k, j) blocks of <H_kj h_j, h_k>."""
    total = 0.0
    for k in range(spec.m):
        for j in range(spec.m):
            total += float(np.dot(hessian_block_apply(spec, pt, k, j, h[j]).values, h.values[k]))
    return total * spec.grid.cell_volume


def quadratic_form_control_part(spec: GameSpec, h: ControlProfile) -> float:
    """The coercive part: sum_k of the zeta_k-weighted squared L2 norm of h_k."""
    return float(np.sum(spec.zeta * h.values**2)) * spec.grid.cell_volume


def quadratic_form_state_part(spec: GameSpec, pt: EquilibriumPoint, h: ControlProfile) -> float:
    """The compact part: sum_k integral of W_k z_k Z, with z_k the response to B_k h_k."""
    z = np.stack([_solve(spec, pt, spec.B[k] * h.values[k]) for k in range(spec.m)])
    Z = np.sum(z, axis=0)
    return float(np.sum(pt.weights * z * Z)) * spec.grid.cell_volume


def lipschitz_estimate(spec: GameSpec, pt: EquilibriumPoint, iterations: int = 20, seed: int = 0) -> float:
    """Power-iteration estimate of the spectral norm of the derivative of F at ``pt``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((spec.m, spec.grid.size))
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iterations):
        w = jacobian_transpose_apply(spec, pt, jacobian_apply(spec, pt, v))
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        sigma = np.sqrt(nrm)
        v = w / nrm
    return float(sigma)


def tilted_gradient(spec: GameSpec, pt: EquilibriumPoint, t: TiltVector | None) -> np.ndarray:
    F = spec.zeta * pt.u.values + spec.B * pt.phi_values
    return F if t is None else F - t.values


__all__ = [
    "EquilibriumPoint",
    "evaluate_point",
    "gradient",
    "pseudo_gradient",
    "operator_F",
    "hessian_block_apply",
    "jacobian_apply",
    "jacobian_transpose_apply",
    "symmetric_jacobian_apply",
    "quadratic_form",
    "quadratic_form_control_part",
    "quadratic_form_state_part",
    "lipschitz_estimate",
    "tilted_gradient",
]
