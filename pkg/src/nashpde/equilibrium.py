"""Variational Nash equilibria as solutions of the parametric variational inequality.

Two iterations are provided: a projected fixed-point (forward-backward) step
on the whole profile, and a Gauss-Seidel sweep in which each player runs
projected-gradient steps on its own tilted cost with the others frozen.
Convergence is measured by the natural-map residual
``||u - P(u - (F(u, e) - u*))||`` with unit step.  A solve is accepted only
when both its L2 norm and its largest nodal value are within tolerance, so
the node-wise sign conditions hold to the same tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .calculus import EquilibriumPoint, evaluate_point, lipschitz_estimate, tilted_gradient
from .game import ControlProfile, GameSpec, Perturbation, TiltVector

logger = logging.getLogger(__name__)

METHODS = ("projected-fixed-point", "gauss-seidel-best-response")


@dataclass(frozen=True)
class SolverSettings:
    method: str = "projected-fixed-point"
    tau: float | None = None  # None -> derived from a Lipschitz estimate
    residual_tolerance: float = 1e-9
    max_outer_iters: int = 5000
    inner_iters: int = 50
    power_iters: int = 20

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.residual_tolerance > 0:
            raise ValueError("residual_tolerance must be positive")
        if self.max_outer_iters < 0 or self.inner_iters < 1:
            raise ValueError("iteration limits must be positive")


@dataclass(eq=False)
class EquilibriumResult:
    u_bar: ControlProfile
    point: EquilibriumPoint
    residual: float
    iterations: int
    u_hat_star: ControlProfile
    converged: bool
    lower: np.ndarray
    upper: np.ndarray
    tilt: TiltVector
    tau: float = float("nan")
    history: list[float] = field(default_factory=list)
    max_residual: float = float("nan")  # largest nodal value of the natural map

    @property
    def e(self) -> Perturbation:
        return self.point.e


def _natural_map(u: np.ndarray, F: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return u - np.clip(u - F, lo, hi)


def _natural_residual(u: np.ndarray, F: np.ndarray, lo: np.ndarray, hi: np.ndarray, vol: float) -> float:
    return float(np.sqrt(np.sum(_natural_map(u, F, lo, hi) ** 2) * vol))


def _residuals(u, F, lo, hi, vol) -> tuple[float, float]:
    r = _natural_map(u, F, lo, hi)
    return float(np.sqrt(np.sum(r**2) * vol)), float(np.max(np.abs(r), initial=0.0))


def residual(spec: GameSpec, e: Perturbation, t: TiltVector, u: ControlProfile) -> float:
    """Natural-map residual; zero exactly at solutions of the discrete variational inequality."""
    pt = evaluate_point(spec, u, e)
    return _natural_residual(u.values, tilted_gradient(spec, pt, t), spec.lower(e), spec.upper(e),
                             spec.grid.cell_volume)


def default_step(spec: GameSpec, pt: EquilibriumPoint, power_iters: int = 20) -> tuple[float, float]:
    """Initial step ``0.9 mu / max(L, mu)`` and the guaranteed-contraction floor ``0.9 mu / max(L, mu)**2``.

    ``mu`` is the smallest zeta floor and ``L`` a power-iteration estimate of
    the spectral norm of the derivative of F.
    """
    mu = spec.min_zeta_floor
    lip = max(lipschitz_estimate(spec, pt, power_iters), mu)
    floor = 0.9 * mu / lip**2
    return max(0.9 * mu / lip, floor), floor


def evaluate_candidate(spec: GameSpec, e: Perturbation, t: TiltVector, u: ControlProfile,
                       pt: EquilibriumPoint | None = None, **extra) -> EquilibriumResult:
    """Wrap a profile in an :class:`EquilibriumResult` (residual and multiplier evaluated there)."""
    pt = evaluate_point(spec, u, e) if pt is None else pt
    G = tilted_gradient(spec, pt, t)
    lo, hi = spec.lower(e), spec.upper(e)
    res, sup = _residuals(u.values, G, lo, hi, spec.grid.cell_volume)
    extra.setdefault("converged", False)
    extra.setdefault("iterations", 0)
    return EquilibriumResult(
        u_bar=u, point=pt, residual=res, max_residual=sup, u_hat_star=ControlProfile(spec.grid, -G),
        lower=lo, upper=hi, tilt=t, **extra,
    )


def solve_equilibrium(spec: GameSpec, e: Perturbation | None = None, t: TiltVector | None = None,
                      settings: SolverSettings | None = None, warm_start: ControlProfile | None = None,
                      callback: Callable[[int, float], None] | None = None) -> EquilibriumResult:
    """Compute a variational Nash equilibrium for tilt ``t`` and parameter ``e``.

    Returns the first iterate whose residual (L2 and nodal maximum) meets the
    tolerance.  When the iteration budget runs out, the iterate with the
    smallest residual is returned with ``converged=False``.
    ``callback(iteration, residual)`` is invoked once per outer iteration.

    An explicit ``settings.tau`` is used as a fixed step.  Otherwise the step
    starts from :func:`default_step` and is halved, never below the
    contraction floor, whenever successive steps lengthen.
    """
    settings = SolverSettings() if settings is None else settings
    e = spec.zero_perturbation() if e is None else e
    t = spec.zero_tilt() if t is None else t
    spec.validate_perturbation(e)
    lo, hi = spec.lower(e), spec.upper(e)
    vol = spec.grid.cell_volume
    tol = settings.residual_tolerance

    start = np.zeros((spec.m, spec.grid.size)) if warm_start is None else warm_start.values
    u = np.clip(start, lo, hi)
    pt = evaluate_point(spec, ControlProfile(spec.grid, u), e)
    if settings.tau is None:
        tau, tau_floor = default_step(spec, pt, settings.power_iters)
    else:
        tau = tau_floor = settings.tau

    history: list[float] = []
    best = None
    it = 0
    last_move = np.inf
    while True:
        G = tilted_gradient(spec, pt, t)
        r, sup = _residuals(u, G, lo, hi, vol)
        history.append(r)
        if callback is not None:
            callback(it, r)
        if best is None or max(r, sup) < best[0]:
            best = (max(r, sup), pt, it)
        if max(r, sup) <= tol or it >= settings.max_outer_iters:
            break
        it += 1
        previous = u
        if settings.method == "projected-fixed-point":
            u = np.clip(u - tau * G, lo, hi)
            pt = evaluate_point(spec, ControlProfile(spec.grid, u), e, pt.y.values, pt.phi_values)
        else:
            u, pt = _gauss_seidel_sweep(spec, e, t, u, pt, lo, hi, tau, max(0.1 * tol, 0.1 * r), settings.inner_iters)
        # for a contraction the step lengths never grow; growth means tau is too long
        move = float(np.sqrt(np.sum((u - previous) ** 2) * vol))
        if move > last_move and tau > tau_floor:
            tau = max(0.5 * tau, tau_floor)
            logger.debug("step length grew; tau reduced to %.3e", tau)
        last_move = move
        logger.debug("%s iteration %d: residual %.3e", settings.method, it, r)

    r, pt, it_best = best
    converged = r <= tol
    if not converged:
        logger.info("equilibrium solver stopped at residual %.3e after %d iterations", r, it)
    return evaluate_candidate(
        spec, e, t, pt.u, pt, converged=converged, iterations=it_best if converged else it,
        tau=tau, history=history,
    )


def _gauss_seidel_sweep(spec, e, t, u, pt, lo, hi, tau, inner_tol, inner_iters):
    vol = spec.grid.cell_volume
    u = u.copy()
    for k in range(spec.m):
        for _ in range(inner_iters):
            Gk = tilted_gradient(spec, pt, t)[k]
            rk = float(np.sqrt(np.sum((u[k] - np.clip(u[k] - Gk, lo[k], hi[k])) ** 2) * vol))
            if rk <= inner_tol:
                break
            u[k] = np.clip(u[k] - tau * Gk, lo[k], hi[k])
            pt = evaluate_point(spec, ControlProfile(spec.grid, u), e, pt.y.values, pt.phi_values)
    return u, pt


@dataclass
class VariationalCheck:
    passed: bool
    worst_violation: float
    player_passed: list[bool]
    player_violation: list[float]
    tolerance: float


def check_variational_equilibrium(result: EquilibriumResult, tolerance: float = 1e-9,
                                  bound_tolerance: float = 1e-10) -> VariationalCheck:
    """Node-wise normal-cone test of the multiplier ``u_hat_star``.

    At a lower bound the multiplier must be <= 0, at an upper bound >= 0, and
    it must vanish at interior nodes.
    """
    u = result.u_bar.values
    w = result.u_hat_star.values
    at_lo = u <= result.lower + bound_tolerance
    at_hi = u >= result.upper - bound_tolerance
    viol = np.where(at_lo, np.maximum(w, 0.0), np.where(at_hi, np.maximum(-w, 0.0), np.abs(w)))
    per_player = [float(v.max()) if v.size else 0.0 for v in viol]
    passed = [v <= tolerance for v in per_player]
    return VariationalCheck(all(passed), max(per_player), passed, per_player, tolerance)
