"""Finite-difference and duality checks of the derivative formulas on a configured game."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calculus import evaluate_point, gradient, hessian_block_apply
from .game import ControlProfile, GameSpec, Perturbation, TiltVector, cost, project_admissible
from .mesh import GridFunction, inner_product
from .pde import solve_adjoint, solve_linearized

GRADIENT_TOL = 1e-6
HESSIAN_TOL = 1e-5
ADJOINT_TOL = 1e-10


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tolerance)


def probe_point(spec: GameSpec, e: Perturbation, seed: int = 0) -> ControlProfile:
    """A deterministic feasible profile strictly inside the box."""
    rng = np.random.default_rng(seed)
    lo, hi = spec.lower(e), spec.upper(e)
    u = 0.5 * (lo + hi) + 0.25 * (hi - lo) * rng.uniform(-1.0, 1.0, lo.shape)
    return project_admissible(spec, e, ControlProfile(spec.grid, u))


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), np.finfo(float).tiny)


def gradient_check(spec, e, t, u, directions=10, eps=1e-5, seed=1) -> float:
    """Worst relative error of the adjoint gradient against central differences of the cost."""
    rng = np.random.default_rng(seed)
    pt = evaluate_point(spec, u, e)
    worst = 0.0
    for _ in range(directions):
        k = int(rng.integers(spec.m))
        h = rng.standard_normal(spec.grid.size)
        step = np.zeros((spec.m, spec.grid.size))
        step[k] = eps * h
        up = cost(spec, k, u + ControlProfile(spec.grid, step), e, t)
        down = cost(spec, k, u - ControlProfile(spec.grid, step), e, t)
        exact = inner_product(gradient(spec, pt, k) - GridFunction(spec.grid, t.values[k]),
                              GridFunction(spec.grid, h))
        worst = max(worst, _rel((up - down) / (2 * eps), exact))
    return worst


def hessian_check(spec, e, u, directions=10, eps=1e-4, seed=2) -> float:
    """Worst relative error of the Hessian blocks against differences of the gradient."""
    rng = np.random.default_rng(seed)
    pt = evaluate_point(spec, u, e)
    worst = 0.0
    for _ in range(directions):
        k, j = (int(i) for i in rng.integers(spec.m, size=2))
        hj = GridFunction(spec.grid, rng.standard_normal(spec.grid.size))
        hk = GridFunction(spec.grid, rng.standard_normal(spec.grid.size))
        step = np.zeros((spec.m, spec.grid.size))
        step[j] = eps * hj.values
        plus = evaluate_point(spec, u + ControlProfile(spec.grid, step), e, pt.y.values)
        minus = evaluate_point(spec, u - ControlProfile(spec.grid, step), e, pt.y.values)
        fd = inner_product(gradient(spec, plus, k) - gradient(spec, minus, k), hk) / (2 * eps)
        exact = inner_product(hessian_block_apply(spec, pt, k, j, hj), hk)
        worst = max(worst, _rel(fd, exact))
    return worst


def adjoint_check(spec, e, u, trials=10, seed=3) -> float:
    """Worst relative mismatch in <phi, v> = <source, z> for random sources and directions."""
    rng = np.random.default_rng(seed)
    pt = evaluate_point(spec, u, e)
    worst = 0.0
    for _ in range(trials):
        source = GridFunction(spec.grid, rng.standard_normal(spec.grid.size))
        v = GridFunction(spec.grid, rng.standard_normal(spec.grid.size))
        phi = solve_adjoint(spec.op, spec.f, pt.y, source, spec.linear)
        z = solve_linearized(spec.op, spec.f, pt.y, v, spec.linear)
        worst = max(worst, _rel(inner_product(phi, v), inner_product(source, z)))
    return worst


def run_checks(spec: GameSpec, e: Perturbation | None = None, t: TiltVector | None = None) -> list[CheckResult]:
    e = spec.zero_perturbation() if e is None else e
    t = spec.zero_tilt() if t is None else t
    u = probe_point(spec, e)
    return [
        CheckResult("gradient", gradient_check(spec, e, t, u), GRADIENT_TOL),
        CheckResult("hessian", hessian_check(spec, e, u), HESSIAN_TOL),
        CheckResult("adjoint", adjoint_check(spec, e, u), ADJOINT_TOL),
    ]
