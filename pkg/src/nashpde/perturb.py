"""Empirical full-stability harness.

Pairs of tilt/parameter perturbations near a base point are solved from the
base equilibrium and the resulting displacements are tested against the
Lipschitzian inequality

    ||dt - 2 kappa du|| <= ||dt|| + ell ||de||

and its Hölderian variant with ``||de||**0.5``.  For each candidate kappa,
``ell`` is fitted as the smallest value making every sample with ``de != 0``
pass; samples with ``de == 0`` pass or fail on their own.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .equilibrium import EquilibriumResult, SolverSettings, solve_equilibrium
from .game import GameSpec, Perturbation, TiltVector

logger = logging.getLogger(__name__)

KAPPA_GRID_DECADES = (-3.0, 1.0)
KAPPA_GRID_POINTS = 41
MAX_DROP_FRACTION = 0.1
CSV_HEADER = ("index", "d_tilt", "d_param", "d_u", "lip_lhs", "lip_rhs", "holder_rhs")


class HarnessError(RuntimeError):
    pass


@dataclass(eq=False)
class PerturbationSample:
    index: int
    t1: TiltVector
    t2: TiltVector
    e1: Perturbation
    e2: Perturbation
    sol1: EquilibriumResult
    sol2: EquilibriumResult
    d_u: float
    d_tilt: float
    d_param: float
    # filled in once kappa_hat and ell_hat are known
    lip_lhs: float = float("nan")
    lip_rhs: float = float("nan")
    holder_rhs: float = float("nan")


@dataclass(eq=False)
class StabilityReport:
    samples: list[PerturbationSample]
    requested: int
    dropped: int
    kappa_hat: float
    ell_hat: float
    ell_holder: float
    lip_pass_rate: float
    holder_pass_rate: float
    worst_lip_violation: float
    worst_holder_violation: float
    max_lip_ratio: float
    max_holder_ratio: float
    seed: int
    radius_tilt: float
    radius_param: float
    kappa_grid: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    def summary(self) -> dict:
        return {
            "samples": len(self.samples),
            "dropped": self.dropped,
            "kappa_hat": self.kappa_hat,
            "ell_hat": self.ell_hat,
            "ell_holder": self.ell_holder,
            "lip_pass_rate": self.lip_pass_rate,
            "holder_pass_rate": self.holder_pass_rate,
            "worst_lip_violation": self.worst_lip_violation,
            "worst_holder_violation": self.worst_holder_violation,
            "max_lip_ratio": self.max_lip_ratio,
            "max_holder_ratio": self.max_holder_ratio,
        }


def default_workers() -> int:
    raw = os.environ.get("NASHPDE_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"NASHPDE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"NASHPDE_THREADS must be a positive integer, got {raw!r}")
    return n


def _uniform_field(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape)


def _draw_tilt(spec: GameSpec, base: TiltVector, radius: float, rng) -> TiltVector:
    if radius == 0.0:
        return base
    w = TiltVector(spec.grid, _uniform_field(rng, (spec.m, spec.grid.size)))
    scale = radius * rng.uniform() / w.norm()
    return base + w * scale


def _draw_param(spec: GameSpec, base: Perturbation, radius: float, rng) -> Perturbation:
    if radius == 0.0:
        return base
    m, n = spec.m, spec.grid.size
    d = Perturbation(spec.grid, _uniform_field(rng, n), _uniform_field(rng, (m, n)),
                     _uniform_field(rng, (m, n)), _uniform_field(rng, (m, n)))
    d = d * (radius * rng.uniform() / d.norm())
    # shrink only the bound shifts until the sigma margin holds again
    e_alpha, e_beta = d.e_alpha, d.e_beta
    for _ in range(60):
        e = base + Perturbation(spec.grid, d.e_Y, d.e_J, e_alpha, e_beta)
        if np.all(spec.lower(e) + spec.sigma <= spec.upper(e)):
            return e
        e_alpha, e_beta = 0.5 * e_alpha, 0.5 * e_beta
    return base + Perturbation(spec.grid, d.e_Y, d.e_J, 0.0 * d.e_alpha, 0.0 * d.e_beta)


def _lipschitz_terms(samples, kappa):
    d_tilt = np.array([s.d_tilt for s in samples])
    d_param = np.array([s.d_param for s in samples])
    lhs = np.array([(s.t1 - s.t2 - (s.sol1.u_bar - s.sol2.u_bar) * (2.0 * kappa)).norm() for s in samples])
    return lhs, d_tilt, d_param


def _slack(kappa: float, tol: float, mu: float, rhs: np.ndarray) -> np.ndarray:
    # both solves carry an error of at most tol / mu in the controls
    return 4.0 * kappa * tol / mu + 1e-12 * rhs


def _fit(samples, kappa, tol, mu):
    """Fitted ell and pass mask at ``kappa``."""
    lhs, d_tilt, d_param = _lipschitz_terms(samples, kappa)
    has_param = d_param > 0
    excess = lhs - d_tilt - _slack(kappa, tol, mu, d_tilt)
    ell = float(np.max(excess[has_param] / d_param[has_param], initial=0.0))
    rhs = d_tilt + ell * d_param
    passed = lhs <= rhs + _slack(kappa, tol, mu, rhs)
    return ell, lhs, rhs, passed


def _solve(spec, e, t, settings, warm):
    try:
        return solve_equilibrium(spec, e, t, settings, warm_start=warm)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        logger.info("harness solve failed: %s", exc)
        return None


def run_harness(spec: GameSpec, base_e: Perturbation | None = None, base_t: TiltVector | None = None,
                n_samples: int = 50, radius_tilt: float = 1e-2, radius_param: float = 1e-2, seed: int = 0,
                settings: SolverSettings | None = None, workers: int | None = None,
                base: EquilibriumResult | None = None) -> StabilityReport:
    """Sample perturbation pairs around ``(base_t, base_e)`` and estimate the moduli.

    All random fields are drawn up front from ``seed`` so the report does not
    depend on the number of worker threads.
    """
    if n_samples < 0:
        raise ValueError("n_samples must be non-negative")
    if radius_tilt < 0 or radius_param < 0 or radius_tilt + radius_param == 0:
        raise ValueError("radii must be non-negative and not both zero")
    settings = SolverSettings() if settings is None else settings
    base_e = spec.zero_perturbation() if base_e is None else base_e
    base_t = spec.zero_tilt() if base_t is None else base_t
    if base is None:
        base = solve_equilibrium(spec, base_e, base_t, settings)
    if not base.converged:
        raise HarnessError(f"base equilibrium did not converge (residual {base.residual:.3e})")

    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(n_samples):
        t1 = _draw_tilt(spec, base_t, radius_tilt, rng)
        e1 = _draw_param(spec, base_e, radius_param, rng)
        t2 = _draw_tilt(spec, base_t, radius_tilt, rng)
        e2 = _draw_param(spec, base_e, radius_param, rng)
        draws.append((t1, e1, t2, e2))

    # the step size is shared so the sample solves differ only in their data
    settings = replace(settings, tau=settings.tau or base.tau)
    jobs = [(e, t) for t1, e1, t2, e2 in draws for t, e in ((t1, e1), (t2, e2))]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sols = list(pool.map(lambda job: _solve(spec, job[0], job[1], settings, base.u_bar), jobs))
    else:
        sols = [_solve(spec, e, t, settings, base.u_bar) for e, t in jobs]

    samples, dropped = [], 0
    for i, (t1, e1, t2, e2) in enumerate(draws):
        s1, s2 = sols[2 * i], sols[2 * i + 1]
        if s1 is None or s2 is None or not (s1.converged and s2.converged):
            dropped += 1
            continue
        samples.append(PerturbationSample(
            i, t1, t2, e1, e2, s1, s2,
            d_u=(s1.u_bar - s2.u_bar).norm(), d_tilt=(t1 - t2).norm(), d_param=(e1 - e2).norm(),
        ))
    if n_samples and dropped > MAX_DROP_FRACTION * n_samples:
        raise HarnessError(f"{dropped} of {n_samples} samples failed to converge")
    return _assemble(spec, samples, n_samples, dropped, settings.residual_tolerance, seed, radius_tilt, radius_param)


def _assemble(spec, samples, requested, dropped, tol, seed, radius_tilt, radius_param) -> StabilityReport:
    mu = spec.min_zeta_floor
    grid = mu * np.logspace(*KAPPA_GRID_DECADES, KAPPA_GRID_POINTS)
    if not samples:
        return StabilityReport([], requested, dropped, float("nan"), float("nan"), float("nan"), 1.0, 1.0,
                               0.0, 0.0, 0.0, 0.0, seed, radius_tilt, radius_param, grid)

    ok = [bool(np.all(_fit(samples, k, tol, mu)[3])) for k in grid]
    if ok[0]:
        last = max(i for i, flag in enumerate(ok) if flag and all(ok[: i + 1]))
        kappa = grid[last]
        if last + 1 < len(grid):
            lo, hi = kappa, grid[last + 1]
            for _ in range(30):
                mid = 0.5 * (lo + hi)
                if np.all(_fit(samples, mid, tol, mu)[3]):
                    lo = mid
                else:
                    hi = mid
            kappa = lo
        kappa_hat = float(kappa)
    else:
        kappa, kappa_hat = grid[0], 0.0

    ell, lhs, rhs, passed = _fit(samples, kappa, tol, mu)
    d_tilt = np.array([s.d_tilt for s in samples])
    d_param = np.array([s.d_param for s in samples])
    d_u = np.array([s.d_u for s in samples])
    root = np.sqrt(d_param)
    holder_rhs = d_tilt + ell * np.maximum(1.0, root) * root
    holder_pass = lhs <= holder_rhs + _slack(kappa, tol, mu, holder_rhs)
    has_param = d_param > 0
    ell_holder = float(np.max((lhs - d_tilt)[has_param] / root[has_param], initial=0.0))
    for s, a, b, c in zip(samples, lhs, rhs, holder_rhs):
        s.lip_lhs, s.lip_rhs, s.holder_rhs = float(a), float(b), float(c)

    with np.errstate(divide="ignore", invalid="ignore"):
        lip_ratio = np.where(d_tilt + d_param > 0, d_u / (d_tilt + d_param), 0.0)
        holder_ratio = np.where(d_tilt + root > 0, d_u / (d_tilt + root), 0.0)
    return StabilityReport(
        samples=samples, requested=requested, dropped=dropped,
        kappa_hat=kappa_hat, ell_hat=ell, ell_holder=max(ell_holder, 0.0),
        lip_pass_rate=float(np.mean(passed)), holder_pass_rate=float(np.mean(holder_pass)),
        worst_lip_violation=float(np.max(lhs - rhs)), worst_holder_violation=float(np.max(lhs - holder_rhs)),
        max_lip_ratio=float(np.max(lip_ratio)), max_holder_ratio=float(np.max(holder_ratio)),
        seed=seed, radius_tilt=radius_tilt, radius_param=radius_param, kappa_grid=grid,
    )


def _fmt(x) -> str:
    return x if isinstance(x, str) else format(float(x), ".17g")


def export_report(report: StabilityReport, path) -> None:
    """Write one CSV row per sample and a closing summary row.

    The summary row reads ``summary, kappa_hat, ell_hat, lip_pass_rate,
    holder_pass_rate, samples, dropped``.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in report.samples:
            w.writerow([str(s.index)] + [_fmt(v) for v in (s.d_tilt, s.d_param, s.d_u, s.lip_lhs, s.lip_rhs,
                                                            s.holder_rhs)])
        w.writerow(["summary"] + [_fmt(v) for v in (report.kappa_hat, report.ell_hat, report.lip_pass_rate,
                                                    report.holder_pass_rate)]
                   + [str(len(report.samples)), str(report.dropped)])
