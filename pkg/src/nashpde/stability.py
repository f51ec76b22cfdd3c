"""Second-order certification of full stability for box-constrained equilibria.

For box constraints the critical directions at an equilibrium are the
profiles vanishing wherever the multiplier ``u_hat_star`` is nonzero.  The
equilibrium is certified fully stable when the symmetric part of the
derivative of F, compressed to those directions, has smallest eigenvalue at
least ``delta > 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .calculus import hessian_block_apply, symmetric_jacobian_apply
from .equilibrium import EquilibriumResult
from .game import ControlProfile, GameSpec, cost_from_state, project_admissible, solve_game_state

logger = logging.getLogger(__name__)

DENSE_LIMIT = 1000

FULLY_STABLE = "fully-stable"
NOT_CERTIFIED = "not-certified"
INDEFINITE = "indefinite"


@dataclass(frozen=True, eq=False)
class ActiveSetMask:
    fixed: np.ndarray  # (m, n) bool
    eps_act: float

    @property
    def free(self) -> np.ndarray:
        return ~self.fixed

    @property
    def free_count(self) -> int:
        return int(np.count_nonzero(~self.fixed))

    def fixed_counts(self) -> list[int]:
        return [int(c) for c in np.count_nonzero(self.fixed, axis=1)]


@dataclass(eq=False)
class StabilityCertificate:
    mask: ActiveSetMask
    lambda_min: float
    delta: float
    verdict: str
    eigvector: ControlProfile
    method: str
    message: str = ""

    @property
    def eps_act(self) -> float:
        return self.mask.eps_act

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "lambda_min": self.lambda_min,
            "delta": self.delta,
            "eps_act": self.eps_act,
            "method": self.method,
            "free_nodes": self.mask.free_count,
            "fixed_nodes_per_player": self.mask.fixed_counts(),
            "witness_norm": self.eigvector.norm(),
            "message": self.message,
        }


def default_eps_act(u_hat_star: np.ndarray) -> float:
    return 1e-7 * (1.0 + float(np.max(np.abs(u_hat_star), initial=0.0)))


def critical_subspace(result, eps_act: float | None = None) -> ActiveSetMask:
    """Mask of strongly active nodes; ``result`` is an EquilibriumResult or the multiplier profile."""
    u_hat = getattr(result, "u_hat_star", result)
    values = u_hat.values if isinstance(u_hat, ControlProfile) else np.atleast_2d(np.asarray(u_hat, dtype=float))
    eps = default_eps_act(values) if eps_act is None else float(eps_act)
    if not eps > 0:
        raise ValueError("eps_act must be positive")
    return ActiveSetMask(np.abs(values) > eps, eps)


def reduced_operator(spec: GameSpec, result: EquilibriumResult, mask: ActiveSetMask):
    """Matrix-free symmetric operator on the free coordinates (nodal scaling)."""
    free = mask.free
    pt = result.point

    def matvec(v):
        full = np.zeros(free.shape)
        full[free] = np.ravel(v)
        return symmetric_jacobian_apply(spec, pt, full)[free]

    n = mask.free_count
    return spla.LinearOperator((n, n), matvec=matvec, dtype=float)


def assemble_reduced(spec: GameSpec, result: EquilibriumResult, mask: ActiveSetMask) -> np.ndarray:
    op = reduced_operator(spec, result, mask)
    n = op.shape[0]
    M = np.empty((n, n))
    for i in range(n):
        unit = np.zeros(n)
        unit[i] = 1.0
        M[:, i] = op.matvec(unit)
    return 0.5 * (M + M.T)


def _smallest_dense(spec, result, mask):
    M = assemble_reduced(spec, result, mask)
    vals, vecs = np.linalg.eigh(M)
    return float(vals[0]), vecs[:, 0]


def _smallest_lanczos(spec, result, mask, tol=1e-12):
    op = reduced_operator(spec, result, mask)
    n = op.shape[0]
    v0 = np.random.default_rng(0).standard_normal(n)
    vals, vecs = spla.eigsh(op, k=1, which="SA", v0=v0, tol=tol, maxiter=max(1000, 20 * n),
                            ncv=min(n, max(20, int(np.sqrt(n)) + 1)))
    return float(vals[0]), vecs[:, 0]


def certify(spec: GameSpec, result: EquilibriumResult, delta: float = 1e-8, eps_act: float | None = None,
            method: str = "auto") -> StabilityCertificate:
    """Smallest eigenvalue of the reduced symmetrized Hessian and the resulting verdict.

    ``method`` is ``"dense"``, ``"lanczos"`` or ``"auto"`` (dense up to
    1000 free unknowns).
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if method not in ("auto", "dense", "lanczos"):
        raise ValueError(f"unknown eigensolver {method!r}")
    mask = critical_subspace(result, eps_act)
    n = mask.free_count
    witness = np.zeros(mask.fixed.shape)
    if n == 0:
        return StabilityCertificate(mask, float("inf"), delta, FULLY_STABLE, ControlProfile(spec.grid, witness),
                                    "none", "no free directions: the condition holds vacuously")
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    if method == "lanczos" and n < 3:
        method = "dense"
    try:
        if method == "dense":
            lam, vec = _smallest_dense(spec, result, mask)
        else:
            lam, vec = _smallest_lanczos(spec, result, mask)
    except (spla.ArpackNoConvergence, spla.ArpackError) as exc:
        return StabilityCertificate(mask, float("nan"), delta, NOT_CERTIFIED, ControlProfile(spec.grid, witness),
                                    method, f"eigensolver did not converge: {exc}")

    witness[mask.free] = vec
    witness /= np.sqrt(np.sum(witness**2) * spec.grid.cell_volume)
    pivot = np.flatnonzero(np.abs(witness.ravel()) == np.max(np.abs(witness)))[0]
    if witness.ravel()[pivot] < 0:
        witness = -witness
    if lam >= delta:
        verdict = FULLY_STABLE
    elif lam < -delta:
        verdict = INDEFINITE
    else:
        verdict = NOT_CERTIFIED
    return StabilityCertificate(mask, lam, delta, verdict, ControlProfile(spec.grid, witness), method)


@dataclass
class LocalNashReport:
    samples: int
    radius: float
    violations: int
    player_violations: list[int]
    worst_gap: float  # most negative cost change seen (>= -slack when no violations)


def _player_cost(spec, result, k, u):
    y = solve_game_state(spec, u, result.e, result.point.y.values)
    return cost_from_state(spec, k, u, result.e, result.tilt, y)


def verify_local_nash(spec: GameSpec, result: EquilibriumResult, certificate: StabilityCertificate,
                      samples: int = 100, radius: float = 1e-2, seed: int = 0) -> LocalNashReport:
    """Sample feasible unilateral deviations within ``radius`` and count cost decreases."""
    if certificate.verdict != FULLY_STABLE:
        raise ValueError(f"local Nash sampling requires a fully stable certificate, got {certificate.verdict!r}")
    rng = np.random.default_rng(seed)
    vol = spec.grid.cell_volume
    ubar = result.u_bar
    per_player, worst = [], np.inf
    for k in range(spec.m):
        base = _player_cost(spec, result, k, ubar)
        slack = 1e-10 * (1.0 + abs(base))
        bad = 0
        for _ in range(samples):
            w = rng.standard_normal(spec.grid.size)
            w *= radius * rng.uniform() / np.sqrt(np.sum(w**2) * vol)
            trial = ubar.values.copy()
            trial[k] = trial[k] + w
            # projection onto the box cannot increase the distance to the feasible base point
            v = project_admissible(spec, result.e, ControlProfile(spec.grid, trial))
            change = _player_cost(spec, result, k, v) - base
            worst = min(worst, change)
            if change < -slack:
                bad += 1
        per_player.append(bad)
    return LocalNashReport(samples, radius, sum(per_player), per_player, float(worst))


@dataclass
class WitnessDescent:
    eps: list[float]
    changes: list[list[float]]  # per eps: [player changes at +eps, at -eps] flattened per player
    predicted: list[float]  # 0.5 eps^2 <H_kk v_k, v_k> summed over players
    decreased: bool


def witness_descent(spec: GameSpec, result: EquilibriumResult, certificate: StabilityCertificate,
                    eps: tuple[float, ...] = (1e-1, 1e-2, 1e-3)) -> WitnessDescent:
    """Move each player along its component of the certificate witness and record cost changes."""
    v = certificate.eigvector
    vol = spec.grid.cell_volume
    curv = [float(np.dot(hessian_block_apply(spec, result.point, k, k, v[k]).values, v.values[k])) * vol
            for k in range(spec.m)]
    base = [_player_cost(spec, result, k, result.u_bar) for k in range(spec.m)]
    changes, predicted, decreased = [], [], False
    for e in eps:
        row = []
        for k in range(spec.m):
            if not np.any(v.values[k]):
                continue
            for sign in (1.0, -1.0):
                trial = result.u_bar.values.copy()
                trial[k] += sign * e * v.values[k]
                u = project_admissible(spec, result.e, ControlProfile(spec.grid, trial))
                d = _player_cost(spec, result, k, u) - base[k]
                row.append(d)
                decreased |= d < -1e-12 * (1.0 + abs(base[k]))
        changes.append(row)
        predicted.append(0.5 * e**2 * sum(curv))
    return WitnessDescent(list(eps), changes, predicted, decreased)
