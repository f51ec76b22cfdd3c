"""JSON problem files: strict loading, validation and hashing.

Field values (``zeta``, ``B``, bounds, targets, perturbations, tilts) are
either numbers or expression strings in ``x1``/``x2``.  Unknown keys are
rejected, and every validation failure is reported as a :class:`ConfigError`
whose message starts with the offending key.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import expr as ex
from .equilibrium import METHODS, SolverSettings
from .game import GameSpec, GameSpecError, InfeasiblePerturbationError, Perturbation, PlayerSpec, TiltVector
from .mesh import Grid
from .pde import EllipticOperator, LinearSolveSettings, MonotonicityError, NewtonSettings


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


TOP_KEYS = {"grid", "operator", "f", "players", "perturbation", "tilt", "solver", "certify", "harness", "pde"}
REQUIRED_TOP = ("grid", "f", "players")
GRID_KEYS = {"dim", "extents", "points"}
OPERATOR_KEYS = {"a11", "a12", "a22"}
PLAYER_KEYS = {"L", "yd", "zeta", "zeta_floor", "B", "alpha", "beta"}
PERTURBATION_KEYS = {"e_Y", "e_kJ", "e_kAlpha", "e_kBeta", "sigma"}
SOLVER_KEYS = {"method", "tau", "residual_tolerance", "max_outer_iters", "inner_iters", "power_iters"}
CERTIFY_KEYS = {"delta", "eps_act", "eigensolver"}
HARNESS_KEYS = {"samples", "radius_tilt", "radius_param", "seed"}
PDE_KEYS = {"newton_tolerance", "newton_max_iters", "newton_max_halvings", "cg_rel_tolerance", "cg_max_iters"}


@dataclass(frozen=True)
class CertifySettings:
    delta: float = 1e-8
    eps_act: float | None = None
    eigensolver: str = "auto"


@dataclass(frozen=True)
class HarnessSettings:
    samples: int = 50
    radius_tilt: float = 1e-2
    radius_param: float = 1e-2
    seed: int = 0


@dataclass(frozen=True, eq=False)
class Problem:
    spec: GameSpec
    perturbation: Perturbation
    tilt: TiltVector
    solver: SolverSettings
    certify: CertifySettings
    harness: HarnessSettings
    config_hash: str
    source: dict


def config_hash(tree: dict) -> str:
    """SHA-256 of the canonical JSON form, so whitespace and key order do not matter."""
    canonical = json.dumps(tree, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _section(tree: dict, key: str, allowed: set[str], required: tuple[str, ...] = ()) -> dict:
    value = tree.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(key, "must be an object")
    unknown = sorted(set(value) - allowed)
    if unknown:
        raise ConfigError(f"{key}.{unknown[0]}", "unknown key")
    for name in required:
        if name not in value:
            raise ConfigError(f"{key}.{name}", "missing required key")
    return value


def _number(value, key: str, *, positive=False, integer=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if integer and not float(value).is_integer():
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if not np.isfinite(value):
        raise ConfigError(key, "must be finite")
    if positive and not value > 0:
        raise ConfigError(key, f"must be positive, got {value!r}")
    return int(value) if integer else float(value)


def _field(grid: Grid, value, key: str) -> np.ndarray:
    """Nodal values of a constant or an expression in the spatial variables."""
    if isinstance(value, str):
        try:
            e = ex.parse(value)
        except ex.ExprError as exc:
            raise ConfigError(key, str(exc)) from None
        spatial = {f"x{i + 1}" for i in range(grid.dim)}
        extra = ex.variables(e) - spatial
        if extra:
            raise ConfigError(key, f"may only reference {', '.join(sorted(spatial))}, found {sorted(extra)[0]}")
        try:
            vals = ex.evaluate(e, grid.coordinates())
        except ex.ExprDomainError as exc:
            raise ConfigError(key, str(exc)) from None
        return np.broadcast_to(np.asarray(vals, dtype=float), (grid.size,)).copy()
    return np.full(grid.size, _number(value, key))


def _per_player_field(grid: Grid, m: int, value, key: str) -> np.ndarray:
    if isinstance(value, list):
        if len(value) != m:
            raise ConfigError(key, f"expected {m} entries (one per player), got {len(value)}")
        return np.stack([_field(grid, v, f"{key}[{k}]") for k, v in enumerate(value)])
    return np.tile(_field(grid, value, key), (m, 1))


def _expression(value, key: str) -> ex.Expr:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = repr(float(value))
    if not isinstance(value, str):
        raise ConfigError(key, "expected an expression string")
    try:
        return ex.parse(value)
    except ex.ExprError as exc:
        raise ConfigError(key, str(exc)) from None


def _grid(tree: dict) -> Grid:
    sec = _section(tree, "grid", GRID_KEYS, ("dim", "points"))
    dim = _number(sec["dim"], "grid.dim", integer=True)
    if dim not in (1, 2):
        raise ConfigError("grid.dim", f"must be 1 or 2, got {dim}")
    points = sec["points"]
    points = [points] * dim if not isinstance(points, list) else points
    if len(points) != dim:
        raise ConfigError("grid.points", f"expected {dim} entries")
    points = [_number(p, "grid.points", integer=True) for p in points]
    if min(points) < 3:
        raise ConfigError("grid.points", "need at least 3 points per axis")
    extents = sec.get("extents", [[0.0, 1.0]] * dim)
    if not isinstance(extents, list) or len(extents) != dim or not all(
            isinstance(a, list) and len(a) == 2 for a in extents):
        raise ConfigError("grid.extents", f"expected {dim} pairs [a, b]")
    extents = [(_number(a, "grid.extents"), _number(b, "grid.extents")) for a, b in extents]
    if any(b <= a for a, b in extents):
        raise ConfigError("grid.extents", "each interval needs a < b")
    return Grid(tuple(extents), tuple(points))


def _operator(tree: dict, grid: Grid) -> EllipticOperator:
    sec = _section(tree, "operator", OPERATOR_KEYS)
    if grid.dim == 1 and set(sec) - {"a11"}:
        raise ConfigError("operator", "a 1D operator only takes a11")
    a11 = _number(sec.get("a11", 1.0), "operator.a11")
    coeffs = [[a11]]
    if grid.dim == 2:
        a12 = _number(sec.get("a12", 0.0), "operator.a12")
        a22 = _number(sec.get("a22", 1.0), "operator.a22")
        coeffs = [[a11, a12], [a12, a22]]
    try:
        return EllipticOperator(grid, coeffs)
    except ValueError as exc:
        raise ConfigError("operator", str(exc)) from None


def _players(tree: dict, grid: Grid) -> list[PlayerSpec]:
    players = tree["players"]
    if not isinstance(players, list) or not players:
        raise ConfigError("players", "must be a non-empty array")
    out = []
    for k, raw in enumerate(players):
        key = f"players[{k}]"
        if not isinstance(raw, dict):
            raise ConfigError(key, "must be an object")
        unknown = sorted(set(raw) - PLAYER_KEYS)
        if unknown:
            raise ConfigError(f"{key}.{unknown[0]}", "unknown key")
        for name in ("L", "zeta", "zeta_floor", "alpha", "beta"):
            if name not in raw:
                raise ConfigError(f"{key}.{name}", "missing required key")
        L = _expression(raw["L"], f"{key}.L")
        bad = ex.variables(L) - {"x1", "x2", "y", "yd"}
        if bad:
            raise ConfigError(f"{key}.L", f"unsupported variable {sorted(bad)[0]}")
        zeta = _field(grid, raw["zeta"], f"{key}.zeta")
        floor = _number(raw["zeta_floor"], f"{key}.zeta_floor")
        if not floor > 0:
            raise ConfigError(f"{key}.zeta_floor", f"the zeta floor must be positive, got {floor:g}")
        if np.any(zeta < floor):
            raise ConfigError(f"{key}.zeta", f"must satisfy zeta >= zeta_floor = {floor:g} at every node "
                                            f"(min zeta = {zeta.min():.4g})")
        fields = {name: _field(grid, raw.get(name, default), f"{key}.{name}")
                  for name, default in (("B", 1.0), ("alpha", None), ("beta", None), ("yd", 0.0))}
        try:
            out.append(PlayerSpec(grid, L, zeta, floor, fields["B"], fields["alpha"], fields["beta"], fields["yd"]))
        except GameSpecError as exc:
            raise ConfigError(key, str(exc)) from None
    return out


def _pde_settings(tree: dict) -> tuple[NewtonSettings, LinearSolveSettings]:
    sec = _section(tree, "pde", PDE_KEYS)
    try:
        newton = NewtonSettings(
            abs_tolerance=_number(sec.get("newton_tolerance", 1e-11), "pde.newton_tolerance", positive=True),
            max_iters=_number(sec.get("newton_max_iters", 50), "pde.newton_max_iters", integer=True),
            max_halvings=_number(sec.get("newton_max_halvings", 30), "pde.newton_max_halvings", integer=True),
        )
        linear = LinearSolveSettings(
            rel_tolerance=_number(sec.get("cg_rel_tolerance", 1e-12), "pde.cg_rel_tolerance"),
            max_iters=_number(sec.get("cg_max_iters"), "pde.cg_max_iters", integer=True, allow_none=True),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("pde", str(exc)) from None
    return newton, linear


def _solver(tree: dict) -> SolverSettings:
    sec = _section(tree, "solver", SOLVER_KEYS)
    kwargs = {}
    if "method" in sec:
        if sec["method"] not in METHODS:
            raise ConfigError("solver.method", f"expected one of {', '.join(METHODS)}, got {sec['method']!r}")
        kwargs["method"] = sec["method"]
    for name, kind in (("tau", "float"), ("residual_tolerance", "float"), ("max_outer_iters", "int"),
                       ("inner_iters", "int"), ("power_iters", "int")):
        if name in sec:
            kwargs[name] = _number(sec[name], f"solver.{name}", integer=kind == "int",
                                   positive=kind == "float", allow_none=name == "tau")
    try:
        return SolverSettings(**kwargs)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None


def _certify(tree: dict) -> CertifySettings:
    sec = _section(tree, "certify", CERTIFY_KEYS)
    method = sec.get("eigensolver", "auto")
    if method not in ("auto", "dense", "lanczos"):
        raise ConfigError("certify.eigensolver", f"expected auto, dense or lanczos, got {method!r}")
    return CertifySettings(
        delta=_number(sec.get("delta", 1e-8), "certify.delta", positive=True),
        eps_act=_number(sec.get("eps_act"), "certify.eps_act", positive=True, allow_none=True),
        eigensolver=method,
    )


def _harness(tree: dict) -> HarnessSettings:
    sec = _section(tree, "harness", HARNESS_KEYS)
    out = HarnessSettings(
        samples=_number(sec.get("samples", 50), "harness.samples", integer=True),
        radius_tilt=_number(sec.get("radius_tilt", 1e-2), "harness.radius_tilt"),
        radius_param=_number(sec.get("radius_param", 1e-2), "harness.radius_param"),
        seed=_number(sec.get("seed", 0), "harness.seed", integer=True),
    )
    validate_harness(out)
    return out


def validate_harness(h: HarnessSettings) -> None:
    if h.samples < 0:
        raise ConfigError("harness.samples", "must be non-negative")
    if h.radius_tilt < 0:
        raise ConfigError("harness.radius_tilt", "must be non-negative")
    if h.radius_param < 0:
        raise ConfigError("harness.radius_param", "must be non-negative")
    if h.radius_tilt == 0 and h.radius_param == 0:
        raise ConfigError("harness", "radius_tilt and radius_param cannot both be zero")
    if h.seed < 0:
        raise ConfigError("harness.seed", "must be non-negative")


def build_problem(tree: dict) -> Problem:
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "the configuration must be a JSON object")
    unknown = sorted(set(tree) - TOP_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for key in REQUIRED_TOP:
        if key not in tree:
            raise ConfigError(key, "missing required key")

    grid = _grid(tree)
    op = _operator(tree, grid)
    f = _expression(tree["f"], "f")
    if "yd" in ex.variables(f):
        raise ConfigError("f", "f may not reference yd")
    players = _players(tree, grid)
    m = len(players)
    newton, linear = _pde_settings(tree)

    psec = _section(tree, "perturbation", PERTURBATION_KEYS)
    sigma = _number(psec.get("sigma", 1e-6), "perturbation.sigma", positive=True)
    try:
        spec = GameSpec(op, f, players, sigma=sigma, newton=newton, linear=linear)
    except MonotonicityError as exc:
        raise ConfigError("f", f"{exc} (the nonlinearity must be monotone)") from None
    except GameSpecError as exc:
        raise ConfigError("players", str(exc)) from None

    e = Perturbation(
        grid,
        _field(grid, psec.get("e_Y", 0.0), "perturbation.e_Y"),
        _per_player_field(grid, m, psec.get("e_kJ", 0.0), "perturbation.e_kJ"),
        _per_player_field(grid, m, psec.get("e_kAlpha", 0.0), "perturbation.e_kAlpha"),
        _per_player_field(grid, m, psec.get("e_kBeta", 0.0), "perturbation.e_kBeta"),
    )
    try:
        spec.validate_perturbation(e)
    except InfeasiblePerturbationError as exc:
        raise ConfigError("perturbation", str(exc)) from None

    t = TiltVector(grid, _per_player_field(grid, m, tree.get("tilt", 0.0), "tilt"))
    return Problem(spec, e, t, _solver(tree), _certify(tree), _harness(tree), config_hash(tree), tree)


def load_config(path) -> Problem:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read configuration: {exc.strerror}") from None
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return build_problem(tree)
