from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nashpde.game import GameSpec, PlayerSpec, TiltVector
from nashpde.mesh import Grid
from nashpde.pde import EllipticOperator

settings.register_profile(
    "nashpde", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("nashpde")

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# outcome lines collected by the acceptance suite and echoed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


def make_game(points=17, dim=1, f="0", players=None, coefficients=None, sigma=1e-6) -> GameSpec:
    """Small game; ``players`` is a list of keyword dicts for PlayerSpec."""
    grid = Grid.uniform(dim, points)
    op = EllipticOperator(grid, coefficients)
    players = players or [{}]
    specs = []
    for p in players:
        kw = {"L": "0", "zeta": 1.0, "zeta_floor": 1.0, "B": 1.0, "alpha": -1.0, "beta": 1.0}
        kw.update(p)
        specs.append(PlayerSpec(grid, **kw))
    return GameSpec(op, f, specs, sigma=sigma)


def tilt(spec: GameSpec, values) -> TiltVector:
    return TiltVector(spec.grid, np.broadcast_to(values, (spec.m, spec.grid.size)))


@pytest.fixture
def lq_single():
    """m = 1, no state cost, unit control cost, box [-1, 1] on 33 nodes."""
    return make_game(33)


@pytest.fixture
def tracking_pair():
    """Two tracking players, linear state equation, unequal weights and bounds."""
    grid = Grid.uniform(1, 33)
    (x,) = grid.coordinates()
    return make_game(33, players=[
        {"L": "0.5*(y - yd)^2", "yd": 20 * np.sin(np.pi * x)},
        {"L": "0.5*(y - yd)^2", "yd": -10 * np.sin(2 * np.pi * x), "zeta": 1.5 + 0.5 * x, "zeta_floor": 1.5,
         "alpha": -2.0, "beta": 0.5},
    ])


@pytest.fixture
def semilinear_pair():
    """Two players, cubic nonlinearity, non-unit control weights B."""
    grid = Grid.uniform(1, 33)
    (x,) = grid.coordinates()
    return make_game(33, f="y^3", players=[
        {"L": "0.5*(y - yd)^2", "yd": 10 * np.sin(np.pi * x), "B": 1 + 0.5 * x},
        {"L": "0.5*(y - yd)^2 + 0.1*y^4", "yd": -5 * x, "zeta": 2.0, "zeta_floor": 2.0, "alpha": -0.5,
         "beta": 2.0},
    ])
