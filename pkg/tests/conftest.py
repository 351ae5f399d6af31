import csv
from dataclasses import dataclass

import numpy as np
import pytest

from robust_rendezvous.cli import main
from robust_rendezvous.det_solver import solve_deterministic
from robust_rendezvous.dynamics import MissionSpec, reference_mission
from robust_rendezvous.propagation import TimeGrid, integrate


@pytest.fixture(scope="session")
def spec() -> MissionSpec:
    return reference_mission()


@pytest.fixture(scope="session")
def det(spec):
    """Deterministic optimum of the reference mission at 512 steps."""
    sol = solve_deterministic(spec)
    assert sol.hit
    return sol


@dataclass
class Toy:
    spec: MissionSpec
    grid: TimeGrid
    generator: np.ndarray  # control whose endpoint defines the target


@pytest.fixture(scope="session")
def toy() -> Toy:
    """32-step, one-time-unit mission whose target is reached by a
    tangential burn / coast / burn profile."""
    base = reference_mission()
    n = 32
    grid = TimeGrid(base.t_i, base.t_i + 1.0, n)
    gen = np.zeros((n, 3))
    gen[:10, 1] = 1.0
    gen[22:, 1] = 1.0
    short = base.with_(t_f=grid.t_f)
    xs = integrate(base.x_i, gen, grid, short)
    return Toy(short.with_(x_f=xs[-1, :6]), grid, gen)


def random_states(rng: np.random.Generator, n: int) -> np.ndarray:
    """Feasible elliptic states scattered around the reference orbit."""
    x = np.empty((n, 7))
    x[:, 0] = rng.uniform(0.8, 1.6, n)
    x[:, 1:3] = rng.uniform(-0.2, 0.2, (n, 2))
    x[:, 3:5] = rng.uniform(-0.1, 0.1, (n, 2))
    x[:, 5] = rng.uniform(0.0, 50.0, n)
    x[:, 6] = rng.uniform(0.5, 1.0, n)
    return x


def random_controls(rng: np.random.Generator, n: int, min_norm: float = 0.1) -> np.ndarray:
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    return u * rng.uniform(min_norm, 1.0, n)[:, None]


SWEEP_P = (0.55, 0.75, 0.925, 0.95)


@pytest.fixture(scope="session")
def sweep_dir(tmp_path_factory):
    """Desk-scale sweep (5000 iterations per level) run once through the CLI."""
    out = tmp_path_factory.mktemp("sweep")
    argv = ["sweep", "--p", *map(str, SWEEP_P), "--iters", "5000", "--out-dir", str(out)]
    assert main(argv) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_control(path):
    rows = read_csv(path)[:-1]
    return np.array([[float(r["q"]), float(r["s"]), float(r["w"])] for r in rows])
