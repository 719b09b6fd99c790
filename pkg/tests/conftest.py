from __future__ import annotations

import numpy as np
import pytest

from hbem import CavityScene, TraceSystem, icosphere, polarization_tensor, pressure_datum, solve_trace

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def sphere2():
    return icosphere(2)


@pytest.fixture(scope="session")
def sphere3():
    return icosphere(3)


@pytest.fixture(scope="session")
def sphere4():
    return icosphere(4)


@pytest.fixture(scope="session")
def free_system3(sphere3):
    return TraceSystem(sphere3, image=False)


@pytest.fixture(scope="session")
def sphere4_polarization(sphere4):
    return polarization_tensor(sphere4)


@pytest.fixture(scope="session")
def default_scene(sphere3):
    return CavityScene(sphere3, (0.0, 0.0, -2.0), 0.25)


class Solved:
    def __init__(self, scene, p=(0.0, 0.0, 1.0)):
        self.scene = scene
        self.system = TraceSystem(scene.mesh)
        self.g = pressure_datum(scene.mesh, p)
        self.f, self.report = solve_trace(scene, self.g, system=self.system)


@pytest.fixture(scope="session")
def default_solved(default_scene):
    return Solved(default_scene)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
