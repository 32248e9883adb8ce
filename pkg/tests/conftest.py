import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from latred.lattice import FrameSpec, LatticeModel, MaterialLaw, build_frame_lattice

settings.register_profile("latred", max_examples=40, deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("latred")

SQRT2 = math.sqrt(2.0)


def single_bar(residual=0.0, damage=True):
    return build_frame_lattice(FrameSpec(
        layout="bar", extents=(1, 1, 1), origin=(0, 0, 0), load_box=((1, 1), (0, 0), (0, 0)),
        load_direction=(1, 0, 0), material=MaterialLaw(SQRT2, 0.5, residual, damage)))


def small_block(n=(2, 2, 2), bracing=True, residual=1e-6, damage=True):
    nx, ny, nz = n
    return build_frame_lattice(FrameSpec(
        layout="block", extents=n, origin=(0, 0, 0), bracing=bracing,
        load_box=((0, nx), (0, ny), (nz, nz)), material=MaterialLaw(SQRT2, 0.5, residual, damage)))


SMALL_TOWER = FrameSpec(extents=(6, 6, 7), origin=(4, 4, 0), pillars=((4, 4), (9, 4), (4, 9), (9, 9)),
                        load_box=((6, 8), (6, 8), (7, 7)), material=MaterialLaw(SQRT2, 0.5, 1e-6))


@pytest.fixture
def bar_model():
    return single_bar()


@pytest.fixture
def block_model():
    return small_block()


@pytest.fixture(scope="session")
def small_tower():
    return build_frame_lattice(SMALL_TOWER)


def random_spd(rng, n, cond=1e3):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in mod.REPORT:
            terminalreporter.write_line(line)
