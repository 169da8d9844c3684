from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repeatable", derandomize=True)
settings.load_profile("repeatable")

REPO = Path(__file__).resolve().parent.parent
SYSTEMS = REPO / "systems"


@pytest.fixture(scope="session")
def systems_dir():
    return SYSTEMS


@pytest.fixture(scope="session")
def ex31():
    from normform.sysmodel import load_system
    return load_system(SYSTEMS / "ex31.sys")


@pytest.fixture(scope="session")
def ex32():
    from normform.sysmodel import load_system
    return load_system(SYSTEMS / "ex32.sys")


@pytest.fixture(scope="session")
def ex33():
    from normform.sysmodel import load_system
    return load_system(SYSTEMS / "ex33.sys")


@pytest.fixture(scope="session")
def ex34():
    from normform.sysmodel import load_system
    return load_system(SYSTEMS / "ex34.sys")


@pytest.fixture(scope="session")
def out31(ex31):
    from normform.structure import infinite_zero_algorithm
    from normform.sysmodel import SamplePlan
    return infinite_zero_algorithm(ex31, SamplePlan(count=40))


@pytest.fixture(scope="session")
def out32(ex32):
    from normform.structure import infinite_zero_algorithm
    from normform.sysmodel import SamplePlan
    return infinite_zero_algorithm(ex32, SamplePlan(count=40))


@pytest.fixture(scope="session")
def out33(ex33):
    from normform.structure import zero_output_algorithm
    from normform.sysmodel import SamplePlan
    return zero_output_algorithm(ex33, SamplePlan(count=60))


@pytest.fixture(scope="session")
def nf31(ex31, out31):
    from normform.normalform import build_normal_form
    return build_normal_form(ex31, out31)


def counter3_triple(alpha=1.0):
    from normform.linstruct import LinearTriple
    A = np.array([[0, 1, 0, 0, 0], [0, 0, 0, 0, 0], [0, 0, 0, 1, 0],
                  [0, 0, 0, 0, 1], [0, 0, 0, 0, 0]], float)
    B = np.array([[0, 0], [1, 0], [alpha, 0], [0, 0], [0, 1]], float)
    C = np.array([[1, 0, 0, 0, 0], [0, 0, 1, 0, 0]], float)
    return LinearTriple(A, B, C)


def counter3_affine(alpha=1):
    """counter3 encoded as an affine system for the symbolic algorithm."""
    from normform.expr import parse
    from normform.sysmodel import AffineSystem
    states = [f"x{i}" for i in range(1, 6)]
    f = [parse("x2"), parse("0"), parse("x4"), parse("x5"), parse("0")]
    g = [[parse("0"), parse("0")], [parse("1"), parse("0")],
         [parse(str(alpha)), parse("0")], [parse("0"), parse("0")],
         [parse("0"), parse("1")]]
    h = [parse("x1"), parse("x3")]
    return AffineSystem(states, f, g, h)
