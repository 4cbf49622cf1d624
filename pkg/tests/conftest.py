import os

import numpy as np
import pytest

from porous.config import build_scenario, coefficient_set, parse_config
from porous.constitutive import make_coefficient_set
from porous.mesh import generate_rect_mesh, read_mesh
from porous.stepper import Scenario

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(os.path.dirname(HERE), "src", "porous", "data")
TEST_DATA = os.path.join(HERE, "data")


def bundled(name):
    return os.path.join(DATA, name)


@pytest.fixture
def default_cfg():
    return parse_config(bundled("default.cfg"))


@pytest.fixture
def default_cs(default_cfg):
    return coefficient_set(default_cfg)


@pytest.fixture
def default_scenario(default_cfg):
    return build_scenario(default_cfg)


@pytest.fixture
def two_triangle():
    return read_mesh(bundled("two_triangle.msh"))


@pytest.fixture
def linear_cs():
    """Linear b(z) = z + 5 (positive on the test ranges) and unit constant coefficients."""
    return make_coefficient_set({"b": "linear offset=5", "a": "constant value=1", "dw": "constant value=1",
                                 "lambda": "constant value=1", "rho": "1", "b2": "10"})


@pytest.fixture
def smooth_cs():
    return make_coefficient_set({"b": "logistic lo=0.1 hi=0.6 scale=2", "a": "vg ks=1 alpha=1 n=2 kr=0.5",
                                 "dw": "logistic lo=0.5 hi=1.5 scale=2",
                                 "lambda": "affine c0=1 c_theta=0.01 c_u=0.005", "rho": "1"})


def small_scenario(cs, n=4, tau=0.05, t_end=0.5, markers=None, **kw):
    mesh = generate_rect_mesh(n, n, markers={"left": "D"} if markers is None else markers)
    kw.setdefault("u0", lambda x, y: -3.0 + x + 0.5 * y)
    kw.setdefault("w0", lambda x, y: 0.2 + 0.3 * x * y)
    kw.setdefault("theta0", lambda x, y: -0.5 + x)
    return Scenario(mesh, cs, tau, t_end, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


def record_criterion(number, title, passed, detail=""):
    _CRITERIA[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title}"
                                    + (f"  [{detail}]" if detail else ""))
