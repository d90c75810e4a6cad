import numpy as np
import pytest

from nlwaves.kernels import DispersalKernel, Grid
from nlwaves.models import make_model

# acceptance results, filled by test_acceptance.py and echoed in the terminal summary
ACCEPTANCE: dict = {}


@pytest.fixture
def gaussian():
    return DispersalKernel.gaussian(1.0)


@pytest.fixture
def pp2():
    return make_model("pp2", {"r1": 1, "r2": 1, "a": 0.4, "b": 2})


@pytest.fixture
def epidemic():
    return make_model("epidemic", {"beta": 2, "s_star": 1, "gamma": 1})


@pytest.fixture
def small_grid(gaussian):
    return Grid.build(20.0, 0.1, gaussian)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
