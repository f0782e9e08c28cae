import numpy as np
import pytest

from pxlab.funcspace import constant_exponent
from pxlab.geometry import make_rect_domain
from pxlab.maximal import dirac
from pxlab.pde import NonlinearityModel, solve_dirichlet


@pytest.fixture(scope="session")
def unit_square_32():
    return make_rect_domain([(0, 1), (0, 1)], 1 / 32)


@pytest.fixture(scope="session")
def dirac_solution(unit_square_32):
    """p = 2.2 solution with one unit atom at the centre, h = 1/32."""
    m = unit_square_32
    model = NonlinearityModel(constant_exponent(m, 2.2), s=0.5)
    mu = dirac([0.5, 0.5])
    return model, mu, solve_dirichlet(model, mu, tol=1e-10, max_iter=300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request, capsys):
    """Record one acceptance line: ``criterion(k, ok, detail)``."""
    def record(k, ok, detail):
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE_KEY].append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
