import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import twomembranes as tm

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_SOLVE_CACHE = {}


def solve_case(name, n, fresh=False):
    """Solve a registered analytic case once per session (``fresh`` forces a new solve)."""
    key = (name, n)
    if fresh or key not in _SOLVE_CACHE:
        case = tm.get_case(name)
        problem = case.problem(n)
        _SOLVE_CACHE[key] = (case, problem, tm.solve_two_membranes(problem))
    return _SOLVE_CACHE[key]


def no_contact_problem(n=101):
    """f - g < 0 with well separated boundary data on the interval."""
    p = tm.PucciParams(1.0, 2.0)
    F = tm.OperatorSpec("PucciMax", p)
    dom = tm.build_domain(1, "interval", n)
    return tm.ProblemSpec(dom, F, F.partner(), 0.0, 1.0, 1.0, -1.0, allow_degenerate=True)


@pytest.fixture(scope="session")
def solve_cached():
    return solve_case


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
