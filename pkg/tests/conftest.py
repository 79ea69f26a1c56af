import numpy as np
import pytest

from spdhg.analysis import compute_reference
from spdhg.problem import chain_edges, make_problem, make_toy_dataset

TOY_LAMBDA = 0.01
# stronger ridge than the usual 1e-2 so the strongly convex rates show at t <= 1e5
TOY_GAMMA = 0.1


@pytest.fixture(scope="session")
def toy_data():
    return make_toy_dataset(n=200, d=20, seed=0)


@pytest.fixture(scope="session")
def toy_gglr(toy_data):
    return make_problem(toy_data, "gglr", lam=TOY_LAMBDA, edges=chain_edges(20), radius_x=10.0)


@pytest.fixture(scope="session")
def toy_ggrlr(toy_data):
    return make_problem(toy_data, "ggrlr", lam=TOY_LAMBDA, gamma=TOY_GAMMA,
                        edges=chain_edges(20), radius_x=10.0)


@pytest.fixture(scope="session")
def ref_gglr(toy_gglr):
    return compute_reference(toy_gglr, max_iters=1_000_000, tol=1e-10)


@pytest.fixture(scope="session")
def ref_ggrlr(toy_ggrlr):
    return compute_reference(toy_ggrlr, max_iters=1_000_000, tol=1e-10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------------------

_criteria = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    ok = call.excinfo is None
    prev = _criteria.get(number, (title, True))
    _criteria[number] = (title, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}")
