import numpy as np
import pytest

from tvrates.grid import Field, Grid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid2d():
    return Grid((16, 16))


@pytest.fixture
def grid1d():
    return Grid((64,))


def random_field(rng, grid, scale=1.0):
    return Field(grid, scale * rng.standard_normal(grid.shape))


def brute_gradient(u, spacing):
    """Index-by-index forward differences, last cell zero."""
    u = np.asarray(u)
    comps = []
    for axis, h in enumerate(spacing):
        g = np.zeros_like(u)
        for idx in np.ndindex(u.shape):
            if idx[axis] + 1 < u.shape[axis]:
                nxt = list(idx)
                nxt[axis] += 1
                g[idx] = (u[tuple(nxt)] - u[idx]) / h
        comps.append(g)
    return comps


def gradient_matrix(grid):
    """Dense matrices D_k with (D_k u)_flat = component k of the gradient."""
    n = grid.size
    mats = [np.zeros((n, n)) for _ in range(grid.ndim)]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        for k, g in enumerate(brute_gradient(e.reshape(grid.shape), grid.spacing)):
            mats[k][:, j] = g.ravel()
    return mats


# one summary line per acceptance criterion
_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
