import numpy as np
import pytest

from lmse_portfolio.hjb import GridSpec, solve_hjb
from lmse_portfolio.market import AffineTarget, artificial_market
from lmse_portfolio.simulate import rebalance_times

# desk-scale grid: monthly x 50 time steps on the artificial horizon
DESK_GRID = GridSpec(h_x=0.5, extra_nodes=5, steps=6000)


@pytest.fixture(scope="session")
def no_margin_solve():
    """Artificial market, 1% required return, no margin, no leverage."""
    market = artificial_market(1.0)
    spec = AffineTarget(100.0, 0.01, 10.0)
    surface, report = solve_hjb(
        market, spec, DESK_GRID, checkpoint_every=250, store_times=rebalance_times(10.0, "monthly")
    )
    return market, spec, surface, report


@pytest.fixture(scope="session")
def leverage_two_solve():
    market = artificial_market(2.0)
    spec = AffineTarget(100.0, 0.01, 10.0)
    surface, report = solve_hjb(market, spec, DESK_GRID, checkpoint_every=250)
    return market, spec, surface, report


@pytest.fixture(scope="session")
def small_solve():
    """Short, coarse solve for plumbing tests."""
    market = artificial_market(1.0)
    spec = AffineTarget(100.0, 0.01, 1.0, margin=0.002)
    grid = GridSpec(h_x=0.5, extra_nodes=5, steps=600)
    surface, report = solve_hjb(market, spec, grid, store_times=rebalance_times(1.0, "monthly"))
    return market, spec, surface, report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_RESULTS = []


def record(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}  [{detail}]"
    _RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)
