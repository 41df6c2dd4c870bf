import numpy as np
import pytest

from lmse_portfolio.errors import DomainError
from lmse_portfolio.hjb import GridSpec, solve_hjb
from lmse_portfolio.market import AffineTarget, artificial_market, empirical_market, pension_target
from lmse_portfolio.policy import Policy, optimal_weights, weight_grid, weight_grid_rows

from conftest import DESK_GRID


@pytest.fixture(scope="module")
def leverage_five():
    market = artificial_market(5.0)
    spec = AffineTarget(100.0, 0.01, 10.0, margin=0.002)
    surface, _ = solve_hjb(market, spec, DESK_GRID, checkpoint_every=600)
    return market, spec, surface


@pytest.fixture(scope="module")
def empirical_one():
    market = empirical_market(1.0)
    spec = pension_target(1.1)
    surface, _ = solve_hjb(market, spec, GridSpec(0.5, 5, 9000), checkpoint_every=600)
    return market, spec, surface


def _feasible(w, cap):
    assert w.min() >= 0.0
    assert np.all(w.sum(axis=-1) <= cap + 1e-9)


def test_zero_beyond_target_and_at_zero(no_margin_solve):
    market, spec, surface, _ = no_margin_solve
    p = Policy(surface, market)
    xs = np.array([0.0, spec.x_star, spec.x_star + 0.3, 1e4])
    for t in (0.0, 2.5, 9.99):
        np.testing.assert_array_equal(p.weights(t, xs), 0.0)


def test_scalar_and_vector_queries_agree(no_margin_solve):
    market, _, surface, _ = no_margin_solve
    p = Policy(surface, market)
    xs = np.linspace(1.0, 120.0, 23)
    batch = p.weights(3.3, xs)
    assert batch.shape == (23, 2)
    for x, row in zip(xs, batch):
        np.testing.assert_allclose(p.weights(3.3, x), row, rtol=1e-9, atol=1e-12)
    assert optimal_weights(surface, market, 3.3, 50.0).shape == (2,)


def test_feasible_everywhere(no_margin_solve, leverage_five):
    for market, surface in ((no_margin_solve[0], no_margin_solve[2]), (leverage_five[0], leverage_five[2])):
        p = Policy(surface, market)
        xs = np.linspace(0.0, 130.0, 261)
        for t in np.linspace(0.0, 10.0, 21):
            _feasible(p.weights(t, xs), market.leverage_cap)


def test_domain_errors(no_margin_solve):
    market, _, surface, _ = no_margin_solve
    p = Policy(surface, market)
    with pytest.raises(DomainError):
        p.weights(-0.5, 100.0)
    with pytest.raises(DomainError):
        p.weights(10.5, 100.0)
    with pytest.raises(DomainError):
        p.weights(1.0, np.nan)


def test_deterministic(no_margin_solve):
    market, _, surface, _ = no_margin_solve
    xs = np.linspace(1.0, 110.0, 50)
    np.testing.assert_array_equal(Policy(surface, market).weights(4.0, xs), Policy(surface, market).weights(4.0, xs))


def test_high_leverage_uses_the_cap_on_the_low_risk_asset(leverage_five):
    market, spec, surface = leverage_five
    w = Policy(surface, market).weights(5.0, np.array([20.0, 40.0, 60.0]))
    np.testing.assert_allclose(w.sum(axis=1), 5.0, rtol=1e-9)
    assert np.all(w[:, 0] > w[:, 1])


def test_no_leverage_shifts_toward_high_risk_asset(no_margin_solve):
    market, spec, surface, _ = no_margin_solve
    p = Policy(surface, market)
    near, far = p.weights(5.0, 103.0), p.weights(5.0, 30.0)
    # far below target the whole budget sits on the high-drift asset
    assert far[1] > near[1]
    assert far[1] == pytest.approx(1.0, abs=1e-9)


def test_empirical_stages(empirical_one):
    market, spec, surface = empirical_one
    p = Policy(surface, market)
    t = 5.0
    f = spec(t)
    high = p.weights(t, 0.2 * f)
    # deep below target: fully invested, led by the highest-drift asset
    assert high.sum() == pytest.approx(1.0, abs=1e-6)
    assert int(np.argmax(high)) == int(np.argmax(market.excess_drift()))
    # close to target: exposure shrinks
    near = p.weights(t, 0.98 * spec.x_star)
    assert near.sum() < high.sum()


def test_weight_grid_shapes_and_corner(no_margin_solve):
    market, spec, surface, _ = no_margin_solve
    times, wealths, grid = weight_grid(surface, market, 7, 13)
    assert grid.shape == (7, 13, 2)
    assert times[0] == 0.0 and times[-1] == 10.0
    assert wealths[-1] == surface.nodes[-1]
    _feasible(grid, 1.0)
    np.testing.assert_array_equal(grid[:, wealths >= spec.x_star], 0.0)
    one = weight_grid(surface, market, 1, 1, times=[0.0], wealths=[100.0])[2]
    np.testing.assert_array_equal(one[0, 0], optimal_weights(surface, market, 0.0, 100.0))


def test_weight_grid_rows_have_leverage(no_margin_solve):
    market, _, surface, _ = no_margin_solve
    times, wealths, grid = weight_grid(surface, market, 3, 4)
    rows = weight_grid_rows(times, wealths, grid)
    assert len(rows) == 12
    for r in rows:
        assert r[-1] == pytest.approx(sum(r[2:-1]))
