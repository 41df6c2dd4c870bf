"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (collected again in the terminal
summary).  Solves are shared through module fixtures; the whole file runs
in roughly ten minutes on one core.
"""

import numpy as np
import pytest

from lmse_portfolio.hjb import GridSpec, solve_hjb
from lmse_portfolio.market import AffineTarget, artificial_market, empirical_market, pension_target
from lmse_portfolio.presets import ARTIFICIAL_STEPS_PER_YEAR, EMPIRICAL_STEPS_PER_YEAR
from lmse_portfolio.qp import QpProblem, brute_force_qp, kkt_residuals, solve_qp
from lmse_portfolio.rbf import fit
from lmse_portfolio.simulate import Rebalance, SimConfig, rebalance_times, simulate

from conftest import DESK_GRID, record

PATHS = 10_000
SEED = 1
PRESET_GRID = GridSpec(0.5, 5, 10 * ARTIFICIAL_STEPS_PER_YEAR)
EMPIRICAL_GRID = GridSpec(0.5, 5, 15 * EMPIRICAL_STEPS_PER_YEAR)


def check(name, ok, detail):
    record(name, bool(ok), detail)
    assert ok, f"{name}: {detail}"


def _within(value, centre, tol):
    return abs(value - centre) <= tol


def _artificial_run(rbar, margin, cap, grid, rebalances=("monthly",), horizon=10.0):
    market = artificial_market(cap)
    spec = AffineTarget(100.0, rbar, horizon, margin=margin)
    store = np.unique(np.concatenate([rebalance_times(horizon, f) for f in rebalances]))
    surface, report = solve_hjb(market, spec, grid, store_times=store)
    stats = {f: simulate(market, spec, surface, SimConfig(paths=PATHS, rebalance=f, seed=SEED)) for f in rebalances}
    return stats, report


def _fmt(s):
    return (f"X_T={s['mean_wealth_T']:.2f} A_T/2={100 * s['achievement_half']:.1f}% "
            f"A_T={100 * s['achievement_T']:.1f}% P_T={s['percentile_T']:.2f}")


# ---------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def margin_runs():
    return {m: _artificial_run(0.01, m, 1.0, DESK_GRID)[0]["monthly"] for m in (0.0, 0.002)}


@pytest.fixture(scope="module")
def leverage_runs():
    rows = {(0.01, 5.0): None, (0.03, 1.0): None, (0.02, 2.0): None}
    return {k: _artificial_run(k[0], 0.002, k[1], PRESET_GRID)[0]["monthly"] for k in rows}


@pytest.fixture(scope="module")
def rebalance_runs():
    freqs = tuple(f.name.lower() for f in Rebalance)
    return _artificial_run(0.02, 0.002, 2.0, DESK_GRID, rebalances=freqs)[0]


@pytest.fixture(scope="module")
def empirical_runs():
    out = {}
    for cap in (1.0, 5.0, 10.0):
        market, spec = empirical_market(cap), pension_target(1.1)
        surface, _ = solve_hjb(market, spec, EMPIRICAL_GRID, store_times=rebalance_times(spec.horizon, "monthly"))
        out[cap] = simulate(market, spec, surface, SimConfig(paths=PATHS, seed=SEED))
    return out


@pytest.fixture(scope="module")
def stabilization_reports():
    market = artificial_market(1.0)
    spec = AffineTarget(100.0, 0.01, 10.0)
    return {e: solve_hjb(market, spec, GridSpec(0.5, e, DESK_GRID.steps))[1] for e in (0, 5)}


# ---------------------------------------------------------------- margin sweep


def test_margin_zero(margin_runs):
    s = margin_runs[0.0].summary()
    ok = _within(s["achievement_T"], 0.31, 0.04) and _within(s["achievement_half"], 0.63, 0.04)
    check("margin 0: A_T=31+-4pp, A_T/2=63+-4pp", ok, _fmt(s))


def test_margin_point_two(margin_runs):
    s = margin_runs[0.002].summary()
    ok = (_within(s["mean_wealth_T"], 110.7, 0.5) and _within(s["achievement_T"], 0.74, 0.04)
          and _within(s["percentile_T"], 106.6, 0.5))
    check("margin 0.2%: X_T=110.7+-0.5, A_T=74+-4pp, P_T=106.6+-0.5", ok, _fmt(s))


# ---------------------------------------------------------------- leverage / target sweep


def test_leverage_one_pct_cap_five(leverage_runs):
    s = leverage_runs[(0.01, 5.0)].summary()
    ok = s["achievement_T"] >= 0.96 and _within(s["mean_wealth_T"], 112.0, 0.5)
    check("rbar 1% cap 5: A_T>=96%, X_T=112.0+-0.5", ok, _fmt(s))


def test_leverage_three_pct_cap_one(leverage_runs):
    s = leverage_runs[(0.03, 1.0)].summary()
    check("rbar 3% cap 1: A_T<=3%", s["achievement_T"] <= 0.03, _fmt(s))


def test_leverage_two_pct_cap_two(leverage_runs):
    s = leverage_runs[(0.02, 2.0)].summary()
    check("rbar 2% cap 2: A_T=76+-5pp", _within(s["achievement_T"], 0.76, 0.05), _fmt(s))


# ---------------------------------------------------------------- rebalance robustness


def test_rebalance_frequency_span(rebalance_runs):
    rates = {f: st.summary()["achievement_T"] for f, st in rebalance_runs.items()}
    span = max(rates.values()) - min(rates.values())
    detail = " ".join(f"{f}={100 * a:.1f}%" for f, a in rates.items()) + f" span={100 * span:.1f}pp"
    check("rebalance T=10: A_T span <= 3pp", span <= 0.03, detail)


# ---------------------------------------------------------------- terminal plummet


def _final_year(stats):
    T = stats.times[-1]
    sel = stats.times >= T - 1.0 - 1e-9
    return stats.achievement_rate[sel]


def test_plummet_without_margin(margin_runs):
    a = _final_year(margin_runs[0.0])
    drop = a[0] - a[-1]
    check("no margin: A_t drops >= 30pp over the final year", drop >= 0.30,
          f"A_(T-1)={100 * a[0]:.1f}% A_T={100 * a[-1]:.1f}% drop={100 * drop:.1f}pp")


def test_no_plummet_with_margin(margin_runs):
    a = _final_year(margin_runs[0.002])
    worst = float((np.maximum.accumulate(a) - a).max())
    check("margin 0.2%: A_t non-decreasing within 2pp over the final year", worst <= 0.02,
          f"A_(T-1)={100 * a[0]:.1f}% A_T={100 * a[-1]:.1f}% largest dip={100 * worst:.1f}pp")


# ---------------------------------------------------------------- empirical leverage table


def test_empirical_cap_one(empirical_runs):
    s = empirical_runs[1.0].summary()
    check("empirical cap 1: A_T<=5%", s["achievement_T"] <= 0.05, _fmt(s))


def test_empirical_cap_five(empirical_runs):
    s = empirical_runs[5.0].summary()
    check("empirical cap 5: A_T=81+-5pp", _within(s["achievement_T"], 0.81, 0.05), _fmt(s))


def test_empirical_cap_ten(empirical_runs):
    s = empirical_runs[10.0].summary()
    ok = _within(s["mean_wealth_T"], 16.47, 0.4) and _within(s["achievement_T"], 0.87, 0.04)
    check("empirical cap 10: X_T=16.47+-0.4, A_T=87+-4pp", ok, _fmt(s))


# ---------------------------------------------------------------- stabilization


def test_stabilization_without_extra_nodes(stabilization_reports):
    r = stabilization_reports[0]
    check("extra_nodes=0: d2v changes sign near x*", r.boundary_sign_changes > 0,
          f"sign changes={r.boundary_sign_changes}")


def test_stabilization_with_extra_nodes(stabilization_reports):
    r = stabilization_reports[5]
    ok = r.boundary_sign_changes == 0 and r.min_curvature_t0 >= -1e-4 * r.max_curvature_t0
    check("extra_nodes=5: no sign change, min d2v >= -1e-4 max d2v", ok,
          f"sign changes={r.boundary_sign_changes} min={r.min_curvature_t0:.4g} max={r.max_curvature_t0:.4g}")


# ---------------------------------------------------------------- property suites


def test_property_rbf_node_exactness():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for n in (5, 40, 230):
        x = np.arange(n) * 0.5
        y = rng.uniform(-1e3, 1e3, n)
        f = fit(x, y, 0.25)
        worst = max(worst, np.abs(f(x) - y).max() / (1 + np.abs(y).max()))
    check("RBF node exactness <= 1e-8", worst <= 1e-8, f"worst scaled residual {worst:.2e}")


def test_property_rbf_derivatives():
    x = np.arange(0.0, 15.01, 0.5)
    f = fit(x, np.sin(x / 5.0), 0.25)
    pts = np.linspace(1.1, 13.7, 17)
    h = 5e-6
    e1 = np.abs(f.d1(pts) - (f(pts + h) - f(pts - h)) / (2 * h)).max() / np.abs(f.d1(pts)).max()
    e2 = np.abs(f.d2(pts) - (f.d1(pts + h) - f.d1(pts - h)) / (2 * h)).max() / np.abs(f.d2(pts)).max()
    check("RBF derivative vs finite difference <= 1e-5 relative", max(e1, e2) <= 1e-5, f"d1 {e1:.2e} d2 {e2:.2e}")


def test_property_qp_oracle_and_kkt():
    rng = np.random.default_rng(SEED)
    gap_ok, kkt_worst = True, 0.0
    for i in range(200):
        m = int(rng.integers(1, 4))
        A = rng.normal(size=(m, m))
        p = QpProblem(A @ A.T, -rng.uniform(0.01, 3.0, m), float(rng.choice([1.0, 2.0, 5.0])))
        delta = 0.02 if m == 3 else 0.005
        sol, lat = solve_qp(p), brute_force_qp(p, delta)
        gap_ok &= sol.objective <= lat.objective + 1e-12
        gap_ok &= lat.objective - sol.objective <= 2 * delta * np.abs(p.linear).sum()
        kkt_worst = max(kkt_worst, max(kkt_residuals(p, sol).values()))
    check("QP vs lattice oracle on 200 instances within 2 delta |c|_1", gap_ok, "200 instances")
    check("QP KKT residuals <= 1e-7", kkt_worst <= 1e-7, f"worst {kkt_worst:.2e}")


def test_property_value_surface(no_margin_solve):
    _, spec, surface, _ = no_margin_solve
    tol = 1e-6 * spec.boundary_left_value(0.0)
    ok = True
    for k, row in zip(surface.steps, surface.rows):
        ok &= row.min() >= -tol and row.max() <= spec.boundary_left_value(k * surface.time_step) * (1 + 1e-6)
        ok &= bool(np.all(row[1:] <= row[:-1] + tol))
    check("value surface bounds and monotonicity", ok, f"{len(surface.rows)} stored rows")


def test_property_statistic_identity(margin_runs):
    worst = 0.0
    for st in margin_runs.values():
        below = st.hist_mass[st.hist_left < 0.0].sum()
        worst = max(worst, abs(st.achievement_rate[-1] - (1.0 - below)))
    check("A_T = 1 - mass below zero", worst <= 1e-12, f"worst gap {worst:.1e}")


def test_property_seed_determinism(small_solve):
    market, spec, surface, _ = small_solve
    a = simulate(market, spec, surface, SimConfig(paths=2000, seed=SEED))
    b = simulate(market, spec, surface, SimConfig(paths=2000, seed=SEED, threads=2))
    same = np.array_equal(a.terminal_wealth, b.terminal_wealth) and np.array_equal(a.achievement_rate, b.achievement_rate)
    check("seed determinism bit-exact", same, "two runs, seed 1")
