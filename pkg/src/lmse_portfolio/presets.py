"""Named experiment tables: one config per published row.

Artificial runs use h_x = 0.5, five extra nodes and M = T * 12 * 500
time steps; the empirical runs use M = T * 12 * 50.  Each row carries the
published statistics so ``tables`` can print them side by side.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .config import ExperimentConfig, affine_config, pension_config
from .hjb import GridSpec
from .simulate import Rebalance, SimConfig

ARTIFICIAL_STEPS_PER_YEAR = 12 * 500
EMPIRICAL_STEPS_PER_YEAR = 12 * 50


@dataclass(frozen=True)
class Row:
    label: str
    config: ExperimentConfig
    # published (mean wealth, A_{T/2}, A_T, P_T); rates in percent
    published: tuple = None


def artificial_grid(horizon, extra_nodes=5) -> GridSpec:
    return GridSpec(h_x=0.5, extra_nodes=extra_nodes, steps=int(round(horizon * ARTIFICIAL_STEPS_PER_YEAR)))


def _artificial(label, rbar, margin, cap, published=None, horizon=10.0, rebalance="monthly", paths=10_000, seed=1):
    cfg = affine_config(
        rbar, margin, cap, horizon=horizon,
        grid=artificial_grid(horizon),
        sim=SimConfig(paths=paths, rebalance=rebalance, seed=seed),
        name=label,
    )
    return Row(label, cfg, published)


def margin_sweep(**kw):
    published = {
        0.0: (109.4, 63, 31, 106.5),
        0.001: (110.2, 64, 73, 106.6),
        0.002: (110.7, 65, 74, 106.6),
        0.003: (111.2, 66, 75, 106.6),
        0.004: (111.6, 67, 77, 106.5),
        0.005: (112.0, 68, 78, 106.4),
    }
    return [_artificial(f"margin_{m * 100:.1f}pct", 0.01, m, 1.0, p, **kw) for m, p in published.items()]


def leverage_sweep(**kw):
    published = {
        (0.01, 1): (110.7, 65, 74, 106.6),
        (0.01, 2): (111.9, 93, 98, 111.6),
        (0.01, 5): (112.0, 97, 100, 111.9),
        (0.02, 1): (114.0, 17, 7, 104.8),
        (0.02, 2): (120.4, 65, 76, 113.3),
        (0.02, 5): (122.3, 94, 99, 121.6),
        (0.03, 1): (116.4, 7, 0, 101.3),
        (0.03, 2): (125.3, 32, 32, 113.0),
        (0.03, 5): (132.1, 89, 96, 130.7),
    }
    return [
        _artificial(f"rbar_{r * 100:.0f}pct_cap_{c}", r, 0.002, float(c), p, **kw)
        for (r, c), p in published.items()
    ]


def rebalance_sweep(**kw):
    published = {
        (2.0, 0.02): {
            "daily": (104.4, 55, 59, 99.8), "weekly": (104.4, 55, 59, 99.8), "monthly": (104.4, 56, 59, 99.9),
            "quarterly": (104.4, 55, 59, 99.9), "yearly": (104.5, 56, 59, 99.8),
        },
        (10.0, 0.002): {
            "daily": (120.4, 65, 77, 113.3), "weekly": (120.4, 65, 77, 113.3), "monthly": (120.4, 65, 76, 113.3),
            "quarterly": (120.5, 65, 76, 113.3), "yearly": (121.0, 64, 75, 113.2),
        },
    }
    rows = []
    for (horizon, margin), by_freq in published.items():
        for freq, p in by_freq.items():
            label = f"T{horizon:g}_{freq}"
            rows.append(_artificial(label, 0.02, margin, 2.0, p, horizon=horizon, rebalance=freq, **kw))
    return rows


def horizon_sweep(**kw):
    """No-margin runs with several terminal times (figure data, no published table)."""
    return [_artificial(f"T{h:g}", 0.01, 0.0, 1.0, None, horizon=h, **kw) for h in (5.0, 10.0, 12.0)]


def empirical_sweep(paths=10_000, seed=1):
    published = {
        1: (9.31, 0, 1, 4.68), 2: (13.08, 16, 33, 6.76), 3: (15.03, 43, 64, 7.71), 4: (15.77, 57, 76, 8.42),
        5: (16.09, 63, 81, 9.29), 7: (16.34, 67, 85, 11.82), 10: (16.47, 69, 87, 13.09),
    }
    rows = []
    for cap, p in published.items():
        cfg = pension_config(
            float(cap),
            grid=GridSpec(h_x=0.5, extra_nodes=5, steps=int(round(15 * EMPIRICAL_STEPS_PER_YEAR))),
            sim=SimConfig(paths=paths, rebalance=Rebalance.MONTHLY, seed=seed),
            name=f"empirical_cap_{cap}",
        )
        rows.append(Row(f"cap_{cap}", cfg, p))
    return rows


PRESETS = {
    "margin": margin_sweep,
    "leverage": leverage_sweep,
    "rebalance": rebalance_sweep,
    "horizon": horizon_sweep,
    "empirical": empirical_sweep,
}


def preset_rows(name: str, paths=None, seed=None):
    try:
        build = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
    kw = {}
    if paths is not None:
        kw["paths"] = paths
    if seed is not None:
        kw["seed"] = seed
    return build(**kw)


def single(name: str) -> ExperimentConfig:
    """Config of one row, addressed as ``<preset>/<label>``."""
    preset, _, label = name.partition("/")
    for row in preset_rows(preset):
        if row.label == label:
            return replace(row.config, out=f"out/{preset}/{label}")
    raise KeyError(f"no row {label!r} in preset {preset!r}")
