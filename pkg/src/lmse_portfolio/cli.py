"""Command-line entry point: solve, simulate, report, tables.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure
(blow-up, singular interpolation, QP non-convergence), 4 hash mismatch
between a config and a checkpoint or statistics file, 5 missing series.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from . import presets
from .errors import (
    BlowUpError,
    ConfigError,
    DomainError,
    HashMismatchError,
    IllConditionedError,
    MissingSeriesError,
    QPConvergenceError,
)
from .hjb import ValueSurface, solve_hjb
from .policy import weight_grid
from .report import (
    HISTOGRAM_COLUMNS,
    STATS_COLUMNS,
    atomic_write,
    check_hash,
    csv_text,
    plot_files,
    read_columns,
    read_summary,
    weight_grid_text,
    write_stats,
)
from .simulate import check_alignment, rebalance_times, simulate

log = logging.getLogger("lmse_portfolio")

SURFACE_FILE = "surface.csv"
SOLVE_REPORT_FILE = "solve_report.json"


def _store_times(cfg, rebalances=None):
    horizon = cfg.target.horizon
    freqs = rebalances or [cfg.sim.rebalance]
    return np.unique(np.concatenate([rebalance_times(horizon, f) for f in freqs]))


def _progress(done, total):
    log.debug("solve %d/%d steps", done, total)


def run_solve(cfg, out_dir, rebalances=None):
    """Solve and write the checkpoint and solve report; returns (surface, report)."""
    os.makedirs(out_dir, exist_ok=True)
    market, spec = cfg.market_params(), cfg.target_spec()
    log.info("solving %s: %d nodes, M=%d", cfg.name or "config", cfg.grid.node_count(spec.x_star), cfg.grid.steps)
    surface, report = solve_hjb(market, spec, cfg.grid, store_times=_store_times(cfg, rebalances), progress=_progress)
    key = cfg.solve_hash()
    surface.save(os.path.join(out_dir, SURFACE_FILE), key)
    doc = {"config_hash": key, **report.to_dict()}
    atomic_write(os.path.join(out_dir, SOLVE_REPORT_FILE), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    atomic_write(os.path.join(out_dir, "config.yaml"), cfg.dumps())
    log.info(
        "solved in %.1fs; curvature clamps %d; sign changes near x* %d",
        report.wall_time, report.curvature_clamps, report.boundary_sign_changes,
    )
    return surface, report


def load_checkpoint(path, cfg=None):
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint {path} not found; run `solve` first")
    surface, header = ValueSurface.load(path)
    if cfg is not None:
        check_hash(header.get("config_hash"), cfg.solve_hash(), f"checkpoint {path}")
        surface.market = cfg.market_params()
    return surface, header


def run_simulate(cfg, out_dir, checkpoint=None, surface=None):
    os.makedirs(out_dir, exist_ok=True)
    if surface is None:
        surface, _ = load_checkpoint(checkpoint or os.path.join(out_dir, SURFACE_FILE), cfg)
    stats = simulate(cfg.market_params(), cfg.target_spec(), surface, cfg.sim)
    meta = {"seed": cfg.sim.seed, "paths": cfg.sim.paths, "rebalance": cfg.sim.rebalance.name.lower()}
    summary = write_stats(out_dir, stats, cfg.solve_hash(), meta)
    return stats, summary


def run_report(in_dir, out_dir=None, checkpoint=None, lattice=(41, 81)):
    """Plot-data files from a simulate output directory; returns written file names."""
    out_dir = out_dir or os.path.join(in_dir, "plots")
    stats = read_columns(os.path.join(in_dir, "stats.csv"), STATS_COLUMNS)
    histogram = read_columns(os.path.join(in_dir, "histogram.csv"), HISTOGRAM_COLUMNS)
    weights = None
    checkpoint = checkpoint or os.path.join(in_dir, SURFACE_FILE)
    if os.path.exists(checkpoint):
        surface, header = load_checkpoint(checkpoint)
        summary_path = os.path.join(in_dir, "summary.json")
        if os.path.exists(summary_path):
            check_hash(read_summary(summary_path).get("config_hash"), header.get("config_hash"), "statistics")
        if surface.market is None:
            raise MissingSeriesError(f"{checkpoint}: checkpoint carries no market block for the weight grid")
        weights = weight_grid(surface, surface.market, *lattice)
    files = plot_files(stats, histogram, weights)
    if weights is not None:
        files["weight_grid.csv"] = weight_grid_text(*weights)
    os.makedirs(out_dir, exist_ok=True)
    for name, text in files.items():
        atomic_write(os.path.join(out_dir, name), text)
    return sorted(files)


TABLE_COLUMNS = (
    "label", "mean_wealth_T", "achievement_half", "achievement_T", "percentile_T", "target_T",
    "reference_mean_wealth_T", "reference_achievement_half", "reference_achievement_T", "reference_percentile_T",
)


def run_table(name, out_root, paths=None, seed=None, threads=None, echo=print):
    """Solve and simulate every row of a preset; one solve per distinct surface."""
    rows = presets.preset_rows(name, paths=paths, seed=seed)
    base = os.path.join(out_root, name)
    groups = {}
    for row in rows:
        groups.setdefault(row.config.solve_hash(), []).append(row)
    surfaces = {}
    for key, members in groups.items():
        cfg = members[0].config
        freqs = sorted({m.config.sim.rebalance for m in members}, key=lambda r: r.value)
        sdir = os.path.join(base, "surfaces", key)
        path = os.path.join(sdir, SURFACE_FILE)
        surface = None
        if os.path.exists(path):
            try:
                surface, _ = load_checkpoint(path, cfg)
                for f in freqs:
                    check_alignment(surface, rebalance_times(cfg.target.horizon, f))
                log.info("reusing %s", path)
            except (ConfigError, HashMismatchError):
                surface = None
        if surface is None:
            surface, _ = run_solve(cfg, sdir, freqs)
        surfaces[key] = surface

    table = []
    for row in rows:
        cfg = row.config.with_overrides(threads=threads)
        stats, summary = run_simulate(cfg, os.path.join(base, row.label), surface=surfaces[cfg.solve_hash()])
        pub = row.published or (None,) * 4
        table.append([
            row.label, summary["mean_wealth_T"], summary["achievement_half"], summary["achievement_T"],
            summary["percentile_T"], summary["target_T"],
            pub[0], None if pub[1] is None else pub[1] / 100, None if pub[2] is None else pub[2] / 100, pub[3],
        ])
        published = "" if row.published is None else "  reference X_T={} A_T/2={}% A_T={}% P_T={}".format(*row.published)
        echo(f"{row.label:28s} {stats.summary_line()}{published}")
    atomic_write(os.path.join(base, "table.csv"), csv_text(TABLE_COLUMNS, table))
    return table


def _load_config(args):
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = cfgmod.load(args.config)
    return cfg.with_overrides(out=args.out, seed=getattr(args, "seed", None),
                              paths=getattr(args, "paths", None), threads=getattr(args, "threads", None))


def _cmd_solve(args):
    cfg = _load_config(args)
    _, report = run_solve(cfg, cfg.out)
    print(
        f"wrote {os.path.join(cfg.out, SURFACE_FILE)} (clamps={report.curvature_clamps}, "
        f"sign changes near x*={report.boundary_sign_changes}, {report.wall_time:.1f}s)"
    )


def _cmd_simulate(args):
    cfg = _load_config(args)
    stats, _ = run_simulate(cfg, cfg.out, checkpoint=args.checkpoint)
    print(stats.summary_line())


def _cmd_report(args):
    in_dir = args.stats or args.out
    if in_dir is None:
        raise ConfigError("report needs --stats DIR or --out DIR")
    lattice = tuple(args.lattice) if args.lattice else (41, 81)
    if min(lattice) < 1:
        raise ConfigError("--lattice sizes must be positive")
    names = run_report(in_dir, args.out if args.stats else None, args.checkpoint, lattice)
    print("wrote " + ", ".join(names))


def _cmd_tables(args):
    out = args.out or "out"
    run_table(args.preset, out, paths=args.paths, seed=args.seed, threads=args.threads)
    print(f"wrote {os.path.join(out, args.preset, 'table.csv')}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmse-portfolio", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim=True, config=True):
        if config:
            sp.add_argument("--config", help="experiment config (YAML or JSON)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        if sim:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--paths", type=int)
            sp.add_argument("--threads", type=int)

    sp = sub.add_parser("solve", help="solve the HJB equation and write a checkpoint")
    common(sp, sim=False)
    sp.set_defaults(func=_cmd_solve)

    sp = sub.add_parser("simulate", help="simulate the optimal policy from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", help="surface checkpoint (default: OUT/surface.csv)")
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("report", help="write plot-data files from simulation output")
    sp.add_argument("--stats", help="directory holding stats.csv and histogram.csv")
    sp.add_argument("--out", help="plot-data directory (or the stats directory when --stats is absent)")
    sp.add_argument("--checkpoint", help="surface checkpoint for the weight heatmaps")
    sp.add_argument("--lattice", type=int, nargs=2, metavar=("TIMES", "WEALTHS"))
    sp.set_defaults(func=_cmd_report)

    sp = sub.add_parser("tables", help="reproduce a published table")
    sp.add_argument("preset", choices=sorted(presets.PRESETS))
    common(sp, config=False)
    sp.set_defaults(func=_cmd_tables)
    return p


EXIT_CODES = (
    ((ConfigError, DomainError), 2),
    ((BlowUpError, IllConditionedError, QPConvergenceError), 3),
    ((HashMismatchError,), 4),
    ((MissingSeriesError,), 5),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:
        for kinds, code in EXIT_CODES:
            if isinstance(exc, kinds):
                print(f"error: {exc}", file=sys.stderr)
                return code
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
