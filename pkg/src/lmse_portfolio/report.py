"""Output files: statistics CSVs, weight grids and plain-text plot data.

Every writer goes through ``atomic_write`` so a failed command never
leaves a half-written file behind.
"""

from __future__ import annotations

import csv
import io
import json
import os

import numpy as np

from .errors import HashMismatchError, MissingSeriesError
from .policy import weight_grid_rows
from .simulate import SimStats

STATS_COLUMNS = ("t", "mean_wealth", "achievement_rate", "percentile_point", "target_f")
HISTOGRAM_COLUMNS = ("bin_left", "bin_right", "mass")


def atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def read_columns(path, required) -> dict:
    """Numeric columns of a CSV file; raises MissingSeriesError for absent files or columns."""
    if not os.path.exists(path):
        raise MissingSeriesError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingSeriesError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    missing = [c for c in required if c not in header]
    if missing:
        raise MissingSeriesError(f"{path}: missing column(s) {', '.join(missing)}")
    if not rows:
        raise MissingSeriesError(f"{path}: no data rows")
    out = {}
    for j, name in enumerate(header):
        try:
            out[name] = np.array([float(r[j]) for r in rows])
        except (ValueError, IndexError):
            if name in required:
                raise MissingSeriesError(f"{path}: column {name} is not numeric") from None
    return out


def write_stats(out_dir, stats: SimStats, config_hash: str, meta: dict = None) -> dict:
    """stats.csv, histogram.csv and summary.json; returns the summary dict."""
    summary = {"config_hash": config_hash, **stats.summary(), "floor_events": stats.floor_events, **(meta or {})}
    atomic_write(os.path.join(out_dir, "stats.csv"), csv_text(STATS_COLUMNS, stats.stats_rows()))
    atomic_write(os.path.join(out_dir, "histogram.csv"), csv_text(HISTOGRAM_COLUMNS, stats.histogram_rows()))
    atomic_write(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def weight_grid_text(times, wealths, grid) -> str:
    m = grid.shape[-1]
    header = ["t", "x", *[f"pi_{i + 1}" for i in range(m)], "leverage"]
    return csv_text(header, weight_grid_rows(times, wealths, grid))


def _series_text(columns: dict) -> str:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    lines = ["# " + " ".join(names)]
    lines += [" ".join(repr(float(v)) for v in row) for row in data]
    return "\n".join(lines) + "\n"


def plot_files(stats: dict, histogram: dict = None, weights=None) -> dict:
    """Plot-data file contents keyed by file name.

    ``stats`` and ``histogram`` are column dicts as read from the CSVs;
    ``weights`` is an optional (times, wealths, grid) lattice.
    """
    files = {
        "wealth_curve.txt": _series_text({"t": stats["t"], "mean_wealth": stats["mean_wealth"], "target_f": stats["target_f"]}),
        "achievement_curve.txt": _series_text({"t": stats["t"], "achievement_rate": stats["achievement_rate"]}),
        "percentile_curve.txt": _series_text({"t": stats["t"], "percentile_point": stats["percentile_point"]}),
    }
    if histogram is not None:
        centers = 0.5 * (histogram["bin_left"] + histogram["bin_right"])
        files["tracking_error_histogram.txt"] = _series_text({"bin_center": centers, "mass": histogram["mass"]})
    if weights is not None:
        times, wealths, grid = weights
        for i in range(grid.shape[-1]):
            files[f"weights_heatmap_{i + 1}.txt"] = _heatmap_text(times, wealths, grid[:, :, i], f"pi_{i + 1}")
        files["leverage_heatmap.txt"] = _heatmap_text(times, wealths, grid.sum(axis=-1), "leverage")
    return files


def _heatmap_text(times, wealths, values, name) -> str:
    lines = [
        f"# {name}: rows are t, columns are x",
        "# t: " + " ".join(repr(float(t)) for t in times),
        "# x: " + " ".join(repr(float(x)) for x in wealths),
    ]
    lines += [" ".join(repr(float(v)) for v in row) for row in values]
    return "\n".join(lines) + "\n"


def read_heatmap(path):
    """Inverse of the heatmap writer: (times, wealths, values)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    times = np.array([float(v) for v in lines[1].split(":", 1)[1].split()])
    wealths = np.array([float(v) for v in lines[2].split(":", 1)[1].split()])
    values = np.array([[float(v) for v in line.split()] for line in lines[3:] if line.strip()])
    return times, wealths, values


def read_summary(path) -> dict:
    if not os.path.exists(path):
        raise MissingSeriesError(f"{path}: file not found")
    with open(path) as fh:
        return json.load(fh)


def check_hash(found: str, expected: str, what: str) -> None:
    if found != expected:
        raise HashMismatchError(f"{what} was produced from config {found}, expected {expected}")
