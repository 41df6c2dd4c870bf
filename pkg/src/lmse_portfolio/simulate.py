"""Monte Carlo evaluation of a rebalanced policy under multivariate GBM."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError
from .hjb import ValueSurface
from .market import MarketParams, TargetSpec
from .policy import Policy

HISTOGRAM_WIDTH = 0.005
PERCENTILE_LEVEL = 95.0
_CHUNK = 2048


class Rebalance(enum.Enum):
    DAILY = 252
    WEEKLY = 52
    MONTHLY = 12
    QUARTERLY = 4
    YEARLY = 1

    @classmethod
    def parse(cls, value) -> "Rebalance":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ConfigError(f"unknown rebalance frequency {value!r}") from None

    @property
    def per_year(self) -> int:
        return self.value


def rebalance_times(horizon: float, rebalance) -> np.ndarray:
    """Rebalance dates from 0 up to and including the horizon."""
    per_year = Rebalance.parse(rebalance).per_year
    n = int(math.ceil(horizon * per_year - 1e-9))
    times = np.arange(n + 1) / per_year
    times[-1] = horizon
    return times


@dataclass
class SimConfig:
    paths: int = 10_000
    rebalance: Rebalance = Rebalance.MONTHLY
    seed: int = 0
    antithetic: bool = False
    threads: int = 1
    # statistics against the target without margin ("nominal") or the control target
    measure: str = "nominal"
    keep_terminal: bool = True

    def __post_init__(self):
        self.rebalance = Rebalance.parse(self.rebalance)
        if self.paths < 2:
            raise ConfigError("need at least two paths")
        if self.antithetic and self.paths % 2:
            raise ConfigError("antithetic sampling needs an even path count")
        if self.measure not in ("nominal", "control"):
            raise ConfigError("measure must be 'nominal' or 'control'")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")


@dataclass
class SimStats:
    times: np.ndarray
    mean_wealth: np.ndarray
    achievement_rate: np.ndarray
    percentile_point: np.ndarray
    target: np.ndarray
    hist_left: np.ndarray
    hist_right: np.ndarray
    hist_mass: np.ndarray
    floor_events: int = 0
    terminal_wealth: np.ndarray = field(default=None, repr=False)

    def _at(self, series, t):
        i = int(np.searchsorted(self.times, t + 1e-9, side="right")) - 1
        return float(series[max(i, 0)])

    def summary(self) -> dict:
        T = float(self.times[-1])
        return {
            "mean_wealth_T": float(self.mean_wealth[-1]),
            "achievement_half": self._at(self.achievement_rate, T / 2),
            "achievement_T": float(self.achievement_rate[-1]),
            "percentile_T": float(self.percentile_point[-1]),
            "target_T": float(self.target[-1]),
        }

    def summary_line(self) -> str:
        s = self.summary()
        return (
            f"X_T={s['mean_wealth_T']:.2f} A_T/2={100 * s['achievement_half']:.1f}% "
            f"A_T={100 * s['achievement_T']:.1f}% P_T={s['percentile_T']:.2f} (target {s['target_T']:.2f})"
        )

    def stats_rows(self):
        return [
            [float(t), float(m), float(a), float(p), float(f)]
            for t, m, a, p, f in zip(self.times, self.mean_wealth, self.achievement_rate, self.percentile_point, self.target)
        ]

    def histogram_rows(self):
        return [[float(a), float(b), float(m)] for a, b, m in zip(self.hist_left, self.hist_right, self.hist_mass)]


def cholesky_factor(cov) -> np.ndarray:
    """Lower-triangular L with L @ L.T == cov; semidefinite input is handled by pivoting."""
    cov = np.asarray(cov, dtype=float)
    if not np.all(np.isfinite(cov)) or cov.shape[0] != cov.shape[-1]:
        raise ValueError("covariance must be a finite square matrix")
    scale = max(np.abs(cov).max(initial=0.0), 1e-300)
    if np.abs(cov - cov.T).max(initial=0.0) > 1e-12 * scale:
        raise ValueError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    eig = np.linalg.eigvalsh(cov)
    if eig.min() < -1e-10 * max(np.trace(cov), 1e-300):
        raise ValueError("covariance is not positive semidefinite")
    # pivoted LDL^T; the permuted factor is not triangular, so return the
    # triangular factor of the symmetric square root's QR instead
    lu, d, perm = scipy.linalg.ldl(cov, lower=True)
    root = lu @ np.diag(np.sqrt(np.clip(np.diag(d), 0.0, None)))
    _, r = np.linalg.qr(root.T)
    L = r.T
    signs = np.sign(np.diag(L))
    signs[signs == 0] = 1.0
    return L * signs


def percentile_point(wealths, level: float = PERCENTILE_LEVEL) -> float:
    """Wealth met or exceeded by ``level`` percent of paths (linear order statistic)."""
    w = np.asarray(wealths, dtype=float)
    if w.size == 0:
        raise ValueError("empty sample")
    return float(np.percentile(w, 100.0 - level))


def tracking_error_histogram(wealths, target_value: float, width: float = HISTOGRAM_WIDTH):
    """Histogram of (X - f)/f with bins [k w, (k+1) w); zero is always a bin edge.

    Returns (left edges, right edges, masses); masses sum to one.
    """
    if target_value <= 0:
        raise ValueError("target must be positive")
    w = np.asarray(wealths, dtype=float)
    err = (w - target_value) / target_value
    idx = np.floor(err / width).astype(np.int64)
    lo, hi = int(idx.min()), int(idx.max())
    counts = np.bincount(idx - lo, minlength=hi - lo + 1)
    left = np.arange(lo, hi + 1) * width
    return left, left + width, counts / w.size


def _path_normals(seed: int, start: int, stop: int, shape, antithetic: bool) -> np.ndarray:
    """Standard normals for paths [start, stop), one Philox substream per path (or pair)."""
    out = np.empty((stop - start,) + tuple(shape))
    for j in range(start, stop):
        stream = j // 2 if antithetic else j
        gen = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, stream]))
        z = gen.standard_normal(shape)
        out[j - start] = -z if antithetic and j % 2 else z
    return out


class _ConstantPolicy:
    def __init__(self, weights):
        self.w = np.asarray(weights, dtype=float)

    def weights(self, t, x):
        return np.broadcast_to(self.w, (np.size(x), self.w.size))


def _simulate_chunk(policy, market, times, x0, seed, start, stop, antithetic):
    n = stop - start
    m = market.at(0.0).num_assets
    z = _path_normals(seed, start, stop, (times.size - 1, m), antithetic)
    X = np.full(n, float(x0))
    history = np.empty((times.size, n))
    history[0] = X
    floors = 0
    for j in range(times.size - 1):
        t, dt = times[j], times[j + 1] - times[j]
        mk = market.at(t)
        L = cholesky_factor(mk.covariance)
        alive = X > 0.0
        w = np.zeros((n, m))
        if alive.any():
            w[alive] = policy.weights(t, X[alive])
        log_g = (mk.drift - 0.5 * np.diag(mk.covariance)) * dt + math.sqrt(dt) * z[:, j] @ L.T
        growth = np.expm1(log_g)
        rf = math.expm1(mk.risk_free * dt)
        X = X * (1.0 + np.einsum("ij,ij->i", w, growth) + (1.0 - w.sum(axis=1)) * rf)
        crossed = X <= 0.0
        floors += int(np.count_nonzero(crossed & alive))
        X = np.where(crossed, 0.0, X)
        history[j + 1] = X
    return history, floors


def simulate_paths(policy, market, horizon: float, x0: float, cfg: SimConfig):
    """Wealth at every rebalance date: returns (times, wealth (dates, paths), floor events)."""
    times = rebalance_times(horizon, cfg.rebalance)
    chunk = _CHUNK
    bounds = [(s, min(s + chunk, cfg.paths)) for s in range(0, cfg.paths, chunk)]
    run = lambda b: _simulate_chunk(policy, market, times, x0, cfg.seed, b[0], b[1], cfg.antithetic)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    wealth = np.concatenate([p[0] for p in parts], axis=1)
    return times, wealth, sum(p[1] for p in parts)


def check_alignment(surface: ValueSurface, times) -> None:
    missing = [float(t) for t in times[:-1] if not surface.has_step(surface.grid_step_at(t))]
    if missing:
        raise ConfigError(
            f"surface has no stored row for {len(missing)} rebalance dates (first t={missing[0]:.6g}); "
            "re-solve with these rebalance times stored"
        )


def compute_stats(times, wealth, reference: TargetSpec, floors=0, keep_terminal=True) -> SimStats:
    targets = np.array([reference(t) for t in times])
    mean = wealth.mean(axis=1)
    achieved = (wealth >= targets[:, None]).mean(axis=1)
    pct = np.array([percentile_point(row) for row in wealth])
    left, right, mass = tracking_error_histogram(wealth[-1], targets[-1])
    return SimStats(
        times, mean, achieved, pct, targets, left, right, mass, floors,
        wealth[-1].copy() if keep_terminal else None,
    )


def simulate(market: MarketParams, spec: TargetSpec, surface: ValueSurface, cfg: SimConfig) -> SimStats:
    """Simulate the surface's optimal policy from the target's initial wealth."""
    if surface.horizon + 1e-12 < spec.horizon:
        raise ConfigError("surface horizon shorter than the target horizon")
    times = rebalance_times(spec.horizon, cfg.rebalance)
    check_alignment(surface, times)
    policy = Policy(surface, market)
    times, wealth, floors = simulate_paths(policy, market, spec.horizon, spec.initial_wealth, cfg)
    reference = spec.nominal() if cfg.measure == "nominal" else spec
    return compute_stats(times, wealth, reference, floors, cfg.keep_terminal)


def simulate_constant(market: MarketParams, spec: TargetSpec, weights, cfg: SimConfig) -> SimStats:
    """Fixed-weight benchmark; the same path engine with a constant policy."""
    times, wealth, floors = simulate_paths(_ConstantPolicy(weights), market, spec.horizon, spec.initial_wealth, cfg)
    reference = spec.nominal() if cfg.measure == "nominal" else spec
    return compute_stats(times, wealth, reference, floors, cfg.keep_terminal)
