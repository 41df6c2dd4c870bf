"""Optimal portfolio weights read off a solved value surface."""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .hjb import ValueSurface
from .market import MarketParams, at_or_beyond
from .qp import HamiltonianQP


class Policy:
    """pi*(t, x) from a value surface, vectorized over wealth.

    The latest stored row with t_k <= t is used, so the policy is piecewise
    constant in time between stored rows.  Wealth is clamped to the node
    range before derivatives are taken; at or beyond x*, at zero wealth and
    wherever the curvature is clamped the weights are zero.

    The node next below x* borders the pinned zero values, and its second
    derivative is not resolved (it collapses towards zero while v_x does
    not), which sends the QP to the leverage cap.  Between the node before
    it and x* the weights are therefore tapered linearly to zero.
    """

    def __init__(self, surface: ValueSurface, market: MarketParams):
        self.surface = surface
        self.market = market
        self._solvers = {}
        nodes = surface.nodes
        below = nodes[(nodes > 0.0) & ~at_or_beyond(nodes, surface.x_star)]
        self.taper_start = float(below[-2]) if below.size >= 2 else None

    def _solver(self, t):
        mk = self.market.at(t)
        if mk is self.market and "fixed" in self._solvers:
            return self._solvers["fixed"]
        pair = (mk, HamiltonianQP(mk.covariance, mk.excess_drift(), mk.leverage_cap))
        if mk is self.market:
            self._solvers["fixed"] = pair
        return pair

    def weights(self, t: float, x) -> np.ndarray:
        """Weights of shape (m,) for scalar x or (n, m) for an array of wealths."""
        horizon = self.surface.horizon
        if not -1e-12 <= t <= horizon + 1e-12:
            raise DomainError(f"time {t} outside [0, {horizon}]")
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(x)):
            raise DomainError("wealth must be finite")
        mk, solver = self._solver(t)
        out = np.zeros((x.size, mk.num_assets))
        x_star = self.surface.x_star
        xc = np.clip(x, 0.0, self.surface.nodes[-1])
        taper = np.ones_like(xc)
        if self.taper_start is not None:
            band = xc > self.taper_start
            taper[band] = np.clip((x_star - xc[band]) / (x_star - self.taper_start), 0.0, 1.0)
            xc = np.where(band, self.taper_start, xc)
        active = (xc > 0.0) & ~at_or_beyond(xc, x_star)
        if active.any():
            interp = self.surface.at(t)
            xa = xc[active]
            _, v_x, v_xx = interp.derivatives(xa)
            clamped = v_xx < 0.0
            alpha = xa * xa * np.where(clamped, 0.0, v_xx)
            out[active], _ = solver.solve(alpha, np.where(clamped, 0.0, xa * v_x))
        out *= taper[:, None]
        return out[0] if scalar else out


def optimal_weights(surface: ValueSurface, market: MarketParams, t: float, x):
    return Policy(surface, market).weights(t, x)


def weight_grid(surface: ValueSurface, market: MarketParams, time_count: int, wealth_count: int,
                times=None, wealths=None):
    """Weights on a (t, x) lattice.

    Returns ``(times, wealths, weights)`` with weights shaped
    (time_count, wealth_count, m).  Default axes span [0, T] and
    [0, x_N]; a single point defaults to (0, x0).
    """
    if times is None:
        times = np.linspace(0.0, surface.horizon, time_count) if time_count > 1 else np.array([0.0])
    if wealths is None:
        if wealth_count > 1:
            wealths = np.linspace(0.0, surface.nodes[-1], wealth_count)
        else:
            wealths = np.array([surface.target.initial_wealth])
    times = np.asarray(times, dtype=float)
    wealths = np.asarray(wealths, dtype=float)
    pol = Policy(surface, market)
    grid = np.stack([pol.weights(t, wealths) for t in times])
    return times, wealths, grid


def weight_grid_rows(times, wealths, grid):
    """Flatten a weight lattice to CSV rows: t, x, pi_1..pi_m, leverage."""
    rows = []
    for i, t in enumerate(times):
        for j, x in enumerate(wealths):
            w = grid[i, j]
            rows.append([float(t), float(x), *map(float, w), float(w.sum())])
    return rows
