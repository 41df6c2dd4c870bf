"""Market parameters, target wealth schedules and analytic boundary values."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigError, DomainError

_TIME_SLACK = 1e-12
_X_STAR_SLACK = 1e-10


def _check_time(t, horizon):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < -_TIME_SLACK) or np.any(t_arr > horizon + _TIME_SLACK):
        raise DomainError(f"time {t} outside [0, {horizon}]")
    return np.clip(t_arr, 0.0, horizon)


@dataclass(frozen=True, eq=False)
class MarketParams:
    """Constant-coefficient market: risk-free rate, drifts, covariance and leverage cap.

    Rates are per year. ``covariance`` is sigma @ sigma.T.
    """

    risk_free: float
    drift: np.ndarray
    covariance: np.ndarray
    leverage_cap: float = 1.0

    def __post_init__(self):
        drift = np.atleast_1d(np.asarray(self.drift, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        m = drift.shape[0]
        if drift.ndim != 1 or m < 1:
            raise ConfigError("drift must be a non-empty vector")
        if cov.shape != (m, m):
            raise ConfigError(f"covariance must be {m}x{m}, got {cov.shape}")
        if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(cov))):
            raise ConfigError("market parameters must be finite")
        scale = max(np.abs(cov).max(), 1e-300)
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise ConfigError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        eig = np.linalg.eigvalsh(cov)
        if eig.min() < -1e-10 * np.trace(cov):
            raise ConfigError(f"covariance is not positive semidefinite (min eigenvalue {eig.min():.3g})")
        if np.any(drift - self.risk_free <= 0):
            raise ConfigError("every drift must exceed the risk-free rate")
        if self.leverage_cap < 0:
            raise ConfigError("leverage cap must be non-negative")
        drift.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "risk_free", float(self.risk_free))
        object.__setattr__(self, "leverage_cap", float(self.leverage_cap))

    @classmethod
    def from_vols(cls, risk_free, drift, vols, corr, leverage_cap=1.0) -> "MarketParams":
        """Build from volatilities and a correlation matrix: diag(vols) @ corr @ diag(vols)."""
        d = np.diag(np.asarray(vols, dtype=float))
        return cls(risk_free, drift, d @ np.asarray(corr, dtype=float) @ d, leverage_cap)

    @property
    def num_assets(self) -> int:
        return self.drift.shape[0]

    @property
    def leveraged(self) -> bool:
        return self.leverage_cap > 1.0

    def excess_drift(self) -> np.ndarray:
        return self.drift - self.risk_free

    def at(self, t: float) -> "MarketParams":
        return self

    def with_cap(self, leverage_cap: float) -> "MarketParams":
        return MarketParams(self.risk_free, self.drift, self.covariance, leverage_cap)

    def to_dict(self) -> dict:
        return {
            "r": self.risk_free,
            "b": self.drift.tolist(),
            "sigma_cov": self.covariance.tolist(),
            "leverage_cap": self.leverage_cap,
        }


@dataclass(frozen=True, eq=False)
class TimeVaryingMarket:
    """Market whose coefficients are deterministic functions of time.

    ``at(t)`` freezes the coefficients into a :class:`MarketParams`.
    """

    risk_free: Callable[[float], float]
    drift: Callable[[float], Sequence[float]]
    covariance: Callable[[float], Sequence[Sequence[float]]]
    leverage_cap: float = 1.0

    def at(self, t: float) -> MarketParams:
        return MarketParams(self.risk_free(t), self.drift(t), self.covariance(t), self.leverage_cap)

    @property
    def num_assets(self) -> int:
        return self.at(0.0).num_assets


def excess_drift(params: MarketParams) -> np.ndarray:
    return params.excess_drift()


def _affine_square_integral(f0: float, f1: float, a: float, b: float) -> float:
    """Integral of (f)_+^2 over [a, b] for f linear from f0 at a to f1 at b."""
    width = b - a
    if width <= 0:
        return 0.0
    if f0 >= 0 and f1 >= 0:
        return width * (f0 * f0 + f0 * f1 + f1 * f1) / 3.0
    if f0 <= 0 and f1 <= 0:
        return 0.0
    # sign change: only the positive piece contributes, a triangle-like quadratic
    root = a + width * f0 / (f0 - f1)
    if f0 > 0:
        return (root - a) * f0 * f0 / 3.0
    return (b - root) * f1 * f1 / 3.0


@dataclass(frozen=True)
class AffineTarget:
    """f(t) = (1 + (required_return + margin) t) x0."""

    initial_wealth: float
    required_return: float
    horizon: float
    margin: float = 0.0

    variant = "affine"

    def __post_init__(self):
        if self.initial_wealth <= 0:
            raise ConfigError("initial wealth must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.margin < 0:
            raise ConfigError("margin rate must be non-negative")
        if min(self._raw(0.0), self._raw(self.horizon)) <= 0:
            raise ConfigError("target must stay positive on [0, T]")

    @property
    def growth(self) -> float:
        return self.required_return + self.margin

    def _raw(self, t):
        return (1.0 + self.growth * t) * self.initial_wealth

    def __call__(self, t):
        t = _check_time(t, self.horizon)
        out = self._raw(t)
        return float(out) if out.ndim == 0 else out

    @property
    def x_star(self) -> float:
        return max(self._raw(0.0), self._raw(self.horizon))

    def boundary_left_value(self, t: float) -> float:
        t = float(_check_time(t, self.horizon))
        T, g, x0 = self.horizon, self.growth, self.initial_wealth
        fT = max(self._raw(T), 0.0)
        # expanded antiderivative of (1 + g s)^2 avoids dividing by g
        integral = x0 * x0 * ((T - t) + g * (T * T - t * t) + g * g * (T**3 - t**3) / 3.0)
        return 0.5 * fT * fT + integral / (2.0 * T)

    def nominal(self) -> "AffineTarget":
        return replace(self, margin=0.0)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "x0": self.initial_wealth,
            "rbar": self.required_return,
            "margin": self.margin,
            "T": self.horizon,
        }


@dataclass(frozen=True)
class TabulatedTarget:
    """f(t) = kappa * piecewise-linear interpolation of tabulated (t_j, f_j).

    ``values`` holds the unscaled schedule, e.g. income minus expense.
    ``initial_wealth`` defaults to the unscaled value at t = 0.
    """

    times: tuple
    values: tuple
    horizon: float
    kappa: float = 1.0
    initial_wealth: float = None

    variant = "tabulated"

    def __post_init__(self):
        times = tuple(float(v) for v in self.times)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if len(times) < 2 or len(times) != len(values):
            raise ConfigError("need at least two knots with matching values")
        if np.any(np.diff(times) <= 0):
            raise ConfigError("knot times must be strictly increasing")
        if self.horizon <= 0 or times[0] > 0 or times[-1] < self.horizon:
            raise ConfigError("knots must cover [0, T]")
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if self.initial_wealth is None:
            object.__setattr__(self, "initial_wealth", float(np.interp(0.0, times, values)))
        if self.initial_wealth <= 0:
            raise ConfigError("initial wealth must be positive")
        knots = self._knots_within(0.0)
        if min(self.kappa * v for _, v in knots) <= 0:
            raise ConfigError("target must stay positive on [0, T]")

    @classmethod
    def from_income_expense(cls, times, income, expense, horizon, kappa=1.0, initial_wealth=None):
        values = np.asarray(income, dtype=float) - np.asarray(expense, dtype=float)
        return cls(tuple(times), tuple(values), horizon, kappa, initial_wealth)

    def _raw(self, t):
        return self.kappa * np.interp(t, self.times, self.values)

    def __call__(self, t):
        t = _check_time(t, self.horizon)
        out = self._raw(t)
        return float(out) if np.ndim(out) == 0 else out

    def _knots_within(self, start):
        """(t, unscaled f) pairs at start, interior knots and the horizon."""
        pts = [start] + [s for s in self.times if start < s < self.horizon] + [self.horizon]
        return [(s, float(np.interp(s, self.times, self.values))) for s in pts]

    @property
    def x_star(self) -> float:
        return self.kappa * max(v for _, v in self._knots_within(0.0))

    def boundary_left_value(self, t: float) -> float:
        t = float(_check_time(t, self.horizon))
        T = self.horizon
        fT = max(self._raw(T), 0.0)
        pts = self._knots_within(t)
        integral = 0.0
        for (a, fa), (b, fb) in zip(pts[:-1], pts[1:]):
            integral += _affine_square_integral(self.kappa * fa, self.kappa * fb, a, b)
        return 0.5 * fT * fT + integral / (2.0 * T)

    def nominal(self) -> "TabulatedTarget":
        return replace(self, kappa=1.0)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "knots": [[a, b] for a, b in zip(self.times, self.values)],
            "kappa": self.kappa,
            "x0": self.initial_wealth,
            "T": self.horizon,
        }


TargetSpec = Union[AffineTarget, TabulatedTarget]


def at_or_beyond(x, x_star: float):
    """x >= x* up to rounding; f(T) = (1 + g T) x0 rarely lands exactly on a node."""
    return np.asarray(x, dtype=float) >= x_star - _X_STAR_SLACK * max(1.0, abs(x_star))


def target(spec: TargetSpec, t):
    return spec(t)


def boundary_left_value(spec: TargetSpec, t: float) -> float:
    """Value of the problem started from zero wealth: terminal shortfall plus running cost."""
    return spec.boundary_left_value(t)


# Artificial two-asset market and the pension fund data used in the experiments.
ARTIFICIAL_RISK_FREE = 0.0001
ARTIFICIAL_DRIFT = (0.01, 0.05)
ARTIFICIAL_VOLS = (0.01, 0.20)
ARTIFICIAL_RHO = -0.3

EMPIRICAL_RISK_FREE = 0.00001
EMPIRICAL_DRIFT = (0.03, 0.048, 0.035, 0.05)
EMPIRICAL_COVARIANCE = tuple(
    tuple(v * 1e-4 for v in row)
    for row in (
        (29.7, 18.2, -4.39, -5.41),
        (18.2, 495.0, -77.8, 119.0),
        (-4.39, -77.8, 181.0, 147.0),
        (-5.41, 119.0, 147.0, 394.0),
    )
)

# Estimated income B(t) and expense C(t), billion yen, fiscal years 2040-2055.
PENSION_TIMES = tuple(float(t) for t in range(16))
PENSION_INCOME = (
    67.286, 69.053, 70.718, 72.329, 73.887, 75.374, 76.803, 78.246,
    79.761, 81.331, 82.893, 84.437, 85.940, 87.432, 88.909, 90.322,
)
PENSION_EXPENSE = (
    61.993, 62.808, 63.611, 64.405, 65.193, 65.978, 66.766, 67.569,
    68.393, 69.241, 70.112, 70.996, 71.878, 72.759, 73.632, 74.490,
)


def artificial_market(leverage_cap: float = 1.0) -> MarketParams:
    corr = [[1.0, ARTIFICIAL_RHO], [ARTIFICIAL_RHO, 1.0]]
    return MarketParams.from_vols(ARTIFICIAL_RISK_FREE, ARTIFICIAL_DRIFT, ARTIFICIAL_VOLS, corr, leverage_cap)


def empirical_market(leverage_cap: float = 1.0) -> MarketParams:
    return MarketParams(EMPIRICAL_RISK_FREE, EMPIRICAL_DRIFT, EMPIRICAL_COVARIANCE, leverage_cap)


def pension_target(kappa: float = 1.1, horizon: float = 15.0) -> TabulatedTarget:
    return TabulatedTarget.from_income_expense(
        PENSION_TIMES, PENSION_INCOME, PENSION_EXPENSE, horizon, kappa
    )
