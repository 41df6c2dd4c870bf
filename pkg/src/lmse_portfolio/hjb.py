"""Backward explicit collocation solve of the tracking HJB equation.

The value function lives on equispaced wealth nodes x_i = i * h_x
(x_0 = 0 is the left boundary), extended a few nodes past the maximal
target x*.  Each step fits the node values with multiquadric RBFs, takes
the interpolant's derivatives at the nodes, minimizes the Hamiltonian per
node, and advances one explicit Euler step backward in time before
re-imposing the boundary values.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .errors import BlowUpError, ConfigError, HashMismatchError, QPConvergenceError
from .market import AffineTarget, MarketParams, TabulatedTarget, TargetSpec, at_or_beyond
from .qp import HamiltonianQP
from .rbf import Interpolant, NodeSet

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "# lmse-portfolio surface"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Collocation grid: node spacing, nodes beyond x*, number of time steps.

    The RBF shape parameter is ``shape_ratio * h_x``.
    """

    h_x: float = 0.5
    extra_nodes: int = 5
    steps: int = 6000
    shape_ratio: float = 0.5

    def __post_init__(self):
        if self.h_x <= 0 or self.shape_ratio <= 0:
            raise ConfigError("h_x and shape_ratio must be positive")
        if self.extra_nodes < 0 or self.steps < 1:
            raise ConfigError("extra_nodes must be >= 0 and steps >= 1")

    @property
    def shape(self) -> float:
        return self.shape_ratio * self.h_x

    def node_count(self, x_star: float) -> int:
        return int(math.ceil(x_star / self.h_x - 1e-9)) + 1 + self.extra_nodes

    def nodes(self, x_star: float) -> np.ndarray:
        return np.arange(self.node_count(x_star)) * self.h_x

    def time_step(self, horizon: float) -> float:
        return horizon / self.steps

    def to_dict(self) -> dict:
        return asdict(self)


def spec_hash(obj: dict) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def target_from_dict(d: dict) -> TargetSpec:
    if d["variant"] == "affine":
        return AffineTarget(d["x0"], d["rbar"], d["T"], d.get("margin", 0.0))
    knots = d["knots"]
    return TabulatedTarget(
        tuple(k[0] for k in knots), tuple(k[1] for k in knots), d["T"], d.get("kappa", 1.0), d.get("x0")
    )


@dataclass
class SolveReport:
    max_condition: float = 0.0
    curvature_clamps: int = 0
    steps: int = 0
    wall_time: float = 0.0
    node_count: int = 0
    x_star: float = 0.0
    # per stored step: (t_k, min d2v, max d2v) over interior nodes below x*
    curvature_range: list = field(default_factory=list)
    boundary_sign_changes: int = 0
    min_curvature_t0: float = 0.0
    max_curvature_t0: float = 0.0

    @property
    def boundary_oscillation(self) -> bool:
        return self.boundary_sign_changes > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["boundary_oscillation"] = self.boundary_oscillation
        return d


class ValueSurface:
    """Stored rows of the solved value function on the collocation nodes.

    ``steps`` holds the stored time indices k (ascending) and ``rows`` the
    matching node values.  Interpolants are re-fitted on demand.
    """

    def __init__(self, grid: GridSpec, target: TargetSpec, steps, rows, market=None):
        self.grid = grid
        self.target = target
        self.market = market
        self.nodes = grid.nodes(target.x_star)
        self.steps = np.asarray(steps, dtype=int)
        self.rows = np.asarray(rows, dtype=float)
        if self.rows.shape != (self.steps.size, self.nodes.size):
            raise ConfigError(
                f"surface rows {self.rows.shape} do not match {self.steps.size} steps x {self.nodes.size} nodes"
            )
        if np.any(np.diff(self.steps) <= 0):
            raise ConfigError("stored steps must be strictly increasing")
        self._interp = {}

    @property
    def horizon(self) -> float:
        return self.target.horizon

    @property
    def time_step(self) -> float:
        return self.grid.time_step(self.horizon)

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.time_step

    @property
    def x_star(self) -> float:
        return self.target.x_star

    @cached_property
    def basis(self) -> NodeSet:
        return NodeSet(self.nodes, self.grid.shape)

    def grid_step_at(self, t: float) -> int:
        return int(math.floor(t / self.time_step + 1e-9))

    def row_index(self, t: float) -> int:
        """Index into ``rows`` of the latest stored step with t_k <= t."""
        k = self.grid_step_at(t)
        pos = int(np.searchsorted(self.steps, k, side="right")) - 1
        if pos < 0:
            raise ConfigError(f"no stored surface row at or before t={t}")
        return pos

    def has_step(self, k: int) -> bool:
        pos = np.searchsorted(self.steps, k)
        return pos < self.steps.size and self.steps[pos] == k

    def interpolant(self, pos: int) -> Interpolant:
        if pos not in self._interp:
            self._interp[pos] = self.basis.fit(self.rows[pos])
        return self._interp[pos]

    def at(self, t: float) -> Interpolant:
        return self.interpolant(self.row_index(t))

    def values_at(self, t: float) -> np.ndarray:
        return self.rows[self.row_index(t)]

    # checkpoint persistence -------------------------------------------------

    def header(self, config_hash: str = None) -> dict:
        target = self.target.to_dict()
        return {
            "version": CHECKPOINT_VERSION,
            "grid": self.grid.to_dict(),
            "target": target,
            "target_hash": spec_hash(target),
            "market": self.market.to_dict() if self.market is not None else None,
            "config_hash": config_hash,
            "nodes": int(self.nodes.size),
        }

    def dumps(self, config_hash: str = None) -> str:
        buf = io.StringIO()
        buf.write(f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n")
        buf.write("# " + json.dumps(self.header(config_hash), sort_keys=True) + "\n")
        buf.write("k,t_k," + ",".join(f"v{i}" for i in range(self.nodes.size)) + "\n")
        for k, row in zip(self.steps, self.rows):
            # repr round-trips binary64 exactly
            buf.write(f"{int(k)},{float(k * self.time_step)!r}," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    def save(self, path, config_hash: str = None):
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            fh.write(self.dumps(config_hash))
        os.replace(tmp, path)

    @classmethod
    def loads(cls, text: str):
        lines = text.splitlines()
        if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
            raise ConfigError("not a surface checkpoint")
        header = json.loads(lines[1][2:])
        if header.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {header.get('version')}")
        target = target_from_dict(header["target"])
        if spec_hash(header["target"]) != header["target_hash"]:
            raise HashMismatchError("checkpoint target hash does not match its target block")
        market = None
        if header.get("market"):
            mk = header["market"]
            market = MarketParams(mk["r"], mk["b"], mk["sigma_cov"], mk["leverage_cap"])
        steps, rows = [], []
        for line in lines[3:]:
            if not line.strip():
                continue
            parts = line.split(",")
            steps.append(int(parts[0]))
            rows.append([float(v) for v in parts[2:]])
        surface = cls(GridSpec(**header["grid"]), target, steps, np.array(rows), market)
        return surface, header

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())


def terminal_values(spec: TargetSpec, grid_or_nodes) -> np.ndarray:
    """0.5 * (f(T) - x)_+^2 at each node; exactly zero at and beyond x*."""
    if isinstance(grid_or_nodes, GridSpec):
        nodes = grid_or_nodes.nodes(spec.x_star)
    else:
        nodes = np.asarray(grid_or_nodes, dtype=float)
    gap = np.maximum(spec(spec.horizon) - nodes, 0.0)
    out = 0.5 * gap * gap
    out[at_or_beyond(nodes, spec.x_star)] = 0.0
    return out


def boundary_run(x, v_xx, x_star: float) -> np.ndarray:
    """Mask of the contiguous run of negative-curvature nodes ending just below x*.

    Next to the pinned zeros at x* both derivatives are at noise level, so
    the sign of v_x there says nothing about the best direction.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape, dtype=bool)
    below = np.flatnonzero((x > 0) & ~at_or_beyond(x, x_star))
    for i in below[::-1]:
        if v_xx[i] >= 0.0:
            break
        out[i] = True
    return out


def hamiltonian(x, v_x, v_xx, t, market: MarketParams, spec: TargetSpec, solver: HamiltonianQP):
    """Minimized generator at the collocation nodes x given first and second derivatives.

    Negative curvature is clamped to zero before the QP is assembled, which
    leaves a linear program.  On the run of clamped nodes adjacent to x*
    (see ``boundary_run``) the linear term is dropped as well, so those
    nodes hold no risky assets instead of the leverage-cap corner.
    Returns (H, minimizers, clamped mask).
    """
    x = np.asarray(x, dtype=float)
    clamped = v_xx < 0.0
    alpha = x * x * np.where(clamped, 0.0, v_xx)
    beta = np.where(boundary_run(x, v_xx, spec.x_star), 0.0, x * v_x)
    pi, obj = solver.solve(alpha, beta)
    gap = np.maximum(spec(t) - x, 0.0)
    H = market.risk_free * x * v_x + obj + gap * gap / (2.0 * spec.horizon)
    return H, pi, clamped & (x > 0)


def hamiltonian_nodes(interp: Interpolant, t, market: MarketParams, spec: TargetSpec, nodes, solver=None):
    """Node-wise Hamiltonian of an interpolated value function.

    Returns the Hamiltonian vector and the (N, m) array of minimizers.
    """
    mk = market.at(t)
    if solver is None:
        solver = HamiltonianQP(mk.covariance, mk.excess_drift(), mk.leverage_cap)
    _, v_x, v_xx = interp.derivatives(nodes)
    H, pi, _ = hamiltonian(nodes, v_x, v_xx, t, mk, spec, solver)
    return H, pi


class _Stepper:
    """Shared state of one backward solve: node set, QP solvers and boundary data."""

    def __init__(self, market, spec: TargetSpec, grid: GridSpec):
        self.market = market
        self.spec = spec
        self.grid = grid
        self.nodes = grid.nodes(spec.x_star)
        self.basis = NodeSet(self.nodes, grid.shape)
        self.h_t = grid.time_step(spec.horizon)
        self.right = at_or_beyond(self.nodes, spec.x_star)
        self.interior = (self.nodes > 0) & ~self.right
        self._solver_key = None
        self._solver = None

    def solver_for(self, mk: MarketParams) -> HamiltonianQP:
        key = (mk.covariance.tobytes(), mk.drift.tobytes(), mk.risk_free, mk.leverage_cap)
        if key != self._solver_key:
            self._solver = HamiltonianQP(mk.covariance, mk.excess_drift(), mk.leverage_cap)
            self._solver_key = key
        return self._solver

    def derivatives(self, values):
        xi = self.basis.solve(values)
        return xi, self.basis.d1_matrix @ xi, self.basis.d2_matrix @ xi

    def step(self, values, k):
        """Row k -> row k-1.  Returns (new values, clamped count, d2v at nodes)."""
        t = k * self.h_t
        mk = self.market.at(t)
        xi, v_x, v_xx = self.derivatives(values)
        H, _, clamped = hamiltonian(self.nodes, v_x, v_xx, t, mk, self.spec, self.solver_for(mk))
        self._check_finite(H, k)
        xi_h = self.basis.solve(H)
        # dV/dt = -H, stepping backward adds h*H
        new = self.basis.gram @ xi + self.h_t * (self.basis.gram @ xi_h)
        t_prev = (k - 1) * self.h_t
        new[0] = self.spec.boundary_left_value(t_prev)
        new[self.right] = 0.0
        self._check_finite(new, k)
        return new, int(clamped[self.interior].sum()), v_xx

    @staticmethod
    def _check_finite(values, k):
        bad = ~np.isfinite(values)
        if bad.any():
            node = int(np.flatnonzero(bad)[0])
            raise BlowUpError(f"non-finite value at step {k}, node {node}; time step too large?", k, node)


def step_backward(surface_values: np.ndarray, k: int, market, spec: TargetSpec, grid: GridSpec) -> np.ndarray:
    """One explicit step from row k to row k-1 including boundary overwrite."""
    if not 1 <= k <= grid.steps:
        raise ValueError(f"step index {k} outside 1..{grid.steps}")
    new, _, _ = _Stepper(market, spec, grid).step(np.asarray(surface_values, dtype=float), k)
    return new


def _count_sign_changes(values):
    s = np.sign(values)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def curvature_diagnostics(stepper: _Stepper, values, window: int = 5):
    """Sign changes of d2v over the last ``window`` interior nodes below x*, plus min/max."""
    _, _, v_xx = stepper.derivatives(values)
    below = np.flatnonzero(stepper.interior)
    last = below[-window:]
    inner = v_xx[stepper.interior]
    return _count_sign_changes(v_xx[last]), float(inner.min()), float(inner.max())


def solve_hjb(
    market,
    spec: TargetSpec,
    grid: GridSpec,
    checkpoint_every: int = None,
    store_times=(),
    progress=None,
):
    """Run the backward solve; returns (ValueSurface, SolveReport).

    Rows are kept at t=0, t=T, every ``checkpoint_every`` steps, and at the
    grid step at or below each time in ``store_times``.
    """
    started = time.perf_counter()
    stepper = _Stepper(market, spec, grid)
    M = grid.steps
    h_t = stepper.h_t
    keep = {0, M}
    if checkpoint_every:
        keep.update(range(0, M + 1, int(checkpoint_every)))
    for tau in store_times:
        if tau < -1e-12 or tau > spec.horizon + 1e-12:
            raise ConfigError(f"store time {tau} outside [0, {spec.horizon}]")
        keep.add(min(M, int(math.floor(tau / h_t + 1e-9))))

    report = SolveReport(
        max_condition=stepper.basis.condition,
        steps=M,
        node_count=int(stepper.nodes.size),
        x_star=float(spec.x_star),
    )
    rows = {}
    values = terminal_values(spec, stepper.nodes)
    rows[M] = values.copy()
    for k in range(M, 0, -1):
        try:
            values, clamps, v_xx = stepper.step(values, k)
        except QPConvergenceError as exc:
            raise QPConvergenceError(f"step {k}: {exc}", exc.node) from exc
        report.curvature_clamps += clamps
        if k in keep:
            inner = v_xx[stepper.interior]
            report.curvature_range.append((k * h_t, float(inner.min()), float(inner.max())))
        if k - 1 in keep:
            rows[k - 1] = values.copy()
        if progress is not None and k % max(1, M // 20) == 0:
            progress(M - k, M)

    report.boundary_sign_changes, report.min_curvature_t0, report.max_curvature_t0 = curvature_diagnostics(
        stepper, rows[0]
    )
    report.curvature_range.sort()
    report.wall_time = time.perf_counter() - started
    steps = sorted(rows)
    surface = ValueSurface(
        grid, spec, steps, np.array([rows[k] for k in steps]), market if isinstance(market, MarketParams) else None
    )
    surface.__dict__["basis"] = stepper.basis
    log.info(
        "solved %d steps on %d nodes in %.1fs (clamps=%d, sign changes near x*=%d)",
        M, stepper.nodes.size, report.wall_time, report.curvature_clamps, report.boundary_sign_changes,
    )
    return surface, report
