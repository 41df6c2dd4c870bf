"""Experiment configuration: parsing, validation, canonical serialization.

A config is a YAML (or JSON) mapping with the blocks ``market``,
``target``, ``grid``, ``sim`` and an ``out`` directory; the schema is
documented in ``docs/config.md``.  Parsing normalizes every block to its
explicit form, so ``parse(dump(parse(text))) == parse(text)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import yaml

from . import market as mm
from .errors import ConfigError, DomainError
from .hjb import GridSpec, spec_hash
from .simulate import SimConfig

SCHEMA_VERSION = 1


def _line_index(text: str) -> dict:
    """Map dotted field paths to 1-based line numbers in the source text."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    index = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                sub = f"{path}.{key.value}" if path else str(key.value)
                index[sub] = key.start_mark.line + 1
                walk(value, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                sub = f"{path}[{i}]"
                index[sub] = item.start_mark.line + 1
                walk(item, sub)

    if root is not None:
        walk(root, "")
    return index


class _Reader:
    """Typed access to one block with field-path error messages."""

    def __init__(self, data, path, lines):
        if not isinstance(data, dict):
            raise self._error(path, "must be a mapping", lines)
        self.data = dict(data)
        self.path = path
        self.lines = lines
        self.used = set()

    @staticmethod
    def _error(path, message, lines):
        line = lines.get(path)
        where = f"line {line}: " if line else ""
        return ConfigError(f"{where}{path}: {message}")

    def error(self, key, message):
        return self._error(f"{self.path}.{key}", message, self.lines)

    def has(self, key):
        return key in self.data

    def get(self, key, kind, default=...):
        self.used.add(key)
        if key not in self.data or self.data[key] is None:
            if default is ...:
                raise self.error(key, "is required")
            return default
        value = self.data[key]
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
                return value
            if kind is int:
                if isinstance(value, bool) or float(value) != int(value):
                    raise TypeError
                return int(value)
            if kind is float:
                if isinstance(value, bool):
                    raise TypeError
                out = float(value)
                if not math.isfinite(out):
                    raise ValueError
                return out
            if kind is str:
                if not isinstance(value, str):
                    raise TypeError
                return value
            if kind == "floats":
                out = tuple(float(v) for v in value)
                if not all(math.isfinite(v) for v in out):
                    raise ValueError
                return out
            if kind == "matrix":
                out = tuple(tuple(float(v) for v in row) for row in value)
                if not all(math.isfinite(v) for row in out for v in row):
                    raise ValueError
                return out
        except (TypeError, ValueError):
            expected = {"floats": "list of numbers", "matrix": "list of lists of numbers"}.get(kind, kind.__name__)
            raise self.error(key, f"expected {expected}, got {value!r}") from None
        raise AssertionError(kind)

    def finish(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise self.error(extra[0], "unknown field")


@dataclass(frozen=True)
class MarketBlock:
    risk_free: float
    drift: tuple
    covariance: tuple
    leverage_cap: float

    @classmethod
    def read(cls, r: _Reader) -> "MarketBlock":
        cap = r.get("leverage_cap", float)
        preset = r.get("preset", str, None)
        if preset is not None:
            if preset not in ("artificial", "empirical"):
                raise r.error("preset", f"unknown market preset {preset!r}")
            params = mm.artificial_market(cap) if preset == "artificial" else mm.empirical_market(cap)
            r.finish()
            return cls.from_params(params)
        risk_free = r.get("r", float)
        drift = r.get("b", "floats")
        if r.has("sigma_cov"):
            cov = r.get("sigma_cov", "matrix")
        else:
            vols = r.get("vols", "floats")
            corr = r.get("corr", "matrix")
            if len(vols) != len(drift):
                raise r.error("vols", f"expected {len(drift)} entries")
            if len(corr) != len(vols) or any(len(row) != len(vols) for row in corr):
                raise r.error("corr", f"expected a {len(vols)}x{len(vols)} matrix")
            cov = tuple(tuple(vols[i] * vols[j] * corr[i][j] for j in range(len(vols))) for i in range(len(vols)))
        r.finish()
        block = cls(risk_free, drift, cov, cap)
        try:
            block.params()
        except ValueError as exc:
            raise r._error(r.path, str(exc), r.lines) from None
        return block

    @classmethod
    def from_params(cls, p: mm.MarketParams) -> "MarketBlock":
        return cls(
            float(p.risk_free),
            tuple(map(float, p.drift)),
            tuple(tuple(map(float, row)) for row in p.covariance),
            float(p.leverage_cap),
        )

    def params(self) -> mm.MarketParams:
        return mm.MarketParams(self.risk_free, self.drift, self.covariance, self.leverage_cap)

    def to_dict(self):
        return {
            "r": self.risk_free,
            "b": list(self.drift),
            "sigma_cov": [list(row) for row in self.covariance],
            "leverage_cap": self.leverage_cap,
        }


@dataclass(frozen=True)
class TargetBlock:
    variant: str
    horizon: float
    initial_wealth: float = None
    required_return: float = None
    margin: float = 0.0
    times: tuple = None
    values: tuple = None
    kappa: float = 1.0

    @classmethod
    def read(cls, r: _Reader) -> "TargetBlock":
        variant = r.get("variant", str).lower()
        if variant == "affine":
            block = cls(
                "affine",
                r.get("T", float),
                initial_wealth=r.get("x0", float),
                required_return=r.get("rbar", float),
                margin=r.get("margin", float, 0.0),
            )
        elif variant == "tabulated":
            preset = r.get("preset", str, None)
            if preset is not None and preset != "pension":
                raise r.error("preset", f"unknown target preset {preset!r}")
            if preset == "pension":
                times = mm.PENSION_TIMES
                values = tuple(b - c for b, c in zip(mm.PENSION_INCOME, mm.PENSION_EXPENSE))
            else:
                knots = r.get("knots", "matrix")
                if any(len(k) != 2 for k in knots):
                    raise r.error("knots", "each knot must be a [t, f] pair")
                times = tuple(k[0] for k in knots)
                values = tuple(k[1] for k in knots)
            block = cls(
                "tabulated",
                r.get("T", float, float(times[-1])),
                initial_wealth=r.get("x0", float, None),
                times=tuple(times),
                values=tuple(values),
                kappa=r.get("kappa", float, 1.0),
            )
        else:
            raise r.error("variant", f"expected 'affine' or 'tabulated', got {variant!r}")
        r.finish()
        try:
            block.spec()
        except (ValueError, DomainError) as exc:
            raise r._error(r.path, str(exc), r.lines) from None
        return block

    def spec(self) -> mm.TargetSpec:
        if self.variant == "affine":
            return mm.AffineTarget(self.initial_wealth, self.required_return, self.horizon, self.margin)
        return mm.TabulatedTarget(self.times, self.values, self.horizon, self.kappa, self.initial_wealth)

    def to_dict(self):
        if self.variant == "affine":
            return {
                "variant": "affine",
                "x0": self.initial_wealth,
                "rbar": self.required_return,
                "margin": self.margin,
                "T": self.horizon,
            }
        out = {
            "variant": "tabulated",
            "knots": [[t, v] for t, v in zip(self.times, self.values)],
            "kappa": self.kappa,
            "T": self.horizon,
        }
        if self.initial_wealth is not None:
            out["x0"] = self.initial_wealth
        return out


def _read_grid(r: _Reader) -> GridSpec:
    defaults = GridSpec()
    grid_kwargs = dict(
        h_x=r.get("h_x", float, defaults.h_x),
        extra_nodes=r.get("extra_nodes", int, defaults.extra_nodes),
        steps=r.get("M", int, defaults.steps),
        shape_ratio=r.get("shape_ratio", float, defaults.shape_ratio),
    )
    r.finish()
    try:
        return GridSpec(**grid_kwargs)
    except ConfigError as exc:
        raise r._error(r.path, str(exc), r.lines) from None


def _grid_dict(g: GridSpec):
    return {"h_x": g.h_x, "extra_nodes": g.extra_nodes, "M": g.steps, "shape_ratio": g.shape_ratio}


def _read_sim(r: _Reader) -> SimConfig:
    defaults = SimConfig()
    kwargs = dict(
        paths=r.get("paths", int, defaults.paths),
        rebalance=r.get("rebalance", str, defaults.rebalance.name.lower()),
        seed=r.get("seed", int, defaults.seed),
        antithetic=r.get("antithetic", bool, defaults.antithetic),
        threads=r.get("threads", int, defaults.threads),
        measure=r.get("measure", str, defaults.measure),
    )
    horizon = r.get("horizon", float, None)
    r.finish()
    try:
        cfg = SimConfig(**kwargs)
    except ConfigError as exc:
        raise r._error(r.path, str(exc), r.lines) from None
    return cfg, horizon


def _sim_dict(s: SimConfig):
    return {
        "paths": s.paths,
        "rebalance": s.rebalance.name.lower(),
        "seed": s.seed,
        "antithetic": s.antithetic,
        "threads": s.threads,
        "measure": s.measure,
    }


@dataclass(frozen=True)
class ExperimentConfig:
    market: MarketBlock
    target: TargetBlock
    grid: GridSpec = field(default_factory=GridSpec)
    sim: SimConfig = field(default_factory=SimConfig)
    out: str = "out"
    name: str = ""

    # conversion ------------------------------------------------------------

    def market_params(self) -> mm.MarketParams:
        return self.market.params()

    def target_spec(self) -> mm.TargetSpec:
        return self.target.spec()

    def to_dict(self) -> dict:
        out = {
            "schema": SCHEMA_VERSION,
            "market": self.market.to_dict(),
            "target": self.target.to_dict(),
            "grid": _grid_dict(self.grid),
            "sim": _sim_dict(self.sim),
            "out": self.out,
        }
        if self.name:
            out["name"] = self.name
        return out

    def dumps(self, fmt: str = "yaml") -> str:
        if fmt == "json":
            return json.dumps(self.to_dict(), indent=2) + "\n"
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def solve_hash(self) -> str:
        """Hash of everything the value surface depends on."""
        return spec_hash({"market": self.market.to_dict(), "target": self.target.to_dict(), "grid": _grid_dict(self.grid)})

    def with_overrides(self, out=None, seed=None, paths=None, threads=None) -> "ExperimentConfig":
        sim = self.sim
        changes = {k: v for k, v in (("seed", seed), ("paths", paths), ("threads", threads)) if v is not None}
        if changes:
            try:
                sim = replace(sim, **changes)
            except ConfigError as exc:
                raise ConfigError(f"command-line override: {exc}") from None
        return replace(self, sim=sim, out=out if out is not None else self.out)

    def equivalent(self, other: "ExperimentConfig") -> bool:
        return self.to_dict() == other.to_dict()


def from_dict(data, lines=None) -> ExperimentConfig:
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    top = _Reader(data, "", lines)
    top.path = ""
    schema = top.get("schema", int, SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"schema: unsupported version {schema} (expected {SCHEMA_VERSION})")

    def block(key):
        top.used.add(key)
        if key not in data:
            if key in ("grid", "sim"):
                return _Reader({}, key, lines)
            raise ConfigError(f"{key}: block is required")
        return _Reader(data[key], key, lines)

    market = MarketBlock.read(block("market"))
    target = TargetBlock.read(block("target"))
    grid = _read_grid(block("grid"))
    sim, sim_horizon = _read_sim(block("sim"))
    out = top.get("out", str, "out")
    name = top.get("name", str, "")
    extra = sorted(set(data) - top.used)
    if extra:
        raise _Reader._error(extra[0], "unknown field", lines)

    # cross-field checks
    if sim_horizon is not None and abs(sim_horizon - target.horizon) > 1e-12:
        raise _Reader._error("sim.horizon", f"{sim_horizon} differs from target.T {target.horizon}", lines)
    spec = target.spec()
    nodes = grid.nodes(spec.x_star)
    if nodes[-1] < spec.x_star - 1e-9 * max(1.0, spec.x_star):
        raise _Reader._error("grid", f"nodes end at {nodes[-1]} below x* = {spec.x_star}", lines)
    return ExperimentConfig(market, target, grid, sim, out, name)


def loads(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigError(f"{where}{exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(str(exc)) from None
    return from_dict(data, _line_index(text))


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def affine_config(required_return, margin, leverage_cap, horizon=10.0, initial_wealth=100.0, **kw) -> ExperimentConfig:
    """Artificial two-asset market with an affine target."""
    market = MarketBlock.from_params(mm.artificial_market(leverage_cap))
    target = TargetBlock("affine", float(horizon), float(initial_wealth), float(required_return), float(margin))
    return ExperimentConfig(market, target, **kw)


def pension_config(leverage_cap, kappa=1.1, horizon=15.0, **kw) -> ExperimentConfig:
    market = MarketBlock.from_params(mm.empirical_market(leverage_cap))
    values = tuple(b - c for b, c in zip(mm.PENSION_INCOME, mm.PENSION_EXPENSE))
    target = TargetBlock("tabulated", float(horizon), times=mm.PENSION_TIMES, values=values, kappa=float(kappa))
    return ExperimentConfig(market, target, **kw)
