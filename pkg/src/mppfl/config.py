"""Flat ``section.key = value`` scenario config.

Format::

    # comment
    graph.n = 20
    server.alpha = 0.05
    baselines.random_low = auto
    sweep.values = 0.01, 0.05, 0.1

Unknown keys, duplicate keys and malformed lines are rejected with the
line number. Every value is validated before anything runs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

AUTO = "auto"
SWEEP_AXES = {
    "alpha": ("server", "alpha"),
    "hops": ("propagation", "hops"),
    "n_clients": ("graph", "n"),
    "eps0": ("solver", "eps0"),
}
DEFAULT_SWEEP_VALUES = {
    "alpha": (0.01, 0.05, 0.1),
    "hops": (1, 2, 3, 4, 5),
    "n_clients": (20, 50, 80),
    "eps0": (1e-2, 1e-4, 1e-6),
}
STRATEGIES = ("MPP", "SA", "FIXED", "RANDOM")


@dataclass(frozen=True)
class GraphConfig:
    n: int = 20
    p_low: float = 0.1
    p_high: float = 0.9
    w_low: float = 0.1
    w_high: float = 1.0
    w_min: float = 0.0


@dataclass(frozen=True)
class PropagationConfig:
    lam: float = 0.5
    hops: int = 5


@dataclass(frozen=True)
class EconomicsConfig:
    a_low: float = 0.5
    a_high: float = 1.5
    b_low: float = 0.5
    b_high: float = 1.5
    data_low: int = 50
    data_high: int = 500
    kappa: float = 1e-4
    xi: float = 1.0
    freq: float = 1.0
    local_epochs: int = 5


@dataclass(frozen=True)
class ServerConfig:
    tau: float = 0.5
    alpha: float = 0.05
    beta: float = 1.0
    mu: float = 1.0
    grad_bound: float = 1.0
    clip: float = 1.0
    dim: int = 1


@dataclass(frozen=True)
class SolverConfig:
    eps0: float = 1e-3
    max_rounds: int = 10_000
    bracket_cap: float = 1e6
    rho_min: float = 1e-9
    clamp: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    horizon: int = 10
    workers: int = 1


@dataclass(frozen=True)
class BaselineConfig:
    strategies: tuple = STRATEGIES
    fixed_rho: float = 1.0
    random_low: object = AUTO
    random_high: object = AUTO


@dataclass(frozen=True)
class FLSimConfig:
    enabled: bool = False
    dim: int = 5
    lr: float = 0.2
    condition: float = 4.0
    heterogeneity: float = 0.5
    obs_noise: float = 0.1


@dataclass(frozen=True)
class SweepConfig:
    values: tuple = ()
    seeds: tuple = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class ScenarioConfig:
    graph: GraphConfig = GraphConfig()
    propagation: PropagationConfig = PropagationConfig()
    economics: EconomicsConfig = EconomicsConfig()
    server: ServerConfig = ServerConfig()
    solver: SolverConfig = SolverConfig()
    run: RunConfig = RunConfig()
    baselines: BaselineConfig = BaselineConfig()
    flsim: FLSimConfig = FLSimConfig()
    sweep: SweepConfig = SweepConfig()

    def with_value(self, section: str, name: str, value) -> "ScenarioConfig":
        """Copy with one field replaced, revalidated."""
        sub = replace(getattr(self, section), **{name: value})
        cfg = replace(self, **{section: sub})
        validate(cfg)
        return cfg

    def items(self):
        """``(dotted_key, value)`` pairs in canonical order."""
        for sec in fields(self):
            sub = getattr(self, sec.name)
            for f in fields(sub):
                yield f"{sec.name}.{_key_name(f.name)}", getattr(sub, f.name)

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


# config key "propagation.lambda" maps onto the attribute ``lam``
_ALIASES = {"lambda": "lam"}
_REVERSE = {v: k for k, v in _ALIASES.items()}


def _key_name(attr: str) -> str:
    return _REVERSE.get(attr, attr)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(text: str, kind, key: str, line: int):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if kind is int:
            val = float(text)
            if not val.is_integer():
                raise ValueError
            return int(val)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"line {line}: {key} expects {kind.__name__}, got {text!r}", line=line, field=key) from None
    return text


def _coerce(key: str, attr: str, default, text: str, line: int):
    if key.startswith("baselines.random_"):
        if text.strip().lower() == AUTO:
            return AUTO
        return _parse_scalar(text, float, key, line)
    if key == "baselines.strategies":
        vals = tuple(s.strip().upper() for s in text.split(",") if s.strip())
        return vals
    if isinstance(default, tuple):
        kind = int if key == "sweep.seeds" else float
        return tuple(_parse_scalar(s, kind, key, line) for s in text.split(",") if s.strip())
    return _parse_scalar(text, type(default), key, line)


def parse_config(text: str) -> ScenarioConfig:
    sections = {f.name: f.default for f in fields(ScenarioConfig)}
    known = {}
    for sec, sub in sections.items():
        for f in fields(sub):
            known[f"{sec}.{_key_name(f.name)}"] = (sec, f.name, f.default)

    seen = {}
    updates: dict[str, dict] = {sec: {} for sec in sections}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", line=lineno, field=key)
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})", line=lineno, field=key)
        seen[key] = lineno
        sec, attr, default = known[key]
        updates[sec][attr] = _coerce(key, attr, default, value, lineno)

    cfg = ScenarioConfig(**{sec: replace(sub, **updates[sec]) for sec, sub in sections.items()})
    validate(cfg)
    return cfg


def load_config(path: str | Path | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    return parse_config(Path(path).read_text())


def _fail(key: str, bound: str, value):
    raise ConfigError(f"{key} = {value!r} violates {bound}", field=key)


def validate(cfg: ScenarioConfig) -> None:
    """Raise ConfigError naming the first offending field and its bound."""
    g, p, e, s, sol, run, bl, fl, sw = (
        cfg.graph, cfg.propagation, cfg.economics, cfg.server, cfg.solver,
        cfg.run, cfg.baselines, cfg.flsim, cfg.sweep,
    )
    checks = [
        ("graph.n", g.n, g.n >= 2, "N >= 2"),
        ("graph.p_low", g.p_low, 0 < g.p_low <= 1, "p_low ∈ (0,1]"),
        ("graph.p_high", g.p_high, g.p_low <= g.p_high <= 1, "p_low <= p_high <= 1"),
        ("graph.w_low", g.w_low, 0 < g.w_low <= 1, "w_low ∈ (0,1]"),
        ("graph.w_high", g.w_high, g.w_low <= g.w_high <= 1, "w_low <= w_high <= 1"),
        ("graph.w_min", g.w_min, 0 <= g.w_min < 1 / g.n, "0 <= ω̃_min < 1/N"),
        ("propagation.lambda", p.lam, 0 < p.lam < 1, "λ ∈ (0,1)"),
        ("propagation.hops", p.hops, p.hops >= 1, "K >= 1"),
        ("economics.a_low", e.a_low, e.a_low > 0, "a > 0"),
        ("economics.a_high", e.a_high, e.a_high >= e.a_low, "a_high >= a_low"),
        ("economics.b_low", e.b_low, e.b_low > 0, "b > 0"),
        ("economics.b_high", e.b_high, e.b_high >= e.b_low, "b_high >= b_low"),
        ("economics.data_low", e.data_low, e.data_low >= 1, "|D| >= 1"),
        ("economics.data_high", e.data_high, e.data_high >= e.data_low, "data_high >= data_low"),
        ("economics.kappa", e.kappa, e.kappa >= 0, "κ >= 0"),
        ("economics.xi", e.xi, e.xi >= 0, "ξ >= 0"),
        ("economics.freq", e.freq, e.freq >= 0, "f >= 0"),
        ("economics.local_epochs", e.local_epochs, e.local_epochs >= 1, "L >= 1"),
        ("server.tau", s.tau, 0 < s.tau < 1, "τ ∈ (0,1)"),
        ("server.alpha", s.alpha, 0 < s.alpha < 1, "α ∈ (0,1)"),
        ("server.beta", s.beta, s.beta > 0, "β > 0"),
        ("server.mu", s.mu, s.mu > 0, "μ > 0"),
        ("server.grad_bound", s.grad_bound, s.grad_bound > 0, "ℰ > 0"),
        ("server.clip", s.clip, s.clip > 0, "𝒮 > 0"),
        ("server.dim", s.dim, s.dim >= 1, "p >= 1"),
        ("solver.eps0", sol.eps0, sol.eps0 > 0, "ε₀ > 0"),
        ("solver.max_rounds", sol.max_rounds, sol.max_rounds >= 1, "max_rounds >= 1"),
        ("solver.bracket_cap", sol.bracket_cap, sol.bracket_cap > 0, "bracket_cap > 0"),
        ("solver.rho_min", sol.rho_min, sol.rho_min > 0, "ρ_min > 0"),
        ("run.horizon", run.horizon, run.horizon >= 1, "T >= 1"),
        ("run.workers", run.workers, run.workers >= 1, "workers >= 1"),
        ("run.seed", run.seed, run.seed >= 0, "seed >= 0"),
        ("baselines.fixed_rho", bl.fixed_rho, bl.fixed_rho > 0, "fixed ρ > 0"),
        ("flsim.dim", fl.dim, fl.dim >= 1, "dim >= 1"),
        ("flsim.lr", fl.lr, fl.lr > 0, "η > 0"),
        ("flsim.condition", fl.condition, fl.condition >= 1, "condition >= 1"),
        ("flsim.heterogeneity", fl.heterogeneity, fl.heterogeneity >= 0, "heterogeneity >= 0"),
        ("flsim.obs_noise", fl.obs_noise, fl.obs_noise >= 0, "obs_noise >= 0"),
    ]
    for key, value, ok, bound in checks:
        if isinstance(value, float) and not math.isfinite(value):
            _fail(key, "finiteness", value)
        if not ok:
            _fail(key, bound, value)

    for key in ("random_low", "random_high"):
        v = getattr(bl, key)
        if v != AUTO and not v > 0:
            _fail(f"baselines.{key}", "random range must be positive or 'auto'", v)
    if AUTO not in (bl.random_low, bl.random_high) and bl.random_high < bl.random_low:
        _fail("baselines.random_high", "random_low <= random_high", bl.random_high)
    bad = [x for x in bl.strategies if x not in STRATEGIES]
    if bad:
        _fail("baselines.strategies", f"strategies ⊆ {{{', '.join(STRATEGIES)}}}", bad[0])
    if len(set(bl.strategies)) < 2:
        _fail("baselines.strategies", "at least two distinct strategies", bl.strategies)
    if any(x < 0 for x in sw.seeds) or not sw.seeds:
        _fail("sweep.seeds", "a nonempty list of nonnegative seeds", sw.seeds)
