"""Scenario orchestration: build an instance, solve it, compare, sweep, write CSVs."""

from __future__ import annotations

import contextlib
import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import DEFAULT_SWEEP_VALUES, STRATEGIES, SWEEP_AXES, AUTO, ScenarioConfig
from .equilibrium import (
    EquilibriumReport,
    PoAReport,
    fixed_point,
    feasible_bounds,
    poa_analysis,
    sa_equilibrium,
)
from .errors import DomainError, MPPFLError, ParameterError
from .flsim import TrainingTrace, make_task, run_federated, write_trace
from .graph import (
    RNG_ALGORITHM,
    PropagationModel,
    RowStochasticMatrix,
    WeightedDigraph,
    generate_er_graph,
    make_rng,
    propagation_coefficients,
    row_normalize,
)
from .mechanism import (
    ClientProfile,
    ServerModelParams,
    client_utility,
    computation_cost,
    epsilons,
    roster,
    server_cost,
    social_welfare,
)
from .graph import external_risk

log = logging.getLogger(__name__)

# sub-stream ids under the master seed; graph and economics are separate so a
# graph loaded from file leaves the economic draws untouched
STREAM_GRAPH, _STREAM_RANDOM, _STREAM_FLSIM, _STREAM_ECONOMICS = 0, 1, 2, 3


@contextlib.contextmanager
def stage(name: str):
    """Tag any package error escaping the block with the pipeline stage."""
    try:
        yield
    except MPPFLError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        raise


@dataclass(frozen=True, eq=False)
class Instance:
    graph: WeightedDigraph
    normalized: RowStochasticMatrix
    model: PropagationModel
    profiles: tuple[ClientProfile, ...]
    server: ServerModelParams
    eps: np.ndarray

    @property
    def data_sizes(self) -> np.ndarray:
        return np.array([p.data_size for p in self.profiles])


def build_instance(cfg: ScenarioConfig, graph: WeightedDigraph | None = None) -> Instance:
    """Draw graph and client economics from the master seed."""
    g = cfg.graph
    with stage("graph"):
        if graph is None:
            graph = generate_er_graph(g.n, make_rng(cfg.run.seed, STREAM_GRAPH), (g.p_low, g.p_high), (g.w_low, g.w_high))
        elif graph.n != g.n:
            raise ParameterError(f"graph file has {graph.n} clients but graph.n = {g.n}")
        normalized = row_normalize(graph, g.w_min)
    with stage("propagation"):
        model = propagation_coefficients(normalized, cfg.propagation.lam, cfg.propagation.hops)
    e = cfg.economics
    n = graph.n
    rng = make_rng(cfg.run.seed, _STREAM_ECONOMICS)
    a = rng.uniform(e.a_low, e.a_high, size=n)
    b = rng.uniform(e.b_low, e.b_high, size=n)
    sizes = rng.integers(e.data_low, e.data_high + 1, size=n)
    profiles = tuple(roster(a, b, sizes, e.kappa, e.xi, e.freq, e.local_epochs))
    s = cfg.server
    server = ServerModelParams(
        tau=s.tau, alpha=s.alpha, beta=s.beta, mu=s.mu, grad_bound=s.grad_bound, clip=s.clip, dim=s.dim, big_n=n
    )
    return Instance(graph, normalized, model, profiles, server, epsilons(server, profiles))


def solve_instance(cfg: ScenarioConfig, inst: Instance) -> EquilibriumReport:
    sol = cfg.solver
    with stage("fixed_point"):
        return fixed_point(
            inst.model,
            inst.profiles,
            inst.server,
            cfg.run.horizon,
            eps0=sol.eps0,
            max_rounds=sol.max_rounds,
            rho_min=sol.rho_min,
            clamp=sol.clamp,
            bracket_cap=sol.bracket_cap,
        )


def train(cfg: ScenarioConfig, inst: Instance, budgets) -> TrainingTrace:
    """Run the synthetic FL task under a ``(T, N)`` budget schedule."""
    fl = cfg.flsim
    rng = make_rng(cfg.run.seed, _STREAM_FLSIM)
    with stage("flsim"):
        task = make_task(inst.data_sizes, fl.dim, rng, fl.condition, fl.heterogeneity, fl.obs_noise)
        params = task.model_params(inst.server)
        eps = epsilons(params, inst.profiles)
        return run_federated(
            task, budgets, fl.lr, cfg.economics.local_epochs, cfg.run.horizon, params, rng, eps, inst.data_sizes
        )


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    config: ScenarioConfig
    instance: Instance
    report: EquilibriumReport
    poa: PoAReport
    trace: TrainingTrace | None = None

    def summary(self) -> dict:
        rep, poa = self.report, self.poa
        return {
            "server_cost": float(rep.server_costs.sum()),
            "welfare": rep.welfare,
            "welfare_sw": poa.welfare_sw,
            "welfare_sa": poa.welfare_sa,
            "poa_mpp_true": poa.poa_mpp_true,
            "poa_sa_true": poa.poa_sa_true,
            "poa_mpp_closed_form": poa.poa_mpp_closed_form,
            "rounds": rep.max_rounds,
            "final_residual": rep.final_residual,
            "mean_reward": float(rep.rewards.mean()),
            "mean_rho": float(rep.budgets.mean()),
        }


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None, graph: WeightedDigraph | None = None) -> ScenarioResult:
    """Graph -> propagation -> fixed point -> baselines -> PoA (-> FL training).

    Files are written only after every stage succeeded.
    """
    inst = build_instance(cfg, graph)
    report = solve_instance(cfg, inst)
    with stage("poa"):
        poa = poa_analysis(report, inst.model, inst.profiles, cfg.server.alpha, cfg.graph.w_min, cfg.solver.rho_min)
    trace = train(cfg, inst, report.budgets) if cfg.flsim.enabled else None
    result = ScenarioResult(cfg, inst, report, poa, trace)
    if out_dir is not None:
        write_run(result, out_dir)
    return result


# -- strategy comparison --------------------------------------------------------


@dataclass(frozen=True)
class StrategyOutcome:
    strategy: str
    rewards: np.ndarray
    budgets: np.ndarray
    server_cost: float
    welfare: float
    utility_total: float
    final_excess: float | None = None


def _outcome(name, rewards, budgets, inst: Instance, alpha, tau) -> StrategyOutcome:
    risk = external_risk(inst.model, budgets)
    cost = sum(server_cost(rewards[k], budgets[k], inst.eps, tau, k + 1) for k in range(len(rewards)))
    util = sum(
        client_utility(rewards[k], budgets[k, i], risk[k, i], p, alpha)
        for k in range(len(rewards))
        for i, p in enumerate(inst.profiles)
    )
    return StrategyOutcome(
        strategy=name,
        rewards=rewards,
        budgets=budgets,
        server_cost=float(cost),
        welfare=social_welfare(rewards, budgets, inst.model, inst.profiles, alpha),
        utility_total=float(util),
    )


def random_range(cfg: ScenarioConfig, inst: Instance, rewards) -> tuple[float, float]:
    """Configured RANDOM range; ``auto`` ends take the instance's feasible box."""
    bl = cfg.baselines
    lo, hi = bl.random_low, bl.random_high
    if AUTO in (lo, hi):
        try:
            box_lo, box_hi = feasible_bounds(rewards, inst.profiles, inst.model, cfg.server.alpha)
        except DomainError:
            # non-contractive: fall back to the social-agnostic span
            a = np.array([p.a for p in inst.profiles])
            b = np.array([p.b for p in inst.profiles])
            box_lo, box_hi = cfg.solver.rho_min, float(np.max((np.max(rewards) - b) / (2 * a)))
        lo = max(box_lo, cfg.solver.rho_min) if lo == AUTO else lo
        hi = box_hi if hi == AUTO else hi
    if not hi >= lo:
        raise DomainError(f"RANDOM budget range is empty: [{lo}, {hi}]")
    return float(lo), float(hi)


def compare_strategies(cfg: ScenarioConfig, strategies=None, result: ScenarioResult | None = None) -> list[StrategyOutcome]:
    """Server cost and welfare of each strategy on one instance.

    MPP and SA let the server price its own game. FIXED and RANDOM budgets
    are imposed, so they face the MPP equilibrium reward schedule.
    """
    strategies = tuple(cfg.baselines.strategies if strategies is None else strategies)
    if len(set(strategies)) < 2:
        raise ParameterError("compare_strategies needs at least two strategies")
    unknown = [s for s in strategies if s not in STRATEGIES]
    if unknown:
        raise ParameterError(f"unknown strategy {unknown[0]!r}")
    if result is None:
        result = run_scenario(cfg)
    inst, rep = result.instance, result.report
    alpha, tau = cfg.server.alpha, cfg.server.tau
    horizon, n = rep.budgets.shape
    r_star = rep.rewards

    out = []
    for name in strategies:
        with stage(f"compare:{name}"):
            if name == "MPP":
                rewards, budgets = r_star, rep.budgets
            elif name == "SA":
                pairs = [sa_equilibrium(inst.profiles, inst.server, inst.eps, t, cfg.solver.rho_min, cfg.solver.bracket_cap) for t in range(1, horizon + 1)]
                rewards = np.array([p[0] for p in pairs])
                budgets = np.vstack([p[1] for p in pairs])
            elif name == "FIXED":
                rewards, budgets = r_star, np.full((horizon, n), cfg.baselines.fixed_rho)
            else:
                lo, hi = random_range(cfg, inst, r_star)
                rewards = r_star
                budgets = make_rng(cfg.run.seed, _STREAM_RANDOM).uniform(lo, hi, size=(horizon, n))
            item = _outcome(name, rewards, budgets, inst, alpha, tau)
            if cfg.flsim.enabled:
                trace = train(cfg, inst, budgets)
                item = StrategyOutcome(**{**item.__dict__, "final_excess": trace.final_excess})
        out.append(item)
    return out


# -- sweeps -------------------------------------------------------------------


SWEEP_METRICS = ("server_cost", "welfare", "welfare_sw", "welfare_sa", "poa_mpp_true", "poa_sa_true", "poa_mpp_closed_form", "poa_closed_form_gap", "rounds")


def axis_config(cfg: ScenarioConfig, axis: str, value, seed: int) -> ScenarioConfig:
    if axis not in SWEEP_AXES:
        raise ParameterError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    section, name = SWEEP_AXES[axis]
    if name in ("hops", "n"):
        if float(value) != int(value):
            raise ParameterError(f"axis {axis} takes integers, got {value}")
        value = int(value)
    else:
        value = float(value)
    return cfg.with_value(section, name, value).with_value("run", "seed", int(seed))


def _sweep_point(args):
    cfg, axis, value, seed = args
    row = {"value": value, "seed": seed, "error": ""}
    try:
        res = run_scenario(axis_config(cfg, axis, value, seed))
        row.update(res.summary())
        row["poa_closed_form_gap"] = abs(row["poa_mpp_closed_form"] - 1.0)
    except MPPFLError as exc:
        where = getattr(exc, "stage", None)
        row["error"] = f"[{where}] {exc}" if where else str(exc)
    return row


@dataclass(frozen=True)
class SweepResult:
    axis: str
    values: tuple
    seeds: tuple
    rows: tuple
    summary: dict = field(default_factory=dict)

    def mean(self, metric: str) -> list[float]:
        return [m for _, m, _, _ in self.summary[metric]]


def _aggregate(rows, values, metric):
    out = []
    for v in values:
        xs = [r[metric] for r in rows if r["value"] == v and not r["error"]]
        xs = [x for x in xs if not (isinstance(x, float) and math.isnan(x))]
        if xs:
            arr = np.array(xs, dtype=float)
            std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            out.append((v, float(arr.mean()), std, int(arr.size)))
        else:
            out.append((v, math.nan, math.nan, 0))
    return out


def sweep(cfg: ScenarioConfig, axis: str, values=None, seeds=None, workers: int | None = None) -> SweepResult:
    """Re-solve the scenario across one axis; every point sees the same seed set.

    Graph and economics depend only on the seed, so points along the axis
    share their random draws and differ only in the swept field.
    """
    if axis not in SWEEP_AXES:
        raise ParameterError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    values = values if values is not None else (cfg.sweep.values or DEFAULT_SWEEP_VALUES[axis])
    seeds = tuple(seeds if seeds is not None else cfg.sweep.seeds)
    if not values:
        raise ParameterError("sweep needs at least one value")
    values = tuple(sorted(values))
    for v in values:  # validate every point before running any
        axis_config(cfg, axis, v, seeds[0])
    jobs = [(cfg, axis, v, s) for v in values for s in seeds]
    workers = cfg.run.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    summary = {m: _aggregate(rows, values, m) for m in SWEEP_METRICS}
    return SweepResult(axis=axis, values=values, seeds=seeds, rows=tuple(rows), summary=summary)


# -- output -------------------------------------------------------------------


def _header(cfg: ScenarioConfig) -> str:
    return f"config={cfg.digest()} seed={cfg.run.seed} rng={RNG_ALGORITHM}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _csv_text(cfg: ScenarioConfig, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {_header(cfg)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def equilibrium_rows(result: ScenarioResult):
    rep, inst = result.report, result.instance
    risk = external_risk(inst.model, rep.budgets)
    for k, st in enumerate(rep.states):
        for i, p in enumerate(inst.profiles):
            yield (
                st.t, i, st.reward, st.budgets[i], st.mean_field[i], risk[k, i],
                rep.utilities[k, i], computation_cost(p), rep.server_costs[k], rep.rounds[k],
            )


EQUILIBRIUM_COLUMNS = ("t", "client", "reward", "rho", "phi", "risk", "utility", "computation_cost", "server_cost", "rounds")


def poa_rows(result: ScenarioResult):
    rep, poa = result.report, result.poa
    compute = sum(computation_cost(p) for p in result.instance.profiles) * rep.horizon
    rows = [
        ("welfare_sw", poa.welfare_sw),
        ("welfare_mpp", poa.welfare_mpp),
        ("welfare_sa", poa.welfare_sa),
        ("welfare_mpp_minus_compute", poa.welfare_mpp - compute),
        ("poa_mpp_true", poa.poa_mpp_true),
        ("poa_sa_true", poa.poa_sa_true),
        ("poa_mpp_closed_form", poa.poa_mpp_closed_form),
        ("sa_lower_bound", poa.sa_lower_bound),
        ("sw_clamped", poa.sw_clamped),
        ("contractive", rep.contractive),
        ("budgets_clamped", rep.clamped),
        ("max_rounds", rep.max_rounds),
        ("final_residual", rep.final_residual),
        ("server_cost_total", float(rep.server_costs.sum())),
    ]
    for note in rep.warnings + poa.notes:
        rows.append(("note", note))
    return rows


def write_run(result: ScenarioResult, out_dir: str | Path) -> Path:
    cfg = result.config
    out = Path(out_dir)
    texts = {
        "config.echo": cfg.dumps(),
        "equilibrium.csv": _csv_text(cfg, EQUILIBRIUM_COLUMNS, equilibrium_rows(result)),
        "poa.csv": _csv_text(cfg, ("metric", "value"), poa_rows(result)),
    }
    if result.trace is not None:
        buf = io.StringIO()
        write_trace(result.trace, buf, _header(cfg))
        texts["trace.csv"] = buf.getvalue()
    _write_all(out, texts)
    return out


COMPARE_COLUMNS = ("strategy", "mean_reward", "mean_rho", "server_cost", "welfare", "utility_total", "final_excess_loss")


def write_comparison(cfg: ScenarioConfig, outcomes, out_dir: str | Path) -> Path:
    rows = [
        (o.strategy, float(np.mean(o.rewards)), float(np.mean(o.budgets)), o.server_cost, o.welfare, o.utility_total,
         "" if o.final_excess is None else o.final_excess)
        for o in outcomes
    ]
    _write_all(Path(out_dir), {"compare.csv": _csv_text(cfg, COMPARE_COLUMNS, rows)})
    return Path(out_dir)


def write_sweep(cfg: ScenarioConfig, res: SweepResult, out_dir: str | Path) -> Path:
    cols = ("value", "seed") + SWEEP_METRICS + ("error",)
    texts = {
        f"sweep_{res.axis}.csv": _csv_text(
            cfg, cols, ([r["value"], r["seed"]] + [r.get(m, "") for m in SWEEP_METRICS] + [r["error"]] for r in res.rows)
        ),
        "config.echo": cfg.dumps(),
    }
    for metric in SWEEP_METRICS:
        texts[f"sweep_{res.axis}_{metric}.csv"] = _csv_text(cfg, ("value", "mean", "std", "count"), res.summary[metric])
    _write_all(Path(out_dir), texts)
    return Path(out_dir)


def _write_all(out: Path, texts: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in texts.items():
        (out / name).write_text(text)
