"""Stackelberg equilibrium of the reward/budget game and its efficiency.

The leader (server) announces a unit reward ``r``; each follower (client)
picks a budget ``rho_i`` against a mean-field estimate ``phi_i`` of its
external risk. ``fixed_point`` alternates server reply, client replies and
the estimator refresh until the estimator stops moving. Iterations ``t``
never interact, so each one is solved on its own.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .errors import DomainError, InfeasibleBudgetError, NonConvergenceError, ParameterError, SolverError
from .graph import PropagationModel, external_risk
from .mechanism import (
    RHO_MIN,
    ClientProfile,
    GameState,
    ServerModelParams,
    client_utility,
    epsilons,
    profile_arrays,
    server_cost,
    social_welfare,
)


class NonContractiveWarning(RuntimeWarning):
    """alpha * S >= 1: uniqueness of the fixed point is no longer guaranteed."""


# -- stage II: clients ---------------------------------------------------------


def best_response(
    r: float,
    phi_i: float,
    profile: ClientProfile,
    alpha: float,
    big_n: int,
    rho_min: float = RHO_MIN,
    client: int | None = None,
) -> float:
    """Budget maximizing the mean-field utility: ``(r - b)/(2a) - alpha N phi``."""
    rho = (r - profile.b) / (2.0 * profile.a) - alpha * big_n * phi_i
    if rho <= rho_min:
        who = "" if client is None else f"client {client}: "
        raise InfeasibleBudgetError(
            f"{who}best response {rho:.6g} is at or below the floor {rho_min:g}; raise the reward",
            client=client,
            value=rho,
        )
    return rho


def best_responses(r, phi, a, b, alpha: float, big_n: int) -> np.ndarray:
    """Vectorized best response without feasibility checks."""
    return (r - b) / (2.0 * a) - alpha * big_n * np.asarray(phi, dtype=float)


# -- stage I: server -----------------------------------------------------------


def reward_derivative(r, phi, eps, a, b, tau, alpha, t, big_n) -> float:
    """dU_t/dr with every client playing its best response to ``r``."""
    g = best_responses(r, phi, a, b, alpha, big_n)
    accuracy = -tau * np.sum(eps / (2.0 * t * a * g**2))
    payment = (1.0 - tau) * np.sum((2.0 * r - b) / (2.0 * a) - alpha * big_n * phi)
    return float(accuracy + payment)


def reward_second_derivative(r, phi, eps, a, b, tau, alpha, t, big_n) -> float:
    g = best_responses(r, phi, a, b, alpha, big_n)
    return float(tau * np.sum(eps / (2.0 * t * a**2 * g**3)) + (1.0 - tau) * np.sum(1.0 / a))


def reward_floor(phi, a, b, alpha: float, big_n: int, rho_min: float = RHO_MIN) -> float:
    """Smallest reward at which every best response clears ``rho_min``."""
    return float(np.max(b + 2.0 * a * (alpha * big_n * np.asarray(phi) + rho_min)))


def solve_unit_reward(
    phi,
    eps,
    profiles,
    tau: float,
    alpha: float,
    t: int,
    big_n: int | None = None,
    rho_min: float = RHO_MIN,
    cap: float = 1e6,
    rtol: float = 1e-10,
) -> float:
    """Server-optimal unit reward by bisection on the cost derivative.

    The cost is strictly convex on the region where every best response is
    positive and its derivative runs from -inf to +inf there, so the root
    is bracketed by the reward floor and a geometrically grown upper end.
    """
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"tau must lie in (0, 1), got {tau}")
    if t < 1:
        raise DomainError(f"iteration index starts at 1, got t={t}")
    a, b = profile_arrays(profiles)
    eps = np.asarray(eps, dtype=float)
    phi = np.asarray(phi, dtype=float)
    big_n = len(profiles) if big_n is None else big_n
    args = (phi, eps, a, b, tau, alpha, t, big_n)

    lo = reward_floor(phi, a, b, alpha, big_n, rho_min)
    if reward_derivative(lo, *args) >= 0.0:
        return lo
    width = max(1.0, abs(lo))
    hi = lo + width
    while reward_derivative(hi, *args) <= 0.0:
        width *= 2.0
        hi = lo + width
        if width > cap:
            raise SolverError(f"reward bracket grew past the cap {cap:g} without a sign change")

    while hi - lo > rtol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if reward_derivative(mid, *args) < 0.0:
            lo = mid
        else:
            hi = mid

    # Newton polish kept inside the final bracket; steep near the floor
    r = 0.5 * (lo + hi)
    best, best_d = r, math.inf
    for _ in range(8):
        d = reward_derivative(r, *args)
        if abs(d) < best_d:
            best, best_d = r, abs(d)
        if d == 0.0:
            break
        if d < 0.0:
            lo = r
        else:
            hi = r
        step = r - d / reward_second_derivative(r, *args)
        if not lo <= step <= hi:
            step = 0.5 * (lo + hi)
        if step == r:
            break
        r = step
    return float(best)


# -- mean-field fixed point ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    states: tuple[GameState, ...]
    utilities: np.ndarray
    server_costs: np.ndarray
    welfare: float
    traces: tuple[tuple[float, ...], ...]
    converged: bool
    rounds: tuple[int, ...]
    contractive: bool = True
    clamped: bool = False
    warnings: tuple[str, ...] = ()
    budget_traces: tuple[np.ndarray, ...] | None = None

    @property
    def horizon(self) -> int:
        return len(self.states)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.states])

    @property
    def budgets(self) -> np.ndarray:
        return np.vstack([s.budgets for s in self.states])

    @property
    def mean_field(self) -> np.ndarray:
        return np.vstack([s.mean_field for s in self.states])

    @property
    def max_rounds(self) -> int:
        return max(self.rounds)

    @property
    def final_residual(self) -> float:
        return max(tr[-1] for tr in self.traces)


def _as_schedule(value, horizon: int, n: int) -> np.ndarray | None:
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    return np.broadcast_to(arr, (horizon, n)).copy()


def fixed_point(
    model: PropagationModel,
    profiles,
    server: ServerModelParams,
    horizon: int,
    eps0: float = 1e-3,
    init=None,
    fixed_reward=None,
    max_rounds: int = 10_000,
    rho_min: float = RHO_MIN,
    clamp: bool = False,
    bracket_cap: float = 1e6,
    keep_budgets: bool = False,
) -> EquilibriumReport:
    """Iterate server reply, client replies and estimator refresh per iteration.

    One inner round at iteration ``t`` is

    1. ``r <- solve_unit_reward(phi)`` (skipped when ``fixed_reward`` is set),
    2. ``rho_i <- best_response(r, phi_i)``,
    3. ``phi <- sigma @ rho / N``,

    and the sweep stops once ``max |phi_new - phi| <= eps0``. The recorded
    state keeps the estimate the clients actually answered, so the gap
    ``R_i - N phi_i`` of the returned profile is the final residual.

    ``init`` is an optional ``(rho, r, phi)`` triple; any item may be None
    and arrays broadcast to ``(horizon, N)``.
    """
    if eps0 <= 0:
        raise ParameterError(f"eps0 must be positive, got {eps0}")
    if int(horizon) != horizon or horizon < 1:
        raise ParameterError(f"horizon must be a positive integer, got {horizon}")
    n = model.n
    if len(profiles) != n:
        raise ParameterError(f"roster has {len(profiles)} clients but the graph has {n}")
    horizon = int(horizon)
    alpha, tau = server.alpha, server.tau
    big_n = n
    a, b = profile_arrays(profiles)
    eps = epsilons(server, profiles)
    sigma = model.sigma

    notes = []
    contraction = alpha * model.bound
    contractive = contraction < 1.0
    if not contractive:
        msg = f"alpha*S = {contraction:.4g} >= 1: non-contractive regime, uniqueness not guaranteed"
        warnings.warn(msg, NonContractiveWarning, stacklevel=2)
        notes.append(msg)

    rho0, r0, phi0 = (None, None, None) if init is None else init
    rho0 = _as_schedule(rho0, horizon, n)
    phi0 = _as_schedule(phi0, horizon, n)
    frozen = None if fixed_reward is None else np.broadcast_to(np.asarray(fixed_reward, dtype=float), (horizon,))

    def reward_for(phi, t):
        return solve_unit_reward(phi, eps, profiles, tau, alpha, t, big_n, rho_min, bracket_cap)

    states, traces, rounds, kept = [], [], [], []
    any_clamped = False
    for k in range(horizon):
        t = k + 1
        if phi0 is not None:
            phi = phi0[k]
        else:
            if rho0 is not None:
                rho = rho0[k]
            else:
                rho = np.ones(n)
                r_guess = frozen[k] if frozen is not None else reward_for(sigma @ rho / n, t)
                if contractive:
                    lo, hi = feasible_bounds([r_guess], profiles, model, alpha)
                    if lo > 0:
                        rho = np.full(n, 0.5 * (lo + hi))
            phi = sigma @ rho / n

        residuals = []
        history = []
        r = frozen[k] if frozen is not None else (None if r0 is None else float(np.ravel(r0)[min(k, np.size(r0) - 1)]))
        for m in range(1, max_rounds + 1):
            if frozen is None:
                r = reward_for(phi, t)
            rho = best_responses(r, phi, a, b, alpha, big_n)
            low = rho <= rho_min
            if low.any():
                if not clamp:
                    i = int(np.flatnonzero(low)[0])
                    raise InfeasibleBudgetError(
                        f"t={t}, round {m}: best response of client {i} is {rho[i]:.6g} "
                        f"(floor {rho_min:g}) at reward {r:.6g}",
                        client=i,
                        value=float(rho[i]),
                    )
                rho = np.maximum(rho, rho_min)
                any_clamped = True
            phi_new = sigma @ rho / n
            residual = float(np.max(np.abs(phi_new - phi)))
            residuals.append(residual)
            if keep_budgets:
                history.append(rho.copy())
            if residual <= eps0:
                break
            phi = phi_new
        else:
            raise NonConvergenceError(
                f"t={t}: fixed point not reached within {max_rounds} rounds "
                f"(last residual {residuals[-1]:.3g} > eps0 {eps0:g})",
                trace=residuals,
            )
        states.append(GameState(t=t, reward=float(r), budgets=rho, mean_field=phi))
        traces.append(tuple(residuals))
        rounds.append(m)
        if keep_budgets:
            kept.append(np.array(history))

    rewards = np.array([s.reward for s in states])
    budgets = np.vstack([s.budgets for s in states])
    risk = external_risk(model, budgets)
    utilities = np.vstack(
        [[client_utility(rewards[k], budgets[k, i], risk[k, i], p, alpha) for i, p in enumerate(profiles)] for k in range(horizon)]
    )
    costs = np.array([server_cost(rewards[k], budgets[k], eps, tau, k + 1) for k in range(horizon)])
    return EquilibriumReport(
        states=tuple(states),
        utilities=utilities,
        server_costs=costs,
        welfare=social_welfare(rewards, budgets, model, profiles, alpha),
        traces=tuple(traces),
        converged=True,
        rounds=tuple(rounds),
        contractive=contractive,
        clamped=any_clamped,
        warnings=tuple(notes),
        budget_traces=tuple(kept) if keep_budgets else None,
    )


# -- baselines and the welfare optimum ----------------------------------------


def sa_equilibrium(
    profiles,
    server: ServerModelParams,
    eps,
    t: int,
    rho_min: float = RHO_MIN,
    cap: float = 1e6,
) -> tuple[float, np.ndarray]:
    """Social-agnostic play: clients ignore external risk, server prices against that."""
    big_n = len(profiles)
    phi = np.zeros(big_n)
    r = solve_unit_reward(phi, eps, profiles, server.tau, server.alpha, t, big_n, rho_min, cap)
    a, b = profile_arrays(profiles)
    return r, (r - b) / (2.0 * a)


def sw_optimum(
    r: float,
    model: PropagationModel | np.ndarray,
    profiles,
    alpha: float,
    rho_min: float = RHO_MIN,
) -> tuple[np.ndarray, bool]:
    """Budgets maximizing one iteration's social welfare at reward ``r``.

    Solves the stationarity system ``M^T diag(2a) M rho = r 1 - M^T b`` with
    ``M = I + alpha sigma``. If that solution dips below ``rho_min`` the
    bound-constrained maximizer is computed instead and the flag is set.
    """
    sigma = model.sigma if isinstance(model, PropagationModel) else np.asarray(model, dtype=float)
    a, b = profile_arrays(profiles)
    n = a.size
    m = np.eye(n) + alpha * sigma
    q = m.T @ (2.0 * a[:, None] * m)
    c = r * np.ones(n) - m.T @ b
    try:
        if np.linalg.cond(m) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned")
        rho = np.linalg.solve(q, c)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"welfare stationarity system is singular ({exc})") from None
    if rho.min() >= rho_min:
        return rho, False
    # min 0.5 |L rho - d|^2 with L = sqrt(2a) M and L^T d = c is the same QP
    lmat = np.sqrt(2.0 * a)[:, None] * m
    d = np.linalg.solve(lmat.T, c)
    res = lsq_linear(lmat, d, bounds=(rho_min, np.inf), method="bvls", tol=1e-14)
    return res.x, True


def poa_true(welfare_sw: float, welfare_eq: float) -> float:
    """Optimal over equilibrium welfare; NaN when the equilibrium welfare is not positive."""
    if not welfare_eq > 0:
        return math.nan
    return welfare_sw / welfare_eq


def _m_range(rewards, profiles) -> tuple[float, float]:
    a, b = profile_arrays(profiles)
    r = np.atleast_1d(np.asarray(rewards, dtype=float))
    m = (r[:, None] - b[None, :]) / (2.0 * a[None, :])
    return float(m.min()), float(m.max())


def feasible_bounds(rewards, profiles, model: PropagationModel, alpha: float) -> tuple[float, float]:
    """Box ``[rho_l, rho_h]`` mapped into itself by the budget update."""
    s = model.bound
    if alpha * s >= 1.0:
        raise DomainError(f"alpha*S = {alpha * s:.4g} must be < 1 for the feasible box")
    m_l, m_h = _m_range(rewards, profiles)
    den = 1.0 - (alpha * s) ** 2
    return (m_l - alpha * s * m_h) / den, (m_h - alpha * s * m_l) / den


def sa_lower_bound(model: PropagationModel, profiles, rewards, alpha: float, w_min: float) -> float:
    """Closed-form lower bound ``1 / (1 - e^2)`` on the social-agnostic PoA."""
    s = model.bound
    if alpha * s >= 1.0:
        raise DomainError(f"alpha*S = {alpha * s:.4g} must be < 1")
    m_l, m_h = _m_range(rewards, profiles)
    if not m_h > 0:
        raise DomainError("largest unconstrained budget m_h must be positive")
    e = alpha * s * w_min / (1.0 - (alpha * s) ** 2) * (alpha * s - m_l / m_h)
    return 1.0 / (1.0 - e**2)


def poa_closed_form_mpp(report: EquilibriumReport, model: PropagationModel, profiles, alpha: float) -> float:
    """Closed-form PoA estimate driven by the estimator gap ``R_i - N phi_i``.

    Numerator and denominator are both summed over all clients and
    iterations. NaN if the denominator vanishes.
    """
    a, b = profile_arrays(profiles)
    r = report.rewards[:, None]
    rho = report.budgets
    risk = external_risk(model, rho)
    big_n = rho.shape[1]
    gap = risk - big_n * report.mean_field
    num = np.sum(alpha * r * gap)
    den = np.sum((r - b) ** 2 / (4.0 * a) - alpha * r * risk)
    if den == 0.0:
        return math.nan
    return float(1.0 + num / den)


@dataclass(frozen=True, eq=False)
class PoAReport:
    welfare_sw: float
    welfare_mpp: float
    welfare_sa: float
    poa_mpp_true: float
    poa_sa_true: float
    poa_mpp_closed_form: float
    sa_lower_bound: float
    sw_budgets: np.ndarray
    sa_budgets: np.ndarray
    sw_clamped: bool = False
    notes: tuple[str, ...] = field(default_factory=tuple)


def poa_analysis(
    report: EquilibriumReport,
    model: PropagationModel,
    profiles,
    alpha: float,
    w_min: float = 0.0,
    rho_min: float = RHO_MIN,
) -> PoAReport:
    """Welfare of optimum, MPP and social-agnostic play under the equilibrium rewards.

    All three profiles face the same reward schedule ``r*(t)``, so the
    optimum dominates both equilibria by construction.
    """
    rewards = report.rewards
    a, b = profile_arrays(profiles)
    sw_rows, clamped = [], False
    for r in rewards:
        rho, flag = sw_optimum(r, model, profiles, alpha, rho_min)
        sw_rows.append(rho)
        clamped |= flag
    sw = np.vstack(sw_rows)
    sa = (rewards[:, None] - b) / (2.0 * a)

    w_sw = social_welfare(rewards, sw, model, profiles, alpha)
    w_mpp = social_welfare(rewards, report.budgets, model, profiles, alpha)
    w_sa = social_welfare(rewards, sa, model, profiles, alpha)

    notes = []
    try:
        bound = sa_lower_bound(model, profiles, rewards, alpha, w_min)
    except DomainError as exc:
        bound = math.nan
        notes.append(f"sa_lower_bound undefined: {exc}")
    for name, w in (("MPP", w_mpp), ("SA", w_sa)):
        if not w > 0:
            notes.append(f"PoA({name}) undefined: equilibrium welfare {w!r} <= 0 (optimum {w_sw!r})")
    if clamped:
        notes.append("welfare optimum hit the budget floor; bound-constrained solution used")
    return PoAReport(
        welfare_sw=w_sw,
        welfare_mpp=w_mpp,
        welfare_sa=w_sa,
        poa_mpp_true=poa_true(w_sw, w_mpp),
        poa_sa_true=poa_true(w_sw, w_sa),
        poa_mpp_closed_form=poa_closed_form_mpp(report, model, profiles, alpha),
        sa_lower_bound=bound,
        sw_budgets=sw,
        sa_budgets=sa,
        sw_clamped=clamped,
        notes=tuple(notes),
    )
