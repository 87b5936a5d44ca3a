"""Closed-form economics of the incentive mechanism.

Everything here is a pure function. Scalar helpers accept numpy arrays
wherever the arithmetic broadcasts, which is how the solvers use them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError
from .graph import PropagationModel, external_risk

RHO_MIN = 1e-9


@dataclass(frozen=True)
class ClientProfile:
    """Economic and privacy parameters of one client.

    ``a`` and ``b`` weight the quadratic privacy cost ``a s^2 + b s``;
    ``kappa, xi, freq, local_epochs`` only enter the computation cost.
    """

    a: float
    b: float
    data_size: int
    theta: float = 1.0
    kappa: float = 0.0
    xi: float = 0.0
    freq: float = 0.0
    local_epochs: int = 5

    def __post_init__(self):
        if not self.a > 0 or not self.b > 0:
            raise ParameterError(f"cost coefficients must be positive, got a={self.a}, b={self.b}")
        if int(self.data_size) != self.data_size or self.data_size < 1:
            raise ParameterError(f"data_size must be a positive integer, got {self.data_size}")
        if not 0.0 < self.theta <= 1.0:
            raise ParameterError(f"theta must lie in (0, 1], got {self.theta}")
        if min(self.kappa, self.xi, self.freq, self.local_epochs) < 0:
            raise ParameterError("computation-cost factors must be nonnegative")


@dataclass(frozen=True)
class ServerModelParams:
    tau: float = 0.5
    alpha: float = 0.05
    beta: float = 1.0
    mu: float = 1.0
    grad_bound: float = 1.0
    clip: float = 1.0
    dim: int = 1
    big_n: int = 20

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ParameterError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("beta", "mu", "grad_bound", "clip", "dim", "big_n"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class GameState:
    """Reward, budgets and the mean-field estimate the budgets answered."""

    t: int
    reward: float
    budgets: np.ndarray
    mean_field: np.ndarray
    extra: dict = field(default_factory=dict)


def roster(
    a,
    b,
    data_sizes,
    kappa=0.0,
    xi=0.0,
    freq=0.0,
    local_epochs: int = 5,
) -> list[ClientProfile]:
    """Build profiles with aggregation weights ``|D_i| / sum_j |D_j|``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), a.shape)
    sizes = np.broadcast_to(np.asarray(data_sizes), a.shape)
    kappa, xi, freq = (np.broadcast_to(np.asarray(v, dtype=float), a.shape) for v in (kappa, xi, freq))
    theta = sizes / sizes.sum()
    return [
        ClientProfile(
            a=float(a[i]),
            b=float(b[i]),
            data_size=int(sizes[i]),
            theta=float(theta[i]),
            kappa=float(kappa[i]),
            xi=float(xi[i]),
            freq=float(freq[i]),
            local_epochs=local_epochs,
        )
        for i in range(a.size)
    ]


def profile_arrays(profiles) -> tuple[np.ndarray, np.ndarray]:
    """``(a, b)`` vectors of a roster."""
    return (
        np.array([p.a for p in profiles], dtype=float),
        np.array([p.b for p in profiles], dtype=float),
    )


def noise_variance(clip: float, data_size, rho):
    """Gaussian-mechanism variance ``2 S^2 / (|D|^2 rho)`` under rho-zCDP."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise DomainError("privacy budget must be positive for a finite noise variance")
    if clip <= 0 or np.any(np.asarray(data_size) <= 0):
        raise DomainError("clip threshold and data size must be positive")
    out = 2.0 * clip**2 / (np.asarray(data_size, dtype=float) ** 2 * rho)
    return float(out) if out.ndim == 0 else out


def epsilon_i(params: ServerModelParams, theta, data_size):
    if np.any(np.asarray(theta) <= 0) or np.any(np.asarray(data_size) <= 0):
        raise DomainError("theta and data size must be positive")
    theta = np.asarray(theta, dtype=float)
    size = np.asarray(data_size, dtype=float)
    out = params.dim * params.beta * params.clip**2 * theta**2 / (params.mu**2 * size**2)
    return float(out) if out.ndim == 0 else out


def epsilons(params: ServerModelParams, profiles) -> np.ndarray:
    return np.array([epsilon_i(params, p.theta, p.data_size) for p in profiles])


def _check_t(t):
    if t < 1:
        raise DomainError(f"iteration index starts at 1 (got t={t}); the bound divides by t")


def accuracy_loss_bound(t: int, params: ServerModelParams, eps, rho) -> float:
    """Upper bound on expected excess loss at iteration ``t``.

    ``beta E^2 / (2 mu^2 t) + sum_i eps_i / (t rho_i)``; infinite budgets
    contribute nothing.
    """
    _check_t(t)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise DomainError("privacy budgets must be positive")
    base = params.beta * params.grad_bound**2 / (2.0 * params.mu**2 * t)
    return float(base + np.sum(np.asarray(eps, dtype=float) / (t * rho)))


def composite_risk(rho_i, alpha: float, risk_i):
    return rho_i + alpha * risk_i


def computation_cost(profile: ClientProfile) -> float:
    return profile.kappa * profile.xi * profile.freq * profile.data_size * profile.local_epochs


def client_utility(r, rho_i, risk_i, profile: ClientProfile, alpha: float):
    """Reward minus computation cost minus quadratic privacy cost."""
    s = composite_risk(rho_i, alpha, risk_i)
    return r * rho_i - computation_cost(profile) - (profile.a * s**2 + profile.b * s)


def client_utility_mf(r, rho_i, phi_i, profile: ClientProfile, alpha: float, big_n: int):
    """Utility with the external risk replaced by its mean-field proxy ``N phi_i``."""
    return client_utility(r, rho_i, big_n * phi_i, profile, alpha)


def server_cost(r: float, rho, eps, tau: float, t: int) -> float:
    _check_t(t)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise DomainError("privacy budgets must be positive")
    eps = np.asarray(eps, dtype=float)
    return float(tau * np.sum(eps / (t * rho)) + (1.0 - tau) * np.sum(r * rho))


def welfare_terms(r, rho, model: PropagationModel | np.ndarray, a, b, alpha: float) -> np.ndarray:
    """Per-client welfare contributions ``r rho - (a s^2 + b s)``, no computation cost."""
    rho = np.asarray(rho, dtype=float)
    s = composite_risk(rho, alpha, external_risk(model, rho))
    r = np.asarray(r, dtype=float)
    if r.ndim == 1 and rho.ndim == 2:
        r = r[:, None]
    return r * rho - (a * s**2 + b * s)


def social_welfare(rewards, budgets, model: PropagationModel | np.ndarray, profiles, alpha: float) -> float:
    """Cumulative welfare over iterations and clients.

    ``rewards`` is a length-T sequence and ``budgets`` a (T, N) array (a
    scalar reward with a single budget vector is also accepted).
    """
    a, b = profile_arrays(profiles)
    return float(np.sum(welfare_terms(rewards, budgets, model, a, b, alpha)))
