"""Desk-scale federated training with budget-calibrated Gaussian noise.

Clients hold linear least-squares problems, so smoothness and strong
convexity constants are exact eigenvalues rather than guesses. Each round
every client runs a few local gradient steps, clips its model delta,
perturbs it with the variance its privacy budget buys, and the server
averages the noisy deltas with data-size weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import DivergenceError, ParameterError
from .graph import make_rng
from .mechanism import ServerModelParams, accuracy_loss_bound, noise_variance


def clip_update(vector, clip: float) -> np.ndarray:
    """Project onto the l2 ball of radius ``clip``."""
    if clip <= 0:
        raise ParameterError(f"clip threshold must be positive, got {clip}")
    v = np.asarray(vector, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= clip:
        return v.copy()
    return v * (clip / norm)


def perturb_gradient(grad, variance: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. ``N(0, variance)`` noise per coordinate."""
    grad = np.asarray(grad, dtype=float)
    if variance < 0:
        raise ParameterError(f"noise variance must be nonnegative, got {variance}")
    if variance == 0:
        return grad.copy()
    return grad + rng.normal(0.0, np.sqrt(variance), size=grad.shape)


def aggregate(updates, theta) -> np.ndarray:
    """Data-size weighted average ``sum_i theta_i u_i``."""
    return np.tensordot(np.asarray(theta, dtype=float), np.asarray(updates, dtype=float), axes=1)


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    features: tuple[np.ndarray, ...]
    targets: tuple[np.ndarray, ...]
    true_params: np.ndarray
    theta: np.ndarray

    @property
    def dim(self) -> int:
        return self.true_params.size

    @property
    def n_clients(self) -> int:
        return len(self.features)

    def hessian(self) -> np.ndarray:
        return sum(th * x.T @ x / len(x) for th, x in zip(self.theta, self.features))

    def smoothness(self) -> float:
        return float(np.linalg.eigvalsh(self.hessian())[-1])

    def strong_convexity(self) -> float:
        return float(np.linalg.eigvalsh(self.hessian())[0])

    def client_constants(self) -> list[tuple[float, float]]:
        """``(beta_i, mu_i)`` of every client loss."""
        out = []
        for x in self.features:
            ev = np.linalg.eigvalsh(x.T @ x / len(x))
            out.append((float(ev[-1]), float(ev[0])))
        return out

    def optimum(self) -> np.ndarray:
        rhs = sum(th * x.T @ y / len(x) for th, x, y in zip(self.theta, self.features, self.targets))
        return np.linalg.solve(self.hessian(), rhs)

    def client_grad(self, i: int, w: np.ndarray) -> np.ndarray:
        x, y = self.features[i], self.targets[i]
        return x.T @ (x @ w - y) / len(x)

    def loss(self, w: np.ndarray) -> float:
        return float(sum(0.5 * th * np.mean((x @ w - y) ** 2) for th, x, y in zip(self.theta, self.features, self.targets)))

    def model_params(self, base: ServerModelParams) -> ServerModelParams:
        """``base`` with beta, mu and dim replaced by this task's exact values."""
        return replace(base, beta=self.smoothness(), mu=self.strong_convexity(), dim=self.dim)


def make_task(
    data_sizes,
    dim: int,
    rng: np.random.Generator,
    condition: float = 4.0,
    heterogeneity: float = 0.5,
    obs_noise: float = 0.1,
) -> SyntheticTask:
    """Linear regression clients with a shared ground truth.

    Features are Gaussian with per-axis scales spread over ``[1/sqrt(condition), 1]``
    and a per-client mean shift of size ``heterogeneity`` (a stand-in for
    label skew).
    """
    sizes = np.asarray(data_sizes, dtype=int)
    if np.any(sizes < 1) or dim < 1:
        raise ParameterError("data sizes and dim must be positive")
    if condition < 1:
        raise ParameterError(f"condition must be >= 1, got {condition}")
    scales = np.sqrt(np.geomspace(1.0, 1.0 / condition, dim))
    w_true = rng.normal(size=dim)
    xs, ys = [], []
    for n_i in sizes:
        shift = heterogeneity * rng.normal(size=dim)
        x = shift + rng.normal(size=(n_i, dim)) * scales
        y = x @ w_true + obs_noise * rng.normal(size=n_i)
        xs.append(x)
        ys.append(y)
    return SyntheticTask(
        features=tuple(xs),
        targets=tuple(ys),
        true_params=w_true,
        theta=sizes / sizes.sum(),
    )


@dataclass(frozen=True, eq=False)
class TrainingTrace:
    t: np.ndarray
    global_loss: np.ndarray
    excess_loss: np.ndarray
    bound_value: np.ndarray
    mean_rho: np.ndarray
    noise: np.ndarray
    initial_loss: float

    @property
    def mean_noise_variance(self) -> np.ndarray:
        return self.noise.mean(axis=1)

    @property
    def final_excess(self) -> float:
        return float(self.excess_loss[-1])

    def rows(self):
        for k in range(self.t.size):
            yield (
                int(self.t[k]),
                float(self.global_loss[k]),
                float(self.excess_loss[k]),
                float(self.bound_value[k]),
                float(self.mean_rho[k]),
                float(self.mean_noise_variance[k]),
            )


TRACE_COLUMNS = ("t", "global_loss", "excess_loss", "bound_value", "mean_rho", "mean_noise_variance")


def write_trace(trace: TrainingTrace, fh, comment: str | None = None) -> None:
    if comment:
        fh.write(f"# {comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in trace.rows():
        w.writerow([row[0]] + [repr(v) for v in row[1:]])


def run_federated(
    task: SyntheticTask,
    budgets,
    lr: float,
    local_epochs: int,
    horizon: int,
    server: ServerModelParams,
    rng: np.random.Generator | int,
    eps=None,
    data_sizes=None,
    divergence_factor: float = 1e6,
) -> TrainingTrace:
    """Train for ``horizon`` rounds under the budget schedule.

    ``budgets`` broadcasts to ``(horizon, N)``; ``np.inf`` switches noise
    off for that client and round. ``eps`` feeds the accuracy bound and
    defaults to zeros (bound reduces to its noiseless term).
    ``data_sizes`` sets the sensitivity denominator and defaults to the
    task's per-client sample counts.
    """
    n = task.n_clients
    if lr <= 0 or local_epochs < 1 or horizon < 1:
        raise ParameterError("need lr > 0, local_epochs >= 1, horizon >= 1")
    rho = np.broadcast_to(np.asarray(budgets, dtype=float), (horizon, n))
    if np.any(rho <= 0):
        raise ParameterError("budgets must be strictly positive over the whole schedule")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    sizes = np.array([len(x) for x in task.features]) if data_sizes is None else np.asarray(data_sizes)
    eps = np.zeros(n) if eps is None else np.asarray(eps, dtype=float)
    root = int(rng.integers(2**62))

    w_star = task.optimum()
    f_star = task.loss(w_star)
    w = np.zeros(task.dim)
    initial = task.loss(w)

    losses, excess, bounds, noise = [], [], [], []
    for k in range(horizon):
        t = k + 1
        var = np.array([noise_variance(server.clip, sizes[i], rho[k, i]) for i in range(n)])
        updates = np.empty((n, task.dim))
        for i in range(n):
            local = w.copy()
            for _ in range(local_epochs):
                local -= lr * task.client_grad(i, local)
            delta = clip_update(local - w, server.clip)
            updates[i] = perturb_gradient(delta, var[i], _stream(root, t, i))
        w = w + aggregate(updates, task.theta)
        loss = task.loss(w)
        if not np.isfinite(loss) or loss > divergence_factor * max(initial, 1e-300):
            raise DivergenceError(f"round {t}: global loss {loss:.3g} exceeded {divergence_factor:g}x its initial value {initial:.3g}")
        losses.append(loss)
        excess.append(loss - f_star)
        bounds.append(accuracy_loss_bound(t, server, eps, rho[k]))
        noise.append(var)

    return TrainingTrace(
        t=np.arange(1, horizon + 1),
        global_loss=np.array(losses),
        excess_loss=np.array(excess),
        bound_value=np.array(bounds),
        mean_rho=rho.mean(axis=1),
        noise=np.array(noise),
        initial_loss=initial,
    )


def _stream(root: int, t: int, client: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([root, t, client])))
