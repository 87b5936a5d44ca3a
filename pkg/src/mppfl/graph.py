"""Weighted directed social graph and multi-hop privacy propagation.

Entry ``weights[i, j]`` is the influence of client ``j`` on client ``i``.
Rows are therefore *incoming* influence, and a row without any nonzero
entry is an isolated client.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, StructuralError

RNG_ALGORITHM = "numpy.PCG64"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator for ``seed``; extra integers select an independent sub-stream."""
    if stream:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise StructuralError(f"weights must be a square matrix, got shape {w.shape}")
        if np.any(np.diag(w) != 0.0):
            raise StructuralError("self-loops are not allowed (diagonal must be zero)")
        if np.any(w < 0.0) or np.any(w > 1.0) or not np.all(np.isfinite(w)):
            raise StructuralError("edge weights must lie in [0, 1]")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def isolated(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(~np.any(self.weights > 0.0, axis=1))]


@dataclass(frozen=True, eq=False)
class RowStochasticMatrix:
    entries: np.ndarray
    floor: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(self.entries))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class PropagationModel:
    """Propagation coefficients ``sigma`` plus the hop decay that built them."""

    lam: float
    hops: int
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma", _frozen(self.sigma))

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def bound(self) -> float:
        return propagation_bound(self.lam, self.hops)


def propagation_bound(lam: float, hops: int) -> float:
    """Geometric cap ``(1 - lam**K) / (1 - lam)`` on any row sum of sigma."""
    return (1.0 - lam**hops) / (1.0 - lam)


def generate_er_graph(
    n: int,
    rng: np.random.Generator | int,
    p_range: tuple[float, float] = (0.1, 0.9),
    w_range: tuple[float, float] = (0.1, 1.0),
) -> WeightedDigraph:
    """Non-uniform Erdos-Renyi digraph.

    Every ordered pair ``(i, j)``, ``i != j``, draws its own connection
    probability from ``U(p_range)``; an existing edge draws its weight from
    ``U(w_range)``. A client left with no incoming edge gets one extra edge
    from a uniformly chosen other client.
    """
    p_low, p_high = p_range
    w_low, w_high = w_range
    if int(n) != n or n < 2:
        raise ParameterError(f"n must be an integer >= 2, got {n}")
    if not 0.0 < p_low <= p_high <= 1.0:
        raise ParameterError(f"need 0 < p_low <= p_high <= 1, got ({p_low}, {p_high})")
    if not 0.0 < w_low <= w_high <= 1.0:
        raise ParameterError(f"need 0 < w_low <= w_high <= 1, got ({w_low}, {w_high})")
    n = int(n)
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)

    probs = rng.uniform(p_low, p_high, size=(n, n))
    coins = rng.random(size=(n, n))
    weights = rng.uniform(w_low, w_high, size=(n, n))
    w = np.where(coins < probs, weights, 0.0)
    np.fill_diagonal(w, 0.0)

    for i in range(n):
        if not np.any(w[i] > 0.0):
            j = int(rng.integers(n - 1))
            j += j >= i
            w[i, j] = rng.uniform(w_low, w_high)
    return WeightedDigraph(w)


def row_normalize(g: WeightedDigraph, w_min: float = 0.0) -> RowStochasticMatrix:
    """Row-normalize ``g`` with an optional floor on surviving edges.

    Nonzero entries that normalize below ``w_min`` are pinned at ``w_min``
    and the leftover row mass is redistributed proportionally over the
    unpinned entries, repeating until no entry falls under the floor. Zero
    raw weights stay zero.
    """
    n = g.n
    if not 0.0 <= w_min < 1.0 / n:
        raise ParameterError(f"w_min must lie in [0, 1/n) = [0, {1.0 / n}), got {w_min}")
    w = g.weights
    sums = w.sum(axis=1)
    bad = np.flatnonzero(sums <= 0.0)
    if bad.size:
        raise StructuralError(f"client {int(bad[0])} has no incoming edges (zero row)")

    out = w / sums[:, None]
    if w_min > 0.0:
        for i in range(n):
            support = w[i] > 0.0
            pinned = support & (out[i] < w_min)
            while pinned.any():
                free = support & ~pinned
                mass = 1.0 - w_min * pinned.sum()
                row = np.zeros(n)
                row[pinned] = w_min
                row[free] = w[i, free] / w[i, free].sum() * mass
                newly = free & (row < w_min)
                out[i] = row
                if not newly.any():
                    break
                pinned |= newly
    return RowStochasticMatrix(out, floor=w_min)


def propagation_coefficients(w_tilde: RowStochasticMatrix | np.ndarray, lam: float, hops: int) -> PropagationModel:
    """Accumulate ``sum_k lam**(k-1) W~^k`` for k = 1..hops, then zero the diagonal."""
    if not 0.0 < lam < 1.0:
        raise ParameterError(f"decay lambda must lie in (0, 1), got {lam}")
    if int(hops) != hops or hops < 1:
        raise ParameterError(f"hops K must be an integer >= 1, got {hops}")
    hops = int(hops)
    base = w_tilde.entries if isinstance(w_tilde, RowStochasticMatrix) else np.asarray(w_tilde, dtype=float)

    power = base.copy()
    sigma = base.copy()
    scale = 1.0
    for _ in range(2, hops + 1):
        power = power @ base
        scale *= lam
        sigma += scale * power
    np.fill_diagonal(sigma, 0.0)
    return PropagationModel(lam=float(lam), hops=hops, sigma=sigma)


def external_risk(model: PropagationModel | np.ndarray, rho) -> np.ndarray:
    """``R_i = sum_j sigma_ij rho_j``; works on a budget vector or a (T, N) stack."""
    sigma = model.sigma if isinstance(model, PropagationModel) else np.asarray(model, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if rho.shape[-1] != sigma.shape[0]:
        raise ParameterError(f"budget vector has length {rho.shape[-1]}, expected {sigma.shape[0]}")
    return rho @ sigma.T


# -- plain-text serialization -------------------------------------------------
#
#   n <count>
#   i j weight        (0-based, one line per nonzero entry, row-major order)


def format_graph(g: WeightedDigraph) -> str:
    buf = io.StringIO()
    buf.write(f"n {g.n}\n")
    rows, cols = np.nonzero(g.weights)
    for i, j in zip(rows, cols):
        buf.write(f"{i} {j} {float(g.weights[i, j])!r}\n")
    return buf.getvalue()


def parse_graph(text: str) -> WeightedDigraph:
    lines = [(k, ln.strip()) for k, ln in enumerate(text.splitlines(), start=1)]
    lines = [(k, ln) for k, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise StructuralError("empty graph file")
    k, head = lines[0]
    parts = head.split()
    if len(parts) != 2 or parts[0] != "n":
        raise StructuralError(f"line {k}: expected header 'n <count>', got {head!r}")
    try:
        n = int(parts[1])
    except ValueError:
        raise StructuralError(f"line {k}: bad client count {parts[1]!r}") from None
    w = np.zeros((n, n))
    for k, ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise StructuralError(f"line {k}: expected 'i j weight', got {ln!r}")
        try:
            i, j, val = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise StructuralError(f"line {k}: cannot parse {ln!r}") from None
        if not (0 <= i < n and 0 <= j < n):
            raise StructuralError(f"line {k}: index out of range for n={n}")
        w[i, j] = val
    return WeightedDigraph(w)


def write_graph(g: WeightedDigraph, path: str | Path) -> None:
    Path(path).write_text(format_graph(g))


def read_graph(path: str | Path) -> WeightedDigraph:
    return parse_graph(Path(path).read_text())
