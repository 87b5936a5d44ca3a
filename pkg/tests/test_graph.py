import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mppfl.errors import ParameterError, StructuralError
from mppfl.graph import (
    RowStochasticMatrix,
    WeightedDigraph,
    external_risk,
    format_graph,
    generate_er_graph,
    parse_graph,
    propagation_bound,
    propagation_coefficients,
    read_graph,
    row_normalize,
    write_graph,
)

CYCLE = np.array([[0.0, 1.0], [1.0, 0.0]])


def test_er_default_has_no_isolated_rows():
    for seed in range(20):
        g = generate_er_graph(20, seed)
        assert g.isolated() == []
        assert np.all(np.diag(g.weights) == 0)
        nz = g.weights[g.weights > 0]
        assert nz.min() >= 0.1 and nz.max() <= 1.0


def test_er_degenerate_ranges():
    g = generate_er_graph(2, 0, (1.0, 1.0), (0.5, 0.5))
    assert np.array_equal(g.weights, [[0.0, 0.5], [0.5, 0.0]])


def test_er_same_seed_is_bitwise_identical():
    a = generate_er_graph(30, 7)
    b = generate_er_graph(30, 7)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert generate_er_graph(30, 8).weights.tobytes() != a.weights.tobytes()


def test_er_isolated_rows_are_repaired():
    # tiny connection probability leaves most rows empty before repair
    g = generate_er_graph(15, 3, (1e-6, 1e-6), (0.2, 0.4))
    assert g.isolated() == []
    counts = (g.weights > 0).sum(axis=1)
    assert np.all(counts >= 1)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=1),
        dict(n=5, p_range=(0.0, 0.5)),
        dict(n=5, p_range=(0.6, 0.5)),
        dict(n=5, w_range=(0.2, 1.5)),
        dict(n=2.5),
    ],
)
def test_er_rejects_bad_parameters(kwargs):
    with pytest.raises(ParameterError):
        generate_er_graph(rng=0, **kwargs)


def test_digraph_validation():
    with pytest.raises(StructuralError):
        WeightedDigraph(np.eye(2))
    with pytest.raises(StructuralError):
        WeightedDigraph(np.zeros((2, 3)))
    with pytest.raises(StructuralError):
        WeightedDigraph(np.array([[0.0, -0.1], [0.3, 0.0]]))
    g = WeightedDigraph(CYCLE)
    with pytest.raises(ValueError):
        g.weights[0, 1] = 0.5


@pytest.mark.parametrize(
    "row, expected",
    [
        ([0, 2, 2], [0, 0.5, 0.5]),
        ([0, 1, 3], [0, 0.25, 0.75]),
    ],
)
def test_row_normalize_examples(row, expected):
    # weights live in [0, 1]; normalization is scale free, so shrink the raw row
    w = np.zeros((3, 3))
    w[0] = np.array(row) / 10
    w[1, 0] = w[2, 0] = 1.0
    out = row_normalize(WeightedDigraph(w)).entries
    assert np.allclose(out[0], expected, atol=1e-15)


def test_row_normalize_floor():
    w = np.zeros((3, 3))
    w[0] = [0, 0.001, 0.999]
    w[1, 0] = w[2, 0] = 1.0
    out = row_normalize(WeightedDigraph(w), 0.05)
    # the small entry is pinned at the floor, the rest of the row takes the remaining mass
    assert out.entries[0] == pytest.approx([0.0, 0.05, 0.95], abs=1e-15)
    assert out.floor == 0.05


def test_row_normalize_floor_cascades():
    # pinning one entry pushes another under the floor; both end up pinned
    w = np.zeros((6, 6))
    w[0, 1:] = [1e-4, 0.16, 1.0, 1.0, 1.0]
    for i in range(1, 6):
        w[i, 0] = 1.0
    row = row_normalize(WeightedDigraph(w), 0.15).entries[0]
    assert row[1] == pytest.approx(0.15) and row[2] == pytest.approx(0.15)
    assert row[3:] == pytest.approx([0.7 / 3] * 3)


def test_row_normalize_errors():
    w = np.zeros((3, 3))
    w[0, 1] = w[1, 0] = 1.0
    with pytest.raises(StructuralError, match="client 2"):
        row_normalize(WeightedDigraph(w))
    with pytest.raises(ParameterError):
        row_normalize(WeightedDigraph(CYCLE), 0.5)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12), floor_frac=st.floats(0.0, 0.99))
def test_row_normalize_invariants(seed, n, floor_frac):
    g = generate_er_graph(n, seed)
    w_min = floor_frac / n
    out = row_normalize(g, w_min).entries
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    support = g.weights > 0
    assert np.all(out[~support] == 0)
    assert np.all(out[support] >= w_min - 1e-15)


def test_sigma_two_cycle():
    model = propagation_coefficients(CYCLE, 0.5, 2)
    assert np.array_equal(model.sigma, CYCLE)
    assert model.bound == 1.5


def test_sigma_single_hop_is_w_tilde():
    w = row_normalize(generate_er_graph(10, 1))
    model = propagation_coefficients(w, 0.3, 1)
    assert np.array_equal(model.sigma, w.entries)
    assert model.bound == 1.0


def test_bound_closed_form():
    assert propagation_bound(0.5, 5) == 1.9375


def test_sigma_matches_explicit_power_sum():
    w = row_normalize(generate_er_graph(8, 4)).entries
    expected = sum(0.7 ** (k - 1) * np.linalg.matrix_power(w, k) for k in range(1, 5))
    np.fill_diagonal(expected, 0)
    assert np.allclose(propagation_coefficients(w, 0.7, 4).sigma, expected, atol=1e-14)


def test_sigma_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        propagation_coefficients(CYCLE, 1.0, 2)
    with pytest.raises(ParameterError):
        propagation_coefficients(CYCLE, 0.5, 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 15), lam=st.floats(0.05, 0.95), hops=st.integers(1, 6))
def test_sigma_invariants(seed, n, lam, hops):
    w = row_normalize(generate_er_graph(n, seed))
    m = propagation_coefficients(w, lam, hops)
    assert np.all(np.diag(m.sigma) == 0)
    assert np.all(m.sigma >= 0)
    assert np.all(m.sigma.sum(axis=1) <= m.bound + 1e-12)
    nxt = propagation_coefficients(w, lam, hops + 1)
    assert np.all(nxt.sigma >= m.sigma - 1e-15)


def test_sigma_zero_decay_limit():
    w = row_normalize(generate_er_graph(10, 2)).entries
    off = w.copy()
    np.fill_diagonal(off, 0)
    gaps = [np.abs(propagation_coefficients(w, lam, 4).sigma - off).max() for lam in (1e-2, 1e-3, 1e-4)]
    assert gaps[0] < 2e-2 and gaps[1] < 2e-3 and gaps[2] < 2e-4


@pytest.mark.parametrize(
    "sigma, rho, expected",
    [
        (CYCLE, [0.4, 0.6], [0.6, 0.4]),
        (np.zeros((2, 2)), [0.4, 0.6], [0.0, 0.0]),
        ([[0, 0.5], [0.25, 0]], [2.0, 4.0], [2.0, 0.5]),
    ],
)
def test_external_risk_examples(sigma, rho, expected):
    assert np.allclose(external_risk(np.array(sigma, dtype=float), rho), expected, atol=1e-15)


def test_external_risk_length_mismatch():
    with pytest.raises(ParameterError):
        external_risk(CYCLE, [1.0, 2.0, 3.0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c1=st.floats(-3, 3), c2=st.floats(-3, 3))
def test_external_risk_is_linear(seed, c1, c2):
    rng = np.random.default_rng(seed)
    model = propagation_coefficients(row_normalize(generate_er_graph(9, rng)), 0.5, 3)
    r1, r2 = rng.random(9), rng.random(9)
    lhs = external_risk(model, c1 * r1 + c2 * r2)
    rhs = c1 * external_risk(model, r1) + c2 * external_risk(model, r2)
    assert np.allclose(lhs, rhs, atol=1e-12, rtol=0)


def test_pipeline_is_deterministic():
    def build():
        g = generate_er_graph(12, 99)
        return propagation_coefficients(row_normalize(g, 0.01), 0.5, 5).sigma.tobytes()

    assert build() == build()


def test_graph_text_round_trip(tmp_path):
    g = generate_er_graph(9, 5)
    text = format_graph(g)
    assert text.splitlines()[0] == "n 9"
    back = parse_graph(text)
    assert back.weights.tobytes() == g.weights.tobytes()
    write_graph(g, tmp_path / "g.txt")
    assert (tmp_path / "g.txt").read_text() == text
    assert read_graph(tmp_path / "g.txt").weights.tobytes() == g.weights.tobytes()


@pytest.mark.parametrize(
    "text, where",
    [
        ("", "empty"),
        ("m 3\n", "line 1"),
        ("n 2\n0 1\n", "line 2"),
        ("n 2\n0 5 0.3\n", "line 2"),
        ("n 2\n# comment\n0 1 x\n", "line 3"),
    ],
)
def test_graph_parse_errors(text, where):
    with pytest.raises(StructuralError, match=where):
        parse_graph(text)


def test_row_stochastic_is_read_only():
    m = RowStochasticMatrix(np.eye(2))
    with pytest.raises(ValueError):
        m.entries[0, 0] = 2.0
