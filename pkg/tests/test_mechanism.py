import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mppfl.errors import DomainError, ParameterError
from mppfl.graph import PropagationModel, external_risk
from mppfl.mechanism import (
    ClientProfile,
    ServerModelParams,
    accuracy_loss_bound,
    client_utility,
    client_utility_mf,
    composite_risk,
    computation_cost,
    epsilon_i,
    noise_variance,
    roster,
    server_cost,
    social_welfare,
)

from conftest import random_instance

CYCLE = PropagationModel(lam=0.5, hops=1, sigma=np.array([[0.0, 1.0], [1.0, 0.0]]))
UNIT = ClientProfile(a=1.0, b=1.0, data_size=1)

positive = st.floats(1e-3, 1e3)


# -- noise calibration ----------------------------------------------------------


def test_noise_variance_examples():
    assert noise_variance(1.0, 1, 2.0) == 1.0
    # exact rational value 1/25
    assert noise_variance(10.0, 100, 0.5) == pytest.approx(0.04, rel=1e-15)


@given(clip=positive, size=st.integers(1, 10_000), rho=positive)
def test_noise_variance_inverse_in_rho(clip, size, rho):
    assert noise_variance(clip, size, 2 * rho) == noise_variance(clip, size, rho) / 2


@pytest.mark.parametrize("rho", [0.0, -1.0])
def test_noise_variance_domain(rho):
    with pytest.raises(DomainError):
        noise_variance(1.0, 10, rho)


def test_noise_variance_vectorized():
    out = noise_variance(1.0, np.array([1, 2]), np.array([1.0, 1.0]))
    assert np.array_equal(out, [2.0, 0.5])


# -- accuracy constants -------------------------------------------------------------


def test_epsilon_examples():
    assert epsilon_i(ServerModelParams(), 1.0, 1) == 1.0
    p = ServerModelParams(dim=10, beta=2, clip=5, mu=2)
    assert epsilon_i(p, 0.1, 50) == pytest.approx(5e-4, rel=1e-14)
    assert epsilon_i(p, 0.2, 50) == pytest.approx(4 * epsilon_i(p, 0.1, 50), rel=1e-15)


def test_accuracy_bound_examples():
    p = ServerModelParams()
    assert accuracy_loss_bound(1, p, [1.0], [1.0]) == 1.5
    assert accuracy_loss_bound(3, p, [1.0], [np.inf]) == pytest.approx(0.5 / 3)
    assert accuracy_loss_bound(2, p, [1.0, 0.5], [2.0, 2.0]) < accuracy_loss_bound(2, p, [1.0, 0.5], [1.0, 1.0])
    with pytest.raises(DomainError):
        accuracy_loss_bound(0, p, [1.0], [1.0])
    with pytest.raises(DomainError):
        accuracy_loss_bound(1, p, [1.0], [0.0])


# -- costs and utilities --------------------------------------------------------------


def test_composite_risk():
    assert composite_risk(0.7, 0.0, 5.0) == 0.7
    assert composite_risk(1.0, 0.1, 2.0) == pytest.approx(1.2)
    assert composite_risk(1.0, 0.1, 2.5) > composite_risk(1.0, 0.1, 2.0)


def test_computation_cost():
    assert computation_cost(ClientProfile(1, 1, 100, kappa=1, xi=1, freq=1, local_epochs=5)) == 500
    assert computation_cost(ClientProfile(1, 1, 100, kappa=0, xi=1, freq=1, local_epochs=5)) == 0
    one = computation_cost(ClientProfile(1, 1, 100, kappa=0.3, xi=2, freq=1.5, local_epochs=1))
    assert computation_cost(ClientProfile(1, 1, 100, kappa=0.3, xi=2, freq=1.5, local_epochs=7)) == pytest.approx(7 * one)


def test_client_utility_examples():
    p = ClientProfile(1, 1, 1, kappa=0.5, xi=1, freq=1, local_epochs=1)
    assert client_utility(3.0, 1.0, 0.0, p, 0.1) == pytest.approx(0.5, abs=1e-15)
    assert abs(client_utility(0.0, 1e-12, 0.0, UNIT, 0.1)) < 1e-11
    # s = 0.99, exact value 7299/10000
    assert client_utility_mf(3.0, 0.9, 0.45, UNIT, 0.1, 2) == pytest.approx(0.7299, abs=1e-14)
    # zero estimate gives the social-agnostic utility
    assert client_utility_mf(2.0, 0.4, 0.0, UNIT, 0.3, 10) == client_utility(2.0, 0.4, 0.0, UNIT, 0.0)


def test_server_cost_examples():
    assert server_cost(2.0, [1.0], [1.0], 0.5, 1) == 1.5
    assert server_cost(2.0, [1.0, 2.0], [1.0, 1.0], 1 - 1e-12, 2) == pytest.approx(0.75)
    assert server_cost(1.0, [1e-12], [1.0], 0.5, 1) > 1e11
    with pytest.raises(DomainError):
        server_cost(1.0, [1.0], [1.0], 0.5, 0)


def test_welfare_examples():
    # s = 1.1 for both clients, exact value 69/50
    assert social_welfare([3.0], [[1.0, 1.0]], CYCLE, [UNIT, UNIT], 0.1) == pytest.approx(1.38, abs=1e-14)
    assert social_welfare([3.0], [[0.0, 0.0]], CYCLE, [UNIT, UNIT], 0.1) == 0.0
    profiles = roster([0.5, 2.0], [1.0, 0.3], [10, 20])
    zero = PropagationModel(0.5, 1, np.zeros((2, 2)))
    rho = np.array([0.6, 0.25])
    expected = sum(2.0 * r - p.a * r**2 - p.b * r for r, p in zip(rho, profiles))
    assert social_welfare(2.0, rho, zero, profiles, 0.2) == pytest.approx(expected, abs=1e-14)


def test_welfare_sums_over_iterations():
    model, profiles, _ = random_instance(3, n=6)
    rng = np.random.default_rng(0)
    rewards, budgets = rng.uniform(1, 2, 4), rng.uniform(0.1, 1, (4, 6))
    total = social_welfare(rewards, budgets, model, profiles, 0.05)
    parts = sum(social_welfare(rewards[k], budgets[k], model, profiles, 0.05) for k in range(4))
    assert total == pytest.approx(parts, rel=1e-13)


# -- validation -------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [dict(a=0, b=1, data_size=1), dict(a=1, b=-1, data_size=1), dict(a=1, b=1, data_size=0), dict(a=1, b=1, data_size=1.5),
     dict(a=1, b=1, data_size=1, theta=1.5), dict(a=1, b=1, data_size=1, kappa=-1)],
)
def test_profile_validation(kwargs):
    with pytest.raises(ParameterError):
        ClientProfile(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(tau=1.0), dict(alpha=0.0), dict(alpha=1.0), dict(mu=0), dict(clip=-1)])
def test_server_params_validation(kwargs):
    with pytest.raises(ParameterError):
        ServerModelParams(**kwargs)


@given(sizes=st.lists(st.integers(1, 10**6), min_size=1, max_size=50))
def test_roster_theta_sums_to_one(sizes):
    profiles = roster(np.ones(len(sizes)), np.ones(len(sizes)), sizes)
    assert abs(sum(p.theta for p in profiles) - 1.0) <= 1e-12


# -- properties ---------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_mean_field_bridge(seed):
    model, profiles, _ = random_instance(seed, n=8)
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.01, 2, 8)
    risk = external_risk(model, rho)
    for i, p in enumerate(profiles):
        exact = client_utility(1.7, rho[i], risk[i], p, 0.05)
        mf = client_utility_mf(1.7, rho[i], risk[i] / 8, p, 0.05, 8)
        assert abs(exact - mf) <= 1e-12


@given(a=st.floats(0.1, 10), b=st.floats(0.1, 10), r=st.floats(0, 10), phi=st.floats(0, 5), rho=st.floats(0.01, 5), h=st.floats(1e-3, 0.5))
def test_mean_field_utility_strictly_concave(a, b, r, phi, rho, h):
    p = ClientProfile(a, b, 10)
    u = [client_utility_mf(r, x, phi, p, 0.1, 20) for x in (rho - h, rho, rho + h)]
    assert u[0] - 2 * u[1] + u[2] < 0


@settings(max_examples=100)
@given(seed=st.integers(0, 10**6), h=st.floats(1e-3, 0.5))
def test_server_cost_convex_in_each_budget(seed, h):
    rng = np.random.default_rng(seed)
    n = 5
    rho = rng.uniform(0.6, 2.0, n)
    eps, i = rng.uniform(0.01, 1, n), int(rng.integers(n))
    vals = []
    for d in (-h, 0.0, h):
        x = rho.copy()
        x[i] += d
        vals.append(server_cost(1.3, x, eps, 0.4, 3))
    assert vals[0] - 2 * vals[1] + vals[2] > 0


def test_welfare_ignores_computation_cost():
    model, _, _ = random_instance(1, n=5)
    rng = np.random.default_rng(1)
    a, b, sizes = rng.uniform(0.5, 1.5, 5), rng.uniform(0.5, 1.5, 5), rng.integers(50, 500, 5)
    cheap = roster(a, b, sizes)
    dear = roster(a, b, sizes, kappa=0.3, xi=2.0, freq=4.0)
    rho = rng.uniform(0.1, 1, 5)
    assert social_welfare(2.0, rho, model, cheap, 0.05) == social_welfare(2.0, rho, model, dear, 0.05)
    risk = external_risk(model, rho)
    assert client_utility(2.0, rho[0], risk[0], cheap[0], 0.05) != client_utility(2.0, rho[0], risk[0], dear[0], 0.05)
