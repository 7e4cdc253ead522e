import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from epicrl import envs, kernels
from epicrl.errors import ConfigError, DimensionError, DomainError, UnsupportedError
from epicrl.policy import GibbsLinearPolicy, TabularFeatures, action_probs


# -- construction ---------------------------------------------------------

def test_param_mdp_invariants():
    with pytest.raises(DomainError):
        envs.cartpole(cart_mass=-1.0)
    with pytest.raises(DomainError):
        envs.tabular(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), 3, 0.9)
    with pytest.raises(DomainError):
        envs.tabular(np.ones((1, 1, 1)), np.full((1, 1), 1.5), 3, 0.9)
    with pytest.raises(DimensionError):
        envs.tabular(np.ones((1, 1, 1)), np.zeros((2, 1)), 3, 0.9)
    m = envs.river_chain()
    assert np.max(np.abs(m.transitions.sum(axis=2) - 1.0)) <= 1e-12
    assert (m.n_states, m.n_actions, m.horizon, m.gamma) == (3, 2, 5, 0.9)


def test_distribution_validation():
    with pytest.raises(ConfigError):
        envs.TaskDistribution("chain", ())
    comp = envs.Component(0.7, {"slip": envs.Uniform(0, 0.1)})
    with pytest.raises(ConfigError):
        envs.TaskDistribution("chain", (comp,))
    with pytest.raises(ConfigError):
        envs.Categorical((1.0, 2.0), (0.5, 0.6))


# -- sampling ---------------------------------------------------------------

def test_uniform_preset_ranges_and_determinism():
    td = envs.cartpole_uniform()
    tasks = [envs.sample_task(td, 3, i) for i in range(500)]
    for name, (lo, hi) in {"cart_mass": (1, 5), "pole_mass": (0.1, 0.5), "pole_length": (0.3, 0.7)}.items():
        vals = np.array([t.params[name] for t in tasks])
        assert vals.min() >= lo and vals.max() <= hi
        assert stats.kstest(vals, "uniform", args=(lo, hi - lo)).pvalue > 0.01
    again = [envs.sample_task(td, 3, i) for i in range(500)]
    assert all(a.params == b.params for a, b in zip(tasks, again))
    assert envs.sample_task(td, 4, 0).params != tasks[0].params


def test_gmm_cart_mass_mixture_weights_chi_square():
    td = envs.cartpole_gmm()
    n = 10_000
    masses = np.array([envs.sample_task(td, 11, i).params["cart_mass"] for i in range(n)])
    centers = np.array([1.0, 5.0, 2.0, 4.0, 3.0])
    weights = np.array([0.15, 0.15, 0.18, 0.18, 0.34])
    assert np.all(np.min(np.abs(masses[:, None] - centers), axis=1) < 0.6)
    counts = np.bincount(np.argmin(np.abs(masses[:, None] - centers), axis=1), minlength=5)
    assert stats.chisquare(counts, weights * n).pvalue > 0.01
    # each component's spread matches its declared std
    for k, c in enumerate(centers):
        sel = masses[np.argmin(np.abs(masses[:, None] - centers), axis=1) == k]
        assert abs(sel.std(ddof=1) - 0.1) < 0.01


def test_degenerate_categorical_is_constant():
    td = envs.TaskDistribution("cartpole", (envs.Component(1.0, {
        "cart_mass": envs.Categorical((3.0,), (1.0,)), "pole_mass": envs.Categorical((0.1,), (1.0,)),
        "pole_length": envs.Categorical((0.5,), (1.0,))}),))
    assert {envs.sample_task(td, s).params["cart_mass"] for s in range(50)} == {3.0}


def test_support_clamp_after_resampling():
    td = envs.TaskDistribution("cartpole", (envs.Component(1.0, {
        "cart_mass": envs.Normal(-10.0, 0.01), "pole_mass": envs.Uniform(0.1, 0.2),
        "pole_length": envs.Uniform(0.3, 0.4)}),), {"cart_mass": (0.05, 50.0)}, max_resample=100)
    task = envs.sample_task(td, 0)
    assert task.params["cart_mass"] == 0.05


@given(st.integers(0, 2 ** 32))
def test_sampled_gmm_tasks_valid(seed):
    task = envs.sample_task(envs.cartpole_gmm(), seed)
    assert all(v > 0 for v in task.params.values())


# -- dynamics ---------------------------------------------------------------

def test_tabular_step_lookup():
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[0, 1, 1] = P[1, 0, 0] = P[1, 1, 1] = 1.0
    R = np.array([[1.0, 0.0], [0.0, 0.0]])
    m = envs.tabular(P, R, horizon=4, gamma=0.9)
    assert envs.step(m, 0, 0, 0.5) == (0, 1.0 / 4, False)
    with pytest.raises(DomainError):
        envs.step(m, 0, 2)


def test_cartpole_push_right_moves_right():
    m = envs.cartpole()
    nxt, r, done = envs.step(m, np.zeros(4), 1)
    assert nxt[1] > 0 and r == pytest.approx(1 / 200) and not done
    with pytest.raises(DomainError):
        envs.step(m, np.zeros(4), 5)


def _cartpole_ode(y, force, mc=1.0, mp=0.1, l=0.5, g=9.8):
    x, xd, th, thd = y
    total = mc + mp
    temp = (force + mp * l * thd ** 2 * math.sin(th)) / total
    thacc = (g * math.sin(th) - math.cos(th) * temp) / (l * (4.0 / 3.0 - mp * math.cos(th) ** 2 / total))
    xacc = temp - mp * l * thacc * math.cos(th) / total
    return np.array([xd, xacc, thd, thacc])


def test_cartpole_angle_matches_rk4():
    y = np.zeros(4)
    dt = 0.02 / 20
    for _ in range(50 * 20):
        k1 = _cartpole_ode(y, 10.0)
        k2 = _cartpole_ode(y + dt / 2 * k1, 10.0)
        k3 = _cartpole_ode(y + dt / 2 * k2, 10.0)
        k4 = _cartpole_ode(y + dt * k3, 10.0)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    s = (0.0, 0.0, 0.0, 0.0)
    for _ in range(50):
        s = kernels.cartpole_step(*s, 1, 1.0, 0.1, 0.5)
    assert abs(s[2] - y[2]) < 0.05 * abs(y[2])


def test_cartpole_rewards_normalized_and_bounded():
    m = envs.cartpole()
    feats = m.default_features()
    for seed in range(20):
        tr = envs.rollout_theta(m, np.random.default_rng(seed).normal(size=10), feats, seed)
        assert np.all((tr.rewards >= 0) & (tr.rewards <= 1))
        assert tr.return_discounted <= m.max_return() + 1e-12
        assert len(tr) <= m.n_steps


# -- rollouts and exact evaluation -----------------------------------------------

def _constant_reward_chain(horizon):
    return envs.tabular(np.ones((1, 2, 1)), np.ones((1, 2)), horizon, 0.9, normalize=False)


def test_geometric_series_return():
    m = _constant_reward_chain(11)
    tr = envs.rollout_theta(m, np.zeros(2), m.default_features(), 0)
    assert len(tr) == 10
    assert tr.return_discounted == pytest.approx((1 - 0.9 ** 10) / 0.1, abs=1e-12)
    assert tr.return_discounted == pytest.approx(6.5132, abs=1e-4)
    assert envs.exact_expected_return(m, GibbsLinearPolicy(np.zeros(2), m.default_features())) == \
        pytest.approx(tr.return_discounted, abs=1e-12)


def test_trajectory_return_recomputed_from_steps():
    m = envs.river_chain(slip=0.3)
    tr = envs.rollout_theta(m, np.array([0.2, -0.1, 0.4, 0.0, -0.3, 0.5]), m.default_features(), 5)
    recomputed = sum(0.9 ** h * r for h, (_, _, r) in enumerate(tr.steps))
    assert abs(tr.return_discounted - recomputed) < 1e-10
    assert np.allclose(tr.rewards_to_go()[0], tr.return_discounted, atol=1e-12)


def test_deterministic_policy_on_deterministic_chain():
    m = envs.river_chain(slip=0.0)
    feats = m.default_features()
    theta = np.array([0.0, 60.0, 0.0, 60.0, 0.0, 60.0])  # always move right
    trs = [envs.rollout_theta(m, theta, feats, s) for s in range(10)]
    for tr in trs[1:]:
        assert np.array_equal(tr.states, trs[0].states) and np.array_equal(tr.actions, trs[0].actions)
        assert tr.return_discounted == trs[0].return_discounted
    assert envs.exact_expected_return(m, GibbsLinearPolicy(theta, feats)) == \
        pytest.approx(trs[0].return_discounted, abs=1e-15)


def test_rollout_determinism_per_seed():
    m = envs.sample_task(envs.cartpole_uniform(), 0)
    feats = m.default_features()
    theta = np.random.default_rng(1).normal(size=10)
    a = envs.rollout(m, GibbsLinearPolicy(theta, feats), 9)
    b = envs.rollout(m, GibbsLinearPolicy(theta, feats), 9)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.rewards, b.rewards)


def _enumerate_return(m, pi):
    """Sum over every (state, action) path of probability times discounted return."""
    total = 0.0
    S, A = m.rewards.shape
    n = m.n_steps
    for s0 in range(S):
        for path in itertools.product(range(A), range(S), repeat=n):
            acts, nxts = path[0::2], path[1::2]
            prob, ret, s = m.init[s0], 0.0, s0
            for h, (a, s2) in enumerate(zip(acts, nxts)):
                prob *= pi[s, a] * m.transitions[s, a, s2]
                ret += m.gamma ** h * m.rewards[s, a] * m.reward_scale
                s = s2
            total += prob * ret
    return total


def test_exact_return_matches_hand_enumeration():
    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = 1.0
    P[:, 1, 1] = 1.0
    R = np.array([[1.0, 1.0], [0.0, 0.0]])
    m = envs.tabular(P, R, horizon=3, gamma=0.9, normalize=False)
    pol = GibbsLinearPolicy(np.zeros(4), m.default_features())
    # start in state 0: reward 1 first, then state 0 or 1 with prob 1/2
    assert envs.exact_expected_return(m, pol) == pytest.approx(1.0 + 0.9 * 0.5, abs=1e-15)
    assert envs.exact_expected_return(m, pol) == pytest.approx(_enumerate_return(m, np.full((2, 2), 0.5)),
                                                               abs=1e-15)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
       st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_exact_return_matches_enumeration_on_chains(slip, goal, start, theta):
    m = envs.river_chain(slip=slip, goal_reward=goal, start_reward=start, horizon=4)
    feats = m.default_features()
    pol = GibbsLinearPolicy(np.array(theta), feats)
    pi = np.array([action_probs(pol, s) for s in range(3)])
    J = envs.exact_expected_return(m, pol)
    assert J == pytest.approx(_enumerate_return(m, pi), abs=1e-12)
    assert 0.0 <= J <= m.max_return() + 1e-12


def test_exact_gradient_matches_finite_differences():
    m = envs.river_chain(slip=0.2, goal_reward=0.8, start_reward=0.2)
    feats = m.default_features()
    theta = np.random.default_rng(0).normal(size=6)
    _, g = envs.exact_value_and_grad(m, feats, theta[None])
    h = 1e-6
    fd = [(envs.exact_value_and_grad(m, feats, (theta + h * e)[None], False)[0][0]
           - envs.exact_value_and_grad(m, feats, (theta - h * e)[None], False)[0][0]) / (2 * h)
          for e in np.eye(6)]
    assert np.allclose(g[0], fd, rtol=1e-6, atol=1e-10)


def test_exact_evaluation_rejects_cartpole():
    m = envs.cartpole()
    with pytest.raises(UnsupportedError):
        envs.exact_expected_return(m, GibbsLinearPolicy(np.zeros(10), m.default_features()))


def test_monte_carlo_matches_exact_uniform_policy():
    m = envs.river_chain(slip=0.3, n_states=2)
    feats = m.default_features()
    n = 100_000
    returns = np.array([envs.rollout_theta(m, np.zeros(4), feats, s).return_discounted for s in range(n)])
    exact = envs.exact_expected_return(m, GibbsLinearPolicy(np.zeros(4), feats))
    assert abs(returns.mean() - exact) < 0.01 * exact
    assert abs(returns.mean() - exact) < 3 * returns.std(ddof=1) / math.sqrt(n)


def test_monte_carlo_matches_exact_four_state_chain():
    m = envs.river_chain(slip=0.25, n_states=4, horizon=6, start_reward=0.3)
    feats = TabularFeatures(np.random.default_rng(2).normal(size=(4, 2, 3)))
    theta = np.array([0.5, -0.4, 0.2])
    n = 100_000
    returns = np.array([envs.rollout_theta(m, theta, feats, s).return_discounted for s in range(n)])
    exact = envs.exact_expected_return(m, GibbsLinearPolicy(theta, feats))
    assert abs(returns.mean() - exact) < 3 * returns.std(ddof=1) / math.sqrt(n)
