import math
from dataclasses import replace

import numpy as np
import pytest

from epicrl import envs, epic
from epicrl.errors import ConfigError, ProtocolError, UnsupportedError
from epicrl.pacbayes import RegularizerConfig, kl_budget
from epicrl.policy import GaussianPolicyDistribution, LayeredGaussianPolicy, TabularFeatures, kl_diag_gaussian, to_json


def _chain_stream(K=40, **kw):
    return epic.StreamConfig(envs.chain_fixed(), K=K, **kw)


def _chain_cfg(N=5, **kw):
    return RegularizerConfig(N=N, H=5, K=40, r=0.5, **kw)


def _buffer(tasks):
    buf = epic.MemoryBuffer(len(tasks))
    for t in tasks:
        buf.add(t)
    return buf


# -- memory and protocol ---------------------------------------------------------

def test_memory_buffer_capacity():
    buf = epic.MemoryBuffer(2)
    buf.add(envs.river_chain())
    buf.add(envs.river_chain())
    assert buf.full
    with pytest.raises(ProtocolError):
        buf.add(envs.river_chain())
    buf.clear()
    assert len(buf) == 0
    with pytest.raises(ConfigError):
        epic.MemoryBuffer(0)


def test_update_requires_full_window():
    cfg = _chain_cfg(N=3)
    state = epic.LifelongState.initial(GaussianPolicyDistribution.initial(6, 0.1), 0.9, 3.0, 2)
    with pytest.raises(ProtocolError):
        epic.epicg_update(state, _buffer([envs.river_chain()] * 2), cfg, 0)


# -- single update -------------------------------------------------------------------

def test_constant_return_leaves_distribution_unchanged():
    flat = envs.bandit([0.5, 0.5], horizon=4)
    cfg = RegularizerConfig(N=3, H=4, reg_scale=0.0)
    post = GaussianPolicyDistribution([0.3, -0.2], [0.4, 0.7])
    state = epic.LifelongState.initial(post, 0.9, 3.0, 1)
    new = epic.epicg_update(state, _buffer([flat] * 3), cfg, 5)
    assert np.allclose(new.posterior.mu, post.mu, atol=1e-12)
    assert np.allclose(new.posterior.sigma, post.sigma, rtol=1e-12)


def test_full_prior_speed_copies_posterior():
    task = envs.river_chain(slip=0.2)
    cfg = RegularizerConfig(N=2, H=5, lambda0=1.0, alpha=0.5)
    state = epic.LifelongState.initial(GaussianPolicyDistribution.initial(6, 0.3), 1.0, 3.0, 3)
    s1 = epic.epicg_update(state, _buffer([task] * 2), cfg, 1)
    assert s1.prior == s1.posterior
    assert s1.last.kl_step == 0.0
    assert kl_diag_gaussian(s1.posterior, s1.prior) == 0.0
    assert s1.lambda_now == 0.5


def test_update_bookkeeping():
    cfg = _chain_cfg(N=3, lambda0=0.8, alpha=0.9)
    task = envs.river_chain(slip=0.1)
    state = epic.LifelongState.initial(GaussianPolicyDistribution.initial(6, 0.2), cfg.lambda0, 3.0, 4)
    lam = cfg.lambda0
    for l in range(1, 8):
        buf = _buffer([task] * 3)
        old = state
        state = epic.epicg_update(replace(state, tasks_seen=3 * l), buf, cfg, l)
        assert len(buf) == 0
        lam *= cfg.alpha
        assert state.lambda_now == lam
        assert state.update_index == l
        lo_mu = np.minimum(old.prior.mu, state.posterior.mu)
        hi_mu = np.maximum(old.prior.mu, state.posterior.mu)
        assert np.all((state.prior.mu >= lo_mu - 1e-15) & (state.prior.mu <= hi_mu + 1e-15))
        lo_s = np.minimum(old.prior.sigma, state.posterior.sigma)
        hi_s = np.maximum(old.prior.sigma, state.posterior.sigma)
        assert np.all((state.prior.sigma >= lo_s - 1e-15) & (state.prior.sigma <= hi_s + 1e-15))
        assert np.all(state.prior.sigma > 0)
        rec = state.last
        assert rec.kl_step == kl_diag_gaussian(state.posterior, state.prior)
        assert rec.kl_budget == kl_budget(cfg, l + 1)
        assert rec.lambda_used == lam / cfg.alpha


def test_non_finite_gradient_skips_update(monkeypatch):
    def bad(*args, **kwargs):
        g = np.full(6, np.nan)
        return g, g, 0.0, 0.1, 0.0
    monkeypatch.setattr(epic, "monte_carlo_gradient", bad)
    cfg = _chain_cfg(N=2)
    state = epic.LifelongState.initial(GaussianPolicyDistribution.initial(6, 0.1), 0.9, 3.0, 2)
    buf = _buffer([envs.river_chain()] * 2)
    new = epic.epicg_update(state, buf, cfg, 0)
    assert new.last.skipped and len(buf) == 0
    assert new.posterior is state.posterior and new.prior is state.prior
    assert new.lambda_now == state.lambda_now


def test_regularizer_pulls_posterior_to_prior():
    silent = envs.bandit([0.0, 0.0], horizon=2)
    cfg = RegularizerConfig(N=1, H=2, lambda0=0.5, alpha=0.95, reg_scale=1.0)
    prior = GaussianPolicyDistribution([0.0, 0.0], [1.0, 1.0])
    post = GaussianPolicyDistribution([0.8, -0.5], [1.5, 0.7])
    state = epic.LifelongState(post, prior, cfg.lambda0, beta=0.5, M=2)
    kls = [kl_diag_gaussian(post, prior)]
    for l in range(400):
        state = epic.epicg_update(state, _buffer([silent]), cfg, l)
        kls.append(state.last.kl_step)
        if kls[-1] < 1e-6:
            break
    assert kls[-1] < 1e-6
    assert np.all(np.diff(kls) < 0)


# -- gradients ----------------------------------------------------------------------

def _bandit_setup():
    tasks = [envs.bandit([1.0, 0.0]), envs.bandit([0.2, 0.9])]
    feats = tasks[0].default_features()
    post = GaussianPolicyDistribution([0.3, -0.4], [0.9, 1.1])
    prior = GaussianPolicyDistribution([0.0, 0.1], [1.0, 0.8])
    return tasks, feats, post, prior


def test_quadrature_gradient_matches_finite_differences():
    tasks, feats, post, prior = _bandit_setup()
    cfg = RegularizerConfig(N=2, H=2)
    _, g_mu, g_ls = epic.objective_and_grad_quadrature(post, prior, tasks, feats, cfg)
    analytic = np.concatenate([g_mu, g_ls])
    x0 = np.concatenate([post.mu, post.log_sigma])
    h = 1e-6
    fd = []
    for e in np.eye(4):
        vals = []
        for sgn in (1, -1):
            x = x0 + sgn * h * e
            p = GaussianPolicyDistribution.from_log_sigma(x[:2], x[2:])
            vals.append(epic.objective_and_grad_quadrature(p, prior, tasks, feats, cfg)[0])
        fd.append((vals[0] - vals[1]) / (2 * h))
    assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) < 1e-4


def test_three_dimensional_quadrature_gradient():
    task = envs.tabular(np.ones((1, 3, 1)), np.array([[0.9, 0.1, 0.5]]), 2, 0.9, normalize=False)
    feats = task.default_features()
    post = GaussianPolicyDistribution([0.2, -0.1, 0.4], [0.5, 0.8, 0.6])
    prior = GaussianPolicyDistribution.initial(3, 1.0)
    cfg = RegularizerConfig(N=1, H=2)
    _, g_mu, g_ls = epic.objective_and_grad_quadrature(post, prior, [task], feats, cfg, n_points=16)
    x0 = np.concatenate([post.mu, post.log_sigma])
    h = 1e-6
    fd = []
    for e in np.eye(6):
        f = [epic.objective_and_grad_quadrature(
            GaussianPolicyDistribution.from_log_sigma((x0 + s * h * e)[:3], (x0 + s * h * e)[3:]),
            prior, [task], feats, cfg, n_points=16)[0] for s in (1, -1)]
        fd.append((f[0] - f[1]) / (2 * h))
    assert np.linalg.norm(np.concatenate([g_mu, g_ls]) - fd) / np.linalg.norm(fd) < 1e-4


def test_monte_carlo_gradient_is_unbiased_on_chain():
    task = envs.river_chain(slip=0.2, goal_reward=0.8, start_reward=0.3)
    feats = TabularFeatures(np.random.default_rng(0).normal(size=(3, 2, 2)))
    post = GaussianPolicyDistribution([0.4, -0.3], [0.5, 0.6])
    cfg = RegularizerConfig(N=4, H=5, reg_scale=0.0)
    _, q_mu, q_ls = epic.objective_and_grad_quadrature(post, post, [task] * 4, feats, cfg)
    draws = [epic.monte_carlo_gradient(post, post, [task] * 4, feats, cfg, 50, s) for s in range(400)]
    g = np.array([np.concatenate(d[:2]) for d in draws])
    mean, se = g.mean(0), g.std(0, ddof=1) / math.sqrt(len(g))
    assert np.all(np.abs(mean - np.concatenate([q_mu, q_ls])) < 4 * se)


def test_layered_kl_gradient_matches_finite_differences():
    post = LayeredGaussianPolicy.initialize([3, 4, 2], seed=1)
    prior = LayeredGaussianPolicy.initialize([3, 4, 2], seed=2)
    g_mu, g_delta = epic._layered_kl_grad(post, prior)
    mu, delta = post.flat_mu(), post.flat_delta()
    h = 1e-4  # the KL is ~1e5 here, so smaller steps lose digits to cancellation
    kl = lambda m, d: kl_diag_gaussian(post.with_flat(m, d).as_flat(), prior.as_flat())  # noqa: E731
    for i in (0, 5, mu.size - 1):
        e = np.zeros(mu.size)
        e[i] = h
        assert g_mu[i] == pytest.approx((kl(mu + e, delta) - kl(mu - e, delta)) / (2 * h), rel=1e-5, abs=1e-6)
        assert g_delta[i] == pytest.approx((kl(mu, delta + e) - kl(mu, delta - e)) / (2 * h), rel=1e-5, abs=1e-6)


# -- whole runs ------------------------------------------------------------------------

def test_single_update_when_k_equals_n():
    run = epic.run_lifelong(_chain_stream(K=5), _chain_cfg(N=5), 0)
    assert len(run.updates) == 1 and run.updates[0].tasks_seen == 5
    assert run.update_index == [0, 0, 0, 0, 0]
    assert len(run.snapshots) == 2


def test_run_is_deterministic():
    stream, cfg = _chain_stream(K=20), _chain_cfg(N=5)
    a, b = epic.run_lifelong(stream, cfg, 17), epic.run_lifelong(stream, cfg, 17)
    assert a.rewards == b.rewards
    assert [to_json(s) for s in a.snapshots] == [to_json(s) for s in b.snapshots]
    assert a.updates == b.updates
    c = epic.run_lifelong(stream, cfg, 18)
    assert c.rewards != a.rewards


def test_trailing_tasks_noted():
    run = epic.run_lifelong(_chain_stream(K=7), _chain_cfg(N=5), 0)
    assert len(run.updates) == 1 and "2 trailing tasks" in run.notes[0]


def test_horizon_mismatch_rejected():
    with pytest.raises(ConfigError):
        epic.run_lifelong(_chain_stream(K=10), RegularizerConfig(N=5, H=200), 0)


def test_fine_tune_zero_steps_matches_lifelong():
    stream, cfg = _chain_stream(K=20), _chain_cfg(N=5)
    assert epic.epicg_ft(stream, cfg, 0, 3).rewards == epic.run_lifelong(stream, cfg, 3).rewards


def test_fine_tune_improves_and_leaves_world_policy_alone():
    stream, cfg = _chain_stream(K=40), _chain_cfg(N=5)
    base = epic.run_lifelong(stream, cfg, 1)
    tuned = epic.epicg_ft(stream, cfg, 50, 1)
    assert np.mean(tuned.reward_array >= base.reward_array) >= 0.9
    assert [to_json(s) for s in tuned.snapshots] == [to_json(s) for s in base.snapshots]


def test_reinforce_steps_does_not_mutate_input():
    theta = np.zeros(6)
    out = epic.reinforce_steps(theta, envs.river_chain(), envs.river_chain().default_features(), 5, 3, 3.0, 0)
    assert np.array_equal(theta, np.zeros(6)) and not np.array_equal(out, theta)


def test_baseline_without_training_is_random_init():
    stream = _chain_stream(K=10)
    run = epic.single_task_baseline(stream, 0, 4)
    task = envs.sample_task(stream.env, 4, 1)
    assert np.all(run.reward_array == epic.evaluate(task, np.zeros(6), task.default_features()))
    with pytest.raises(ConfigError):
        epic.single_task_baseline(stream, -1, 0)


def test_transfer_trend_versus_baseline():
    stream, cfg = _chain_stream(K=40), _chain_cfg(N=5)
    x = np.arange(40)
    for seed in range(1, 6):
        base = epic.single_task_baseline(stream, 1, seed).reward_array
        assert np.all(base == base[0])
        assert np.polyfit(x, base, 1)[0] <= 1e-12
        assert np.polyfit(x, epic.run_lifelong(stream, cfg, seed).reward_array, 1)[0] > 0


def test_mlp_policy_run():
    stream = epic.StreamConfig(envs.chain_suite(), K=10, M=2, policy="mlp", hidden=(4,))
    run = epic.run_lifelong(stream, RegularizerConfig(N=5, H=5, K=10), 2)
    assert len(run.updates) == 2
    assert all(np.isfinite(run.rewards))
    assert isinstance(run.snapshots[-1], LayeredGaussianPolicy)
    assert math.isnan(run.updates[0].s_min_hat)
    with pytest.raises(UnsupportedError):
        epic.epicg_ft(stream, RegularizerConfig(N=5, H=5, K=10), 2, 0)


# -- training-error decomposition ------------------------------------------------

def _scalar_features():
    psi = np.zeros((3, 2, 1))
    psi[:, 1, 0] = 1.0
    return TabularFeatures(psi)


def test_proposition1_single_window():
    feats = _scalar_features()
    tasks = [envs.river_chain(slip=s) for s in (0.1, 0.3)]
    lhs, rhs = epic.proposition1_check(tasks, [GaussianPolicyDistribution([0.5], [0.7])], 1, 2, feats)
    assert lhs == rhs


def test_proposition1_two_windows_coupled():
    feats = _scalar_features()
    tasks = [envs.river_chain(slip=s, goal_reward=g) for s, g in ((0.1, 1.0), (0.3, 0.6), (0.0, 0.8), (0.2, 0.9))]
    joint = [GaussianPolicyDistribution([0.5], [0.7]), GaussianPolicyDistribution([-0.2], [0.4])]
    lhs, rhs = epic.proposition1_check(tasks, joint, 2, 2, feats, coupling=[0.0, 0.6], n_points=64)
    assert abs(lhs - rhs) < 1e-8


def test_proposition1_identical_windows():
    feats = _scalar_features()
    task = envs.river_chain()
    P = GaussianPolicyDistribution([0.1], [0.5])
    lhs, rhs = epic.proposition1_check([task] * 4, [P, P], 2, 2, feats)
    window = epic.proposition1_check([task] * 2, [P], 1, 2, feats)[0]
    assert lhs == pytest.approx(window, abs=1e-12) and rhs == pytest.approx(window, abs=1e-12)


def test_proposition1_dimension_limit():
    with pytest.raises(UnsupportedError):
        epic.proposition1_check([envs.river_chain()] * 2, [GaussianPolicyDistribution.initial(6, 1.0)] * 2, 2, 1,
                                envs.river_chain().default_features())
