"""Parameterized MDPs and the task distributions that generate lifelong streams.

A horizon of ``H`` means ``H - 1`` reward-bearing steps, and the discounted
return is ``sum_{h=1}^{H-1} gamma^(h-1) r_h``. With ``normalize=True`` every
per-step reward is scaled by ``1/H`` so an episode's undiscounted return lies
in ``[0, 1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, DomainError, UnsupportedError
from .policy import BlockStateFeatures, GibbsLinearPolicy, MlpPolicy, TabularFeatures, softmax_rows
from .rng import generator

CARTPOLE = "cartpole"
CHAIN = "chain"
CARTPOLE_STATE_DIM = 4
CARTPOLE_ACTIONS = 2
CARTPOLE_PARAMS = ("cart_mass", "pole_mass", "pole_length")
# rough magnitudes of (x, x_dot, angle, angle_dot) before failure; puts features on a common scale
CARTPOLE_FEATURE_SCALE = (2.4, 2.0, 0.21, 2.0)


@dataclass(frozen=True, eq=False)
class ParamMdp:
    """One task: an environment instance plus horizon and discount.

    ``params`` holds the scalar task parameters that are logged per task. Tabular
    tasks additionally carry ``transitions[s, a, s']``, raw ``rewards[s, a]`` in
    [0, 1] and an initial-state distribution.
    """

    kind: str
    params: Mapping[str, float]
    horizon: int
    gamma: float
    normalize: bool = True
    transitions: np.ndarray | None = None
    rewards: np.ndarray | None = None
    init: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (CARTPOLE, CHAIN):
            raise DomainError(f"unknown MDP kind {self.kind!r}")
        if int(self.horizon) < 1:
            raise DomainError("horizon must be a positive integer")
        if not 0.0 < self.gamma < 1.0 and self.gamma != 1.0:
            raise DomainError("discount must lie in (0, 1]")
        object.__setattr__(self, "params", dict(self.params))
        if self.kind == CARTPOLE:
            for name in CARTPOLE_PARAMS:
                value = self.params.get(name)
                if value is None or not value > 0 or not math.isfinite(value):
                    raise DomainError(f"cart-pole parameter {name} must be finite and positive")
            return
        P = np.array(self.transitions, dtype=np.float64)
        R = np.array(self.rewards, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise DimensionError("tabular MDP needs transitions (S, A, S) and rewards (S, A)")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise DomainError("transition rows must be probability vectors")
        if np.any(R < 0) or np.any(R > 1):
            raise DomainError("raw rewards must lie in [0, 1]")
        nu = np.zeros(P.shape[0]) if self.init is None else np.array(self.init, dtype=np.float64)
        if self.init is None:
            nu[0] = 1.0
        if nu.shape != (P.shape[0],) or np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-12:
            raise DomainError("initial distribution must be a probability vector over states")
        for name, arr in (("transitions", P), ("rewards", R), ("init", nu)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_steps(self) -> int:
        return int(self.horizon) - 1

    @property
    def reward_scale(self) -> float:
        return 1.0 / self.horizon if self.normalize else 1.0

    @property
    def n_actions(self) -> int:
        return CARTPOLE_ACTIONS if self.kind == CARTPOLE else self.transitions.shape[1]

    @property
    def n_states(self) -> int:
        if self.kind != CHAIN:
            raise UnsupportedError("continuous state space")
        return self.transitions.shape[0]

    @property
    def is_tabular(self) -> bool:
        return self.kind == CHAIN

    def max_return(self) -> float:
        """Upper bound on the discounted return given rewards in [0, scale]."""
        g = self.gamma
        n = self.n_steps
        series = float(n) if g == 1.0 else (1.0 - g ** n) / (1.0 - g)
        return self.reward_scale * series

    def default_features(self):
        if self.kind == CARTPOLE:
            return BlockStateFeatures(CARTPOLE_ACTIONS, CARTPOLE_STATE_DIM, CARTPOLE_FEATURE_SCALE)
        return TabularFeatures.one_hot(self.n_states, self.n_actions)


def cartpole(cart_mass: float = 1.0, pole_mass: float = 0.1, pole_length: float = 0.5,
             horizon: int = 200, gamma: float = 0.99, normalize: bool = True) -> ParamMdp:
    """Cart-pole task; ``pole_length`` is the half-length, as in the classic benchmark."""
    params = {"cart_mass": float(cart_mass), "pole_mass": float(pole_mass),
              "pole_length": float(pole_length)}
    return ParamMdp(CARTPOLE, params, horizon, gamma, normalize)


def tabular(transitions, rewards, horizon: int, gamma: float, init=None, params=None,
            normalize: bool = True) -> ParamMdp:
    return ParamMdp(CHAIN, params or {}, horizon, gamma, normalize, transitions, rewards, init)


def river_chain(slip: float = 0.1, goal_reward: float = 1.0, start_reward: float = 0.1,
                n_states: int = 3, horizon: int = 5, gamma: float = 0.9,
                normalize: bool = True) -> ParamMdp:
    """A short chain: action 0 moves left for a small reward at the start state,
    action 1 tries to move right (slipping back in place with prob ``slip``) and
    pays ``goal_reward`` when pushing at the far end."""
    if not 0.0 <= slip <= 1.0:
        raise DomainError("slip must be a probability")
    S = int(n_states)
    P = np.zeros((S, 2, S))
    R = np.zeros((S, 2))
    for s in range(S):
        P[s, 0, max(s - 1, 0)] = 1.0
        right = min(s + 1, S - 1)
        P[s, 1, right] += 1.0 - slip
        P[s, 1, s] += slip
    R[0, 0] = start_reward
    R[S - 1, 1] = goal_reward
    params = {"slip": float(slip), "goal_reward": float(goal_reward),
              "start_reward": float(start_reward)}
    return tabular(P, R, horizon, gamma, params=params, normalize=normalize)


def bandit(arm_rewards: Sequence[float], horizon: int = 2, gamma: float = 0.9,
           normalize: bool = False) -> ParamMdp:
    """Single-state MDP whose arms pay fixed rewards; horizon 2 gives one pull."""
    r = np.asarray(arm_rewards, dtype=np.float64).reshape(1, -1)
    P = np.ones((1, r.shape[1], 1))
    params = {f"arm_{a}": float(v) for a, v in enumerate(r[0])}
    return tabular(P, r, horizon, gamma, params=params, normalize=normalize)


TASK_BUILDERS = {
    CARTPOLE: cartpole,
    CHAIN: river_chain,
}


# ---------------------------------------------------------------------------
# Task distributions

@dataclass(frozen=True)
class Normal:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std >= 0:
            raise ConfigError("Normal std must be non-negative")

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.mean + self.std * rng.standard_normal())


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ConfigError("Uniform needs lo <= hi")

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.lo + (self.hi - self.lo) * rng.random())


@dataclass(frozen=True)
class Categorical:
    values: tuple
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if not self.values or len(self.values) != len(self.probs):
            raise ConfigError("Categorical needs equally many values and probabilities")
        if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-12:
            raise ConfigError("Categorical probabilities must be non-negative and sum to 1")

    def sample(self, rng: np.random.Generator) -> float:
        u = rng.random()
        acc = 0.0
        for v, p in zip(self.values[:-1], self.probs[:-1]):
            acc += p
            if u < acc:
                return v
        return self.values[-1]


@dataclass(frozen=True)
class Component:
    weight: float
    params: Mapping[str, object]


@dataclass(frozen=True, eq=False)
class TaskDistribution:
    """Mixture over task parameters, feeding a builder from ``TASK_BUILDERS``.

    ``support`` maps a parameter to its allowed closed interval; draws outside it
    are redrawn up to ``max_resample`` times and then clamped.
    """

    kind: str
    components: tuple
    support: Mapping[str, tuple] = field(default_factory=dict)
    horizon: int = 200
    gamma: float = 0.99
    normalize: bool = True
    max_resample: int = 100

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if self.kind not in TASK_BUILDERS:
            raise ConfigError(f"unknown environment kind {self.kind!r}")
        if not comps:
            raise ConfigError("task distribution has no components")
        weights = np.array([c.weight for c in comps], dtype=np.float64)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigError("component weights must be non-negative and sum to 1")
        names = set(comps[0].params)
        for c in comps[1:]:
            if set(c.params) != names:
                raise ConfigError("every component must specify the same parameters")

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components], dtype=np.float64)

    @property
    def param_names(self) -> list[str]:
        return list(self.components[0].params)

    def build(self, params: Mapping[str, float]) -> ParamMdp:
        return TASK_BUILDERS[self.kind](**params, horizon=self.horizon, gamma=self.gamma,
                                        normalize=self.normalize)


def _pick_component(weights, u: float) -> int:
    acc = 0.0
    for k, w in enumerate(weights[:-1]):
        acc += w
        if u < acc:
            return k
    return len(weights) - 1


def sample_params(td: TaskDistribution, rng: np.random.Generator) -> tuple[int, dict]:
    """Draw (component index, parameter record) with support clamping."""
    k = _pick_component([c.weight for c in td.components], rng.random())
    out = {}
    for name, dist in td.components[k].params.items():
        value = dist.sample(rng)
        bounds = td.support.get(name)
        if bounds is not None:
            lo, hi = bounds
            tries = 0
            while not lo <= value <= hi and tries < td.max_resample:
                value = dist.sample(rng)
                tries += 1
            value = min(max(value, lo), hi)
        out[name] = value
    return k, out


def sample_task(td: TaskDistribution, rng_seed, index: int = 0) -> ParamMdp:
    if not td.components:
        raise ConfigError("task distribution has no components")
    _, params = sample_params(td, generator(rng_seed, "task", index))
    return td.build(params)


_CARTPOLE_SUPPORT = {"cart_mass": (0.05, 50.0), "pole_mass": (0.005, 5.0), "pole_length": (0.05, 5.0)}
_GMM_CENTERS = ((1.0, 0.4, 0.3), (5.0, 0.5, 0.7), (2.0, 0.2, 0.4), (4.0, 0.3, 0.6), (3.0, 0.1, 0.5))
_GMM_WEIGHTS = (0.15, 0.15, 0.18, 0.18, 0.34)


def cartpole_uniform(horizon: int = 200, gamma: float = 0.99) -> TaskDistribution:
    comp = Component(1.0, {"cart_mass": Uniform(1.0, 5.0), "pole_mass": Uniform(0.1, 0.5),
                           "pole_length": Uniform(0.3, 0.7)})
    return TaskDistribution(CARTPOLE, (comp,), _CARTPOLE_SUPPORT, horizon, gamma)


def cartpole_gmm(horizon: int = 200, gamma: float = 0.99) -> TaskDistribution:
    comps = tuple(
        Component(w, {"cart_mass": Normal(c, 0.1), "pole_mass": Normal(m, 0.01),
                      "pole_length": Normal(l, 0.01)})
        for w, (c, m, l) in zip(_GMM_WEIGHTS, _GMM_CENTERS))
    return TaskDistribution(CARTPOLE, comps, _CARTPOLE_SUPPORT, horizon, gamma)


def chain_suite(horizon: int = 5, gamma: float = 0.9) -> TaskDistribution:
    comp = Component(1.0, {"slip": Uniform(0.0, 0.4), "goal_reward": Uniform(0.5, 1.0),
                           "start_reward": Uniform(0.0, 0.3)})
    support = {"slip": (0.0, 1.0), "goal_reward": (0.0, 1.0), "start_reward": (0.0, 1.0)}
    return TaskDistribution(CHAIN, (comp,), support, horizon, gamma)


def chain_fixed(slip: float = 0.1, goal_reward: float = 1.0, start_reward: float = 0.1,
                horizon: int = 5, gamma: float = 0.9) -> TaskDistribution:
    """Point distribution: every task is the same chain."""
    comp = Component(1.0, {"slip": Categorical((slip,), (1.0,)),
                           "goal_reward": Categorical((goal_reward,), (1.0,)),
                           "start_reward": Categorical((start_reward,), (1.0,))})
    return TaskDistribution(CHAIN, (comp,), {}, horizon, gamma)


PRESETS = {
    "cartpole_uniform": cartpole_uniform,
    "cartpole_gmm": cartpole_gmm,
    "chain_suite": chain_suite,
    "chain_fixed": chain_fixed,
}


# ---------------------------------------------------------------------------
# Dynamics

def step(mdp: ParamMdp, state, action: int, u: float | None = None):
    """One transition. Returns (next_state, reward, done).

    ``u`` is the uniform variate used for a stochastic tabular transition; a
    fresh one is drawn when omitted.
    """
    if not 0 <= int(action) < mdp.n_actions:
        raise DomainError(f"action {action} outside 0..{mdp.n_actions - 1}")
    a = int(action)
    if mdp.kind == CARTPOLE:
        s = np.asarray(state, dtype=np.float64)
        if s.shape != (CARTPOLE_STATE_DIM,):
            raise DimensionError("cart-pole state has four components")
        p = mdp.params
        nxt = kernels.cartpole_step(float(s[0]), float(s[1]), float(s[2]), float(s[3]), a,
                                    p["cart_mass"], p["pole_mass"], p["pole_length"])
        x, th = nxt[0], nxt[2]
        done = (x < -kernels.X_THRESHOLD or x > kernels.X_THRESHOLD
                or th < -kernels.THETA_THRESHOLD or th > kernels.THETA_THRESHOLD)
        return np.array(nxt), (0.0 if done else mdp.reward_scale), bool(done)
    s = int(state)
    if not 0 <= s < mdp.n_states:
        raise DomainError(f"state {s} outside 0..{mdp.n_states - 1}")
    row = mdp.transitions[s, a]
    if u is None:
        u = np.random.default_rng().random()
    nxt = int(min(np.searchsorted(np.cumsum(row), u, side="right"), row.size - 1))
    return nxt, float(mdp.rewards[s, a]) * mdp.reward_scale, False


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    gamma: float
    return_discounted: float = float("nan")

    def __post_init__(self):
        if not math.isfinite(self.return_discounted):
            object.__setattr__(self, "return_discounted", discounted_sum(self.rewards, self.gamma))

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def steps(self) -> list:
        return list(zip(self.states, self.actions.tolist(), self.rewards.tolist()))

    def rewards_to_go(self) -> np.ndarray:
        """G_h = sum_{h' >= h} gamma^h' r_h' (discount measured from the episode start)."""
        disc = self.gamma ** np.arange(len(self.rewards)) * self.rewards
        return np.cumsum(disc[::-1])[::-1]


def discounted_sum(rewards, gamma: float) -> float:
    total = 0.0
    g = 1.0
    for r in np.asarray(rewards, dtype=np.float64).tolist():
        total += g * r
        g *= gamma
    return total


def _rollout_uniforms(mdp: ParamMdp, seed):
    rng = generator(seed, "rollout")
    n = mdp.n_steps
    init_u = rng.random(CARTPOLE_STATE_DIM if mdp.kind == CARTPOLE else 1)
    return init_u, rng.random(n), rng.random(n)


def rollout(mdp: ParamMdp, policy, rng_seed) -> Trajectory:
    """Run at most ``H - 1`` steps; cart-pole episodes stop at failure."""
    init_u, act_u, trans_u = _rollout_uniforms(mdp, rng_seed)
    if policy.n_actions != mdp.n_actions:
        raise DimensionError(f"policy has {policy.n_actions} actions, task has {mdp.n_actions}")
    if isinstance(policy, GibbsLinearPolicy):
        return _rollout_gibbs(mdp, policy.theta, policy.features, init_u, act_u, trans_u)
    if isinstance(policy, MlpPolicy):
        return _rollout_mlp(mdp, policy, init_u, act_u, trans_u)
    raise UnsupportedError(f"cannot roll out {type(policy).__name__}")


def rollout_theta(mdp: ParamMdp, theta, features, rng_seed) -> Trajectory:
    """Like :func:`rollout` for a Gibbs policy, skipping the policy-object validation."""
    init_u, act_u, trans_u = _rollout_uniforms(mdp, rng_seed)
    return _rollout_gibbs(mdp, np.asarray(theta, dtype=np.float64), features, init_u, act_u, trans_u)


def _rollout_gibbs(mdp, theta, features, init_u, act_u, trans_u) -> Trajectory:
    if mdp.kind == CARTPOLE:
        if not isinstance(features, BlockStateFeatures) or features.state_dim != CARTPOLE_STATE_DIM:
            raise UnsupportedError("cart-pole rollouts need block state features")
        p = mdp.params
        states, actions, raw = kernels.cartpole_rollout(
            features.raw_theta(theta), p["cart_mass"], p["pole_mass"], p["pole_length"], mdp.n_steps, init_u, act_u)
    else:
        scores = features.psi @ theta
        states, actions, raw = kernels.tabular_rollout(
            scores, mdp.transitions, mdp.rewards, mdp.init, mdp.n_steps, float(init_u[0]), act_u, trans_u)
    return Trajectory(states, actions, raw * mdp.reward_scale, mdp.gamma)


def _sample_index(probs, u: float) -> int:
    acc = 0.0
    for i, p in enumerate(probs[:-1]):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


def _rollout_mlp(mdp, policy: MlpPolicy, init_u, act_u, trans_u) -> Trajectory:
    n = mdp.n_steps
    if mdp.kind == CARTPOLE:
        state = -0.05 + 0.1 * np.asarray(init_u, dtype=np.float64)
        encode = lambda s: s  # noqa: E731
    else:
        state = _sample_index(mdp.init.tolist(), float(init_u[0]))
        eye = np.eye(mdp.n_states)
        encode = lambda s: eye[s]  # noqa: E731
    states, actions, rewards = [], [], []
    for h in range(n):
        a = _sample_index(policy.probs(encode(state)).tolist(), float(act_u[h]))
        states.append(state)
        actions.append(a)
        state, r, done = step(mdp, state, a, float(trans_u[h]))
        rewards.append(r)
        if done:
            break
    return Trajectory(np.array(states), np.array(actions, dtype=np.int64), np.array(rewards), mdp.gamma)


# ---------------------------------------------------------------------------
# Exact evaluation of tabular tasks

def _backward_values(mdp: ParamMdp, pi: np.ndarray):
    """Expected return for a batch of stationary policies pi (B, S, A), plus the
    per-step action values Q_h ordered from h = 0."""
    P, r, g = mdp.transitions, mdp.rewards * mdp.reward_scale, mdp.gamma
    V = np.zeros(pi.shape[:2])
    Qs = []
    for _ in range(mdp.n_steps):
        Q = r[None] + g * np.einsum("sat,bt->bsa", P, V)
        V = np.sum(pi * Q, axis=2)
        Qs.append(Q)
    Qs.reverse()
    return V @ mdp.init, Qs


def exact_return_from_probs(mdp: ParamMdp, pi) -> float:
    """Exact expected return of the stationary policy table pi[s, a]."""
    if not mdp.is_tabular:
        raise UnsupportedError("exact evaluation needs a tabular task")
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != mdp.rewards.shape:
        raise DimensionError(f"policy table has shape {pi.shape}, task has {mdp.rewards.shape}")
    J, _ = _backward_values(mdp, pi[None])
    return float(J[0])


def exact_value_and_grad(mdp: ParamMdp, features: TabularFeatures, thetas, need_grad: bool = True):
    """Exact J(theta) and dJ/dtheta for a batch of Gibbs parameters.

    ``thetas`` has shape (B, d). Backward induction gives the step-h action values
    Q_h; forward propagation gives the state occupancy d_h; the gradient is
    sum_h gamma^h sum_{s,a} d_h(s) pi(a|s) Q_h(s,a) (psi(s,a) - psi_bar(s)).
    """
    if not mdp.is_tabular:
        raise UnsupportedError("exact evaluation needs a tabular task")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    psi = features.psi
    if thetas.shape[1] != psi.shape[2]:
        raise DimensionError(f"theta has length {thetas.shape[1]}, features have d={psi.shape[2]}")
    P, g = mdp.transitions, mdp.gamma
    pi = softmax_rows(np.einsum("sad,bd->bsa", psi, thetas))
    n = mdp.n_steps
    J, Qs = _backward_values(mdp, pi)
    if not need_grad:
        return J, None
    B = thetas.shape[0]
    centered = psi[None] - np.einsum("bsa,sad->bsd", pi, psi)[:, :, None, :]
    occ = np.tile(mdp.init, (B, 1))
    grad = np.zeros_like(thetas)
    disc = 1.0
    for h in range(n):
        w = occ[:, :, None] * pi * Qs[h]
        grad += disc * np.einsum("bsa,bsad->bd", w, centered)
        occ = np.einsum("bs,bsa,sat->bt", occ, pi, P)
        disc *= g
    return J, grad


def exact_expected_return(mdp: ParamMdp, policy: GibbsLinearPolicy) -> float:
    if not mdp.is_tabular:
        raise UnsupportedError("exact evaluation needs a tabular task")
    J, _ = exact_value_and_grad(mdp, policy.features, policy.theta[None], need_grad=False)
    return float(J[0])
