"""Policy families and Gaussian distributions over their parameters.

Two parameterizations of the world-policy distribution are supported:

* :class:`GaussianPolicyDistribution` -- a diagonal Gaussian over a flat
  parameter vector, used with the linear Gibbs (softmax) policy.
* :class:`LayeredGaussianPolicy` -- per-layer multiplicative noise over MLP
  weights, ``w = mu * (1 + softplus(delta) * eps)``.

All value types are immutable after construction. Randomness enters only
through explicit :class:`NoiseDraw` objects.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, NumericError
from .rng import generator

SIGMA_FLOOR = 1e-8  # layered flat view: std = softplus(delta) * |mu| can hit 0


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def softplus(x):
    """ln(1 + exp(x)) without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))
    return out if out.ndim else float(out)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise DomainError("inverse_softplus needs strictly positive input")
    out = np.where(y > 20.0, y + np.log(-np.expm1(-y)), np.log(np.expm1(y)))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Flat diagonal Gaussian

@dataclass(frozen=True, eq=False)
class GaussianPolicyDistribution:
    """Diagonal Gaussian N(mu, diag(sigma**2)) over a flat parameter vector."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = _frozen(self.mu)
        sigma = _frozen(self.sigma)
        if mu.ndim != 1 or sigma.ndim != 1:
            raise DimensionError("mu and sigma must be vectors")
        if mu.shape != sigma.shape:
            raise DimensionError(f"mu has length {mu.size}, sigma has length {sigma.size}")
        if not np.all(np.isfinite(mu)):
            raise NumericError("mu must be finite")
        if not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
            raise DomainError("sigma must be finite and strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def d(self) -> int:
        return self.mu.size

    @classmethod
    def initial(cls, d: int, sigma0: float = 0.1) -> "GaussianPolicyDistribution":
        return cls(np.zeros(d), np.full(d, float(sigma0)))

    @classmethod
    def from_log_sigma(cls, mu, log_sigma) -> "GaussianPolicyDistribution":
        return cls(mu, np.exp(np.asarray(log_sigma, dtype=np.float64)))

    @property
    def log_sigma(self) -> np.ndarray:
        return np.log(self.sigma)

    def log_pdf(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        z = (theta - self.mu) / self.sigma
        return (-0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(self.sigma))
                - 0.5 * self.d * math.log(2.0 * math.pi))

    def __eq__(self, other):
        if not isinstance(other, GaussianPolicyDistribution):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.sigma, other.sigma)

    __hash__ = None

    def to_dict(self) -> dict:
        return {"d": self.d, "mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianPolicyDistribution":
        dist = cls(data["mu"], data["sigma"])
        if "d" in data and int(data["d"]) != dist.d:
            raise DimensionError(f"declared d={data['d']} but got {dist.d} entries")
        return dist


@dataclass(frozen=True, eq=False)
class NoiseDraw:
    """A standard-normal vector together with the (seed, index) that produced it."""

    epsilon: np.ndarray
    seed: int | None = None
    index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "epsilon", _frozen(self.epsilon))

    @classmethod
    def draw(cls, seed: int, index: int, d: int) -> "NoiseDraw":
        eps = generator(seed, "noise", index).standard_normal(d)
        return cls(eps, seed, index)


def sample_theta(dist: GaussianPolicyDistribution, noise: NoiseDraw) -> np.ndarray:
    eps = np.asarray(noise.epsilon if isinstance(noise, NoiseDraw) else noise, dtype=np.float64)
    if eps.shape != dist.mu.shape:
        raise DimensionError(f"noise has shape {eps.shape}, distribution has d={dist.d}")
    return dist.mu + dist.sigma * eps


def kl_diag_gaussian(p: GaussianPolicyDistribution, q: GaussianPolicyDistribution) -> float:
    """KL(p || q) for diagonal Gaussians, summed over coordinates."""
    if p.d != q.d:
        raise DimensionError(f"KL between d={p.d} and d={q.d} distributions")
    if np.any(p.sigma <= 0) or np.any(q.sigma <= 0):
        raise DomainError("sigma must be strictly positive")
    var_q = q.sigma * q.sigma
    diff = p.mu - q.mu
    terms = np.log(q.sigma / p.sigma) + (p.sigma * p.sigma + diff * diff) / (2.0 * var_q) - 0.5
    return max(float(np.sum(terms)), 0.0)


def kl_diag_gaussian_grad(p: GaussianPolicyDistribution, q: GaussianPolicyDistribution):
    """Gradient of KL(p || q) with respect to p's mean and log std."""
    var_q = q.sigma * q.sigma
    g_mu = (p.mu - q.mu) / var_q
    g_log_sigma = p.sigma * p.sigma / var_q - 1.0
    return g_mu, g_log_sigma


# ---------------------------------------------------------------------------
# Feature maps and the linear Gibbs policy

class BlockStateFeatures:
    """psi(s, a) = e_a (x) [s / scale, 1]: the scaled state with a bias, placed in action a's block."""

    def __init__(self, n_actions: int, state_dim: int, scale=None):
        self.n_actions = int(n_actions)
        self.state_dim = int(state_dim)
        self.dim = self.n_actions * (self.state_dim + 1)
        scale = np.ones(self.state_dim) if scale is None else np.asarray(scale, dtype=np.float64)
        if scale.shape != (self.state_dim,) or np.any(scale <= 0):
            raise DomainError("feature scale needs one positive entry per state component")
        self.scale = _frozen(scale)

    def raw_theta(self, theta) -> np.ndarray:
        """Weights acting on the unscaled state, so theta . psi(s, a) is unchanged."""
        th = np.array(theta, dtype=np.float64).reshape(self.n_actions, self.state_dim + 1)
        th[:, :self.state_dim] /= self.scale
        return th.ravel()

    def __call__(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=np.float64)
        if s.shape != (self.state_dim,):
            raise DimensionError(f"expected state of length {self.state_dim}, got shape {s.shape}")
        phi = np.append(s / self.scale, 1.0)
        out = np.zeros((self.n_actions, self.dim))
        k = self.state_dim + 1
        for a in range(self.n_actions):
            out[a, a * k:(a + 1) * k] = phi
        return out

    def batch(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64).reshape(-1, self.state_dim)
        n = states.shape[0]
        phi = np.concatenate([states / self.scale, np.ones((n, 1))], axis=1)
        out = np.zeros((n, self.n_actions, self.dim))
        k = self.state_dim + 1
        for a in range(self.n_actions):
            out[:, a, a * k:(a + 1) * k] = phi
        return out


class TabularFeatures:
    """Lookup features psi[s, a, :] for a finite state space."""

    def __init__(self, psi):
        psi = _frozen(psi)
        if psi.ndim != 3:
            raise DimensionError("tabular features need shape (S, A, d)")
        self.psi = psi
        self.n_states, self.n_actions, self.dim = psi.shape

    @classmethod
    def one_hot(cls, n_states: int, n_actions: int) -> "TabularFeatures":
        psi = np.eye(n_states * n_actions).reshape(n_states, n_actions, n_states * n_actions)
        return cls(psi)

    def __call__(self, state) -> np.ndarray:
        s = int(state)
        if not 0 <= s < self.n_states:
            raise DomainError(f"state {s} outside 0..{self.n_states - 1}")
        return np.array(self.psi[s])

    def batch(self, states) -> np.ndarray:
        return self.psi[np.asarray(states, dtype=np.int64)]


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - np.max(scores, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class GibbsLinearPolicy:
    """pi(a | s) proportional to exp(theta . psi(s, a))."""

    theta: np.ndarray
    features: object

    def __post_init__(self):
        theta = _frozen(self.theta)
        if theta.shape != (self.features.dim,):
            raise DimensionError(f"theta has shape {theta.shape}, features have d={self.features.dim}")
        object.__setattr__(self, "theta", theta)

    @property
    def n_actions(self) -> int:
        return self.features.n_actions


def action_probs(policy: GibbsLinearPolicy, state) -> np.ndarray:
    feats = policy.features(state)
    if not np.all(np.isfinite(feats)):
        raise NumericError("non-finite feature values")
    scores = feats @ policy.theta
    return softmax_rows(scores)


def grad_log_prob(policy: GibbsLinearPolicy, state, action: int) -> np.ndarray:
    """Score function psi(s, a) - sum_b pi(b|s) psi(s, b)."""
    if not 0 <= int(action) < policy.n_actions:
        raise DomainError(f"action {action} outside 0..{policy.n_actions - 1}")
    feats = policy.features(state)
    probs = softmax_rows(feats @ policy.theta)
    return feats[int(action)] - probs @ feats


def batch_scores(features_batch: np.ndarray, theta: np.ndarray, actions) -> np.ndarray:
    """Score vectors for many (state, action) pairs at once; features_batch is (n, A, d)."""
    probs = softmax_rows(features_batch @ theta)
    actions = np.asarray(actions, dtype=np.int64)
    chosen = features_batch[np.arange(actions.size), actions]
    return chosen - np.einsum("na,nad->nd", probs, features_batch)


# ---------------------------------------------------------------------------
# Layered (MLP) parameterization

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True, eq=False)
class GaussianLayer:
    mu_w: np.ndarray
    delta_w: np.ndarray
    mu_b: np.ndarray
    delta_b: np.ndarray

    def __post_init__(self):
        for name in ("mu_w", "delta_w", "mu_b", "delta_b"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.mu_w.ndim != 2 or self.mu_w.shape != self.delta_w.shape:
            raise DimensionError("mu_w and delta_w must be matrices of equal shape")
        if self.mu_b.shape != (self.mu_w.shape[0],) or self.delta_b.shape != self.mu_b.shape:
            raise DimensionError("bias vectors must match the layer's output size")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mu_w.shape

    @property
    def gamma_w(self) -> np.ndarray:
        return softplus(self.delta_w)

    @property
    def gamma_b(self) -> np.ndarray:
        return softplus(self.delta_b)


@dataclass(frozen=True, eq=False)
class LayeredGaussianPolicy:
    """Per-layer Gaussian MLP weights; layer r maps fan_in -> fan_out."""

    layers: tuple
    activations: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        acts = tuple(self.activations)
        if not layers:
            raise DimensionError("need at least one layer")
        if len(acts) != len(layers) - 1:
            raise DimensionError("one activation per hidden layer")
        for act in acts:
            if act not in ACTIVATIONS:
                raise DomainError(f"unknown activation {act!r}")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.shape[0] != nxt.shape[1]:
                raise DimensionError(f"layer output {prev.shape[0]} does not feed input {nxt.shape[1]}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "activations", acts)

    @classmethod
    def initialize(cls, sizes: Sequence[int], seed: int, activation: str = "tanh",
                   delta0: float = -2.0) -> "LayeredGaussianPolicy":
        rng = generator(seed, "layered-init")
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = math.sqrt(2.0 / fan_in)
            layers.append(GaussianLayer(
                mu_w=rng.normal(0.0, scale, size=(fan_out, fan_in)),
                delta_w=np.full((fan_out, fan_in), float(delta0)),
                mu_b=rng.normal(0.0, scale, size=fan_out),
                delta_b=np.full(fan_out, float(delta0)),
            ))
        return cls(tuple(layers), (activation,) * (len(layers) - 1))

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].shape[1]] + [layer.shape[0] for layer in self.layers]

    @property
    def n_params(self) -> int:
        return sum(layer.mu_w.size + layer.mu_b.size for layer in self.layers)

    def flat_mu(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.mu_w.ravel(), l.mu_b]) for l in self.layers])

    def flat_delta(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.delta_w.ravel(), l.delta_b]) for l in self.layers])

    def with_flat(self, mu, delta) -> "LayeredGaussianPolicy":
        mu = np.asarray(mu, dtype=np.float64)
        delta = np.asarray(delta, dtype=np.float64)
        if mu.shape != (self.n_params,) or delta.shape != (self.n_params,):
            raise DimensionError(f"expected {self.n_params} parameters")
        layers, pos = [], 0
        for layer in self.layers:
            nw, nb = layer.mu_w.size, layer.mu_b.size
            layers.append(GaussianLayer(
                mu_w=mu[pos:pos + nw].reshape(layer.shape), delta_w=delta[pos:pos + nw].reshape(layer.shape),
                mu_b=mu[pos + nw:pos + nw + nb], delta_b=delta[pos + nw:pos + nw + nb]))
            pos += nw + nb
        return LayeredGaussianPolicy(tuple(layers), self.activations)

    def as_flat(self) -> GaussianPolicyDistribution:
        """The induced diagonal Gaussian: mean mu, std softplus(delta) * |mu|."""
        mu = self.flat_mu()
        sigma = np.maximum(softplus(self.flat_delta()) * np.abs(mu), SIGMA_FLOOR)
        return GaussianPolicyDistribution(mu, sigma)

    def draw_noise(self, seed: int, index: int) -> list:
        rng = generator(seed, "layered-noise", index)
        return [(rng.standard_normal(l.shape), rng.standard_normal(l.shape[0])) for l in self.layers]

    def to_dict(self) -> dict:
        return {
            "kind": "layered",
            "activations": list(self.activations),
            "layers": [{"mu_w": l.mu_w.tolist(), "delta_w": l.delta_w.tolist(),
                        "mu_b": l.mu_b.tolist(), "delta_b": l.delta_b.tolist()} for l in self.layers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LayeredGaussianPolicy":
        layers = tuple(GaussianLayer(np.array(l["mu_w"], dtype=np.float64).reshape(len(l["mu_w"]), -1),
                                     np.array(l["delta_w"], dtype=np.float64).reshape(len(l["delta_w"]), -1),
                                     l["mu_b"], l["delta_b"]) for l in data["layers"])
        return cls(layers, tuple(data["activations"]))


def flatten_noise(noise) -> np.ndarray:
    return np.concatenate([np.concatenate([np.ravel(ew), np.ravel(eb)]) for ew, eb in noise])


def sample_layered(policy: LayeredGaussianPolicy, noise) -> list:
    """Concrete weights [(W_r, b_r), ...] with W_r = mu_r * (1 + softplus(delta_r) * eps_r)."""
    if len(noise) != len(policy.layers):
        raise DimensionError(f"got noise for {len(noise)} layers, policy has {len(policy.layers)}")
    weights = []
    for layer, (eps_w, eps_b) in zip(policy.layers, noise):
        eps_w = np.asarray(eps_w, dtype=np.float64)
        eps_b = np.asarray(eps_b, dtype=np.float64)
        if eps_w.shape != layer.shape or eps_b.shape != layer.mu_b.shape:
            raise DimensionError("noise shape does not match layer shape")
        weights.append((layer.mu_w * (1.0 + layer.gamma_w * eps_w),
                        layer.mu_b * (1.0 + layer.gamma_b * eps_b)))
    return weights


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _activate_grad(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    return 1.0 - h * h if name == "tanh" else (z > 0).astype(np.float64)


def mlp_forward(weights, activations, x):
    """Action logits plus the cached pre-activations/outputs needed for backprop."""
    h = np.asarray(x, dtype=np.float64)
    cache = [(None, h)]
    for r, (w, b) in enumerate(weights):
        z = w @ h + b
        h = _activate(activations[r], z) if r < len(weights) - 1 else z
        cache.append((z, h))
    return h, cache


def mlp_action_probs(weights, activations, x) -> np.ndarray:
    logits, _ = mlp_forward(weights, activations, x)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite MLP logits")
    return softmax_rows(logits)


def mlp_grad_log_prob(weights, activations, x, action: int) -> list:
    """d log pi(a|x) / d (W_r, b_r) for every layer."""
    logits, cache = mlp_forward(weights, activations, x)
    probs = softmax_rows(logits)
    delta = -probs
    delta[int(action)] += 1.0
    grads = [None] * len(weights)
    for r in range(len(weights) - 1, -1, -1):
        h_in = cache[r][1]
        grads[r] = (np.outer(delta, h_in), delta.copy())
        if r > 0:
            z_prev, h_prev = cache[r]
            delta = (weights[r][0].T @ delta) * _activate_grad(activations[r - 1], z_prev, h_prev)
    return grads


# ---------------------------------------------------------------------------
# Serialization

def to_json(dist) -> str:
    return json.dumps(dist.to_dict())


def from_json(text: str):
    data = json.loads(text)
    if data.get("kind") == "layered":
        return LayeredGaussianPolicy.from_dict(data)
    return GaussianPolicyDistribution.from_dict(data)


@dataclass(frozen=True, eq=False)
class MlpPolicy:
    """A concrete MLP policy: softmax over the final layer's outputs."""

    weights: list
    activations: tuple = field(default=())

    @property
    def n_actions(self) -> int:
        return self.weights[-1][0].shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights[0][0].shape[1]

    def probs(self, state) -> np.ndarray:
        return mlp_action_probs(self.weights, self.activations, state)
