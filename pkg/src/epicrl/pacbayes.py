"""Bound machinery: the KL regularizer used in training, the run-level
generalization bound, the cumulative KL ceiling and sample-complexity constants.

Two exponents are in play and kept apart by name: ``gamma_exp`` is the bound
exponent, the MDP discount lives on the task.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, InsufficientDataError
from .policy import (BlockStateFeatures, GaussianPolicyDistribution, LayeredGaussianPolicy,
                     TabularFeatures, kl_diag_gaussian, softmax_rows)


@dataclass(frozen=True)
class RegularizerConfig:
    N: int = 25
    H: int = 200
    K: int = 200
    lambda0: float = 0.9
    alpha: float = 0.95
    s_min: float = 0.01
    r: float = 0.1
    delta_conf: float = 0.05
    gamma_exp: float = 0.25
    reg_scale: float = 1.0

    def __post_init__(self):
        for name in ("N", "H", "K"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DomainError(f"{name} must be a positive integer, got {v}")
        if not 0.0 <= self.lambda0 <= 1.0:
            raise DomainError("lambda0 must lie in [0, 1]")
        for name in ("alpha", "delta_conf", "gamma_exp"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DomainError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 < self.s_min <= 1.0:
            raise DomainError("s_min must lie in (0, 1]")
        if not self.r >= 0:
            raise DomainError("r must be non-negative")
        if not self.reg_scale >= 0:
            raise DomainError("reg_scale must be non-negative")

    @property
    def T(self) -> int:
        return self.K // self.N

    def with_K(self, K: int) -> "RegularizerConfig":
        return replace(self, K=int(K))


def _confidence_const(cfg: RegularizerConfig) -> float:
    return math.log(2.0 * math.sqrt(cfg.N * cfg.H) / cfg.delta_conf)


def training_regularizer(kl: float, cfg: RegularizerConfig) -> float:
    """kappa * sqrt((KL + ln(2 sqrt(NH) / delta)) / (2 N H))."""
    if kl < 0:
        raise DomainError(f"KL must be non-negative, got {kl}")
    if cfg.reg_scale == 0.0:
        return 0.0
    u = kl + _confidence_const(cfg)
    return cfg.reg_scale * math.sqrt(max(u, 0.0) / (2.0 * cfg.N * cfg.H))


def training_regularizer_grad(kl: float, cfg: RegularizerConfig) -> float:
    """Derivative of :func:`training_regularizer` with respect to the KL argument."""
    if kl < 0:
        raise DomainError(f"KL must be non-negative, got {kl}")
    if cfg.reg_scale == 0.0:
        return 0.0
    u = kl + _confidence_const(cfg)
    if u <= 0:
        raise DomainError("regularizer is not differentiable where its radicand vanishes")
    return cfg.reg_scale / (2.0 * math.sqrt(2.0 * cfg.N * cfg.H * u))


@dataclass(frozen=True)
class BoundReport:
    value: float
    drift_term: float
    sampling_term: float
    T: int
    divisible: bool


def theorem1_report(cfg: RegularizerConfig) -> BoundReport:
    """Generalization bound with T = floor(K / N); ``divisible`` is False when K mod N != 0."""
    T = cfg.K // cfg.N
    if T < 1:
        raise DomainError(f"K={cfg.K} is smaller than N={cfg.N}")
    a = cfg.alpha
    root_n = math.sqrt(cfg.N)
    ratio = (1.0 - a ** (2 * (T - 1))) / (cfg.s_min * (1.0 - a * a))
    drift = (2.0 * root_n * cfg.H * (cfg.lambda0 * cfg.r / (1.0 - a)) * math.sqrt(ratio)
             / math.sqrt(cfg.K))
    sampling = 2.0 * root_n * cfg.H / cfg.K ** ((1.0 - cfg.gamma_exp) / 2.0)
    return BoundReport(drift + sampling, drift, sampling, T, cfg.K % cfg.N == 0)


def theorem1_bound(cfg: RegularizerConfig) -> float:
    return theorem1_report(cfg).value


def bound_confidence(cfg: RegularizerConfig) -> tuple[float, float]:
    """Probability levels 1 - 2exp(-K^gamma) (as stated) and 1 - 2exp(-K) (as used in the proof)."""
    return (1.0 - 2.0 * math.exp(-cfg.K ** cfg.gamma_exp), 1.0 - 2.0 * math.exp(-float(cfg.K)))


def kl_budget(cfg: RegularizerConfig, T: int) -> float:
    """Ceiling on the cumulative KL(P_l || prior_l) after T windows."""
    if T < 1:
        raise DomainError("T must be at least 1")
    a = cfg.alpha
    scale = 2.0 * cfg.lambda0 ** 2 * cfg.r ** 2 / (cfg.s_min * (1.0 - a) ** 2)
    return scale * (1.0 - a ** (2 * (T - 1))) / (1.0 - a * a)


def kl_budget_limit(cfg: RegularizerConfig) -> float:
    a = cfg.alpha
    return 2.0 * cfg.lambda0 ** 2 * cfg.r ** 2 / (cfg.s_min * (1.0 - a) ** 2 * (1.0 - a * a))


def sample_complexity_terms(epsilon: float, cfg: RegularizerConfig) -> tuple[float, float]:
    """The two branches whose maximum gives the number of tasks needed for accuracy epsilon."""
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    a = cfg.alpha
    nh2 = cfg.N * cfg.H ** 2
    drift = (16.0 * nh2 * cfg.lambda0 ** 2 * cfg.r ** 2
             / (cfg.s_min * (1.0 - a) ** 3 * (1.0 + a) * epsilon ** 2))
    sampling = (16.0 * nh2 / epsilon ** 2) ** (1.0 / (1.0 - cfg.gamma_exp))
    return drift, sampling


def sample_complexity_K(epsilon: float, cfg: RegularizerConfig) -> int:
    return int(math.ceil(max(sample_complexity_terms(epsilon, cfg))))


# ---------------------------------------------------------------------------
# Assumption constants measured on a run

def pinsker_tv(p: GaussianPolicyDistribution, q: GaussianPolicyDistribution) -> float:
    """Upper bound on TV(p, q): Pinsker applied to the smaller KL direction, capped at 1."""
    kl = min(kl_diag_gaussian(p, q), kl_diag_gaussian(q, p))
    return min(1.0, math.sqrt(kl / 2.0))


def _as_flat(dist) -> GaussianPolicyDistribution:
    return dist.as_flat() if isinstance(dist, LayeredGaussianPolicy) else dist


def default_probes(features) -> np.ndarray:
    """Fixed probe states: every tabular state, or a small grid around the cart-pole origin."""
    if isinstance(features, TabularFeatures):
        return np.arange(features.n_states)
    if isinstance(features, BlockStateFeatures):
        levels = np.array([-0.1, 0.0, 0.1])
        mesh = np.meshgrid(*([levels] * features.state_dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    raise DomainError(f"no default probe grid for {type(features).__name__}")


def min_action_prob(mu, features, probes=None) -> float:
    probes = default_probes(features) if probes is None else probes
    feats = features.batch(probes)
    return float(np.min(softmax_rows(feats @ np.asarray(mu, dtype=np.float64))))


def estimate_assumption_constants(history, features=None, probes=None) -> tuple[float, float]:
    """(s_min_hat, r_hat) from consecutive posterior snapshots.

    r_hat is the largest Pinsker TV proxy between neighbours; s_min_hat is the
    smallest action probability of the mean policy over the probe states (nan
    when no feature map is given).
    """
    if len(history) < 2:
        raise InsufficientDataError("need at least two snapshots")
    flats = [_as_flat(h) for h in history]
    r_hat = max(pinsker_tv(a, b) for a, b in zip(flats[1:], flats[:-1]))
    if features is None or any(isinstance(h, LayeredGaussianPolicy) for h in history):
        return float("nan"), r_hat
    s_min_hat = min(min_action_prob(f.mu, features, probes) for f in flats)
    return s_min_hat, r_hat
