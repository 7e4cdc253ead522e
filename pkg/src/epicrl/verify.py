"""Numerical checks of the theory: martingale concentration and the measured
generalization gap of a finished run."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import envs, kernels
from .epic import RunLog
from .errors import ConfigError, DimensionError, NumericError, UnsupportedError
from .pacbayes import RegularizerConfig, bound_confidence, theorem1_report
from .policy import GaussianPolicyDistribution
from .rng import derive_seed, generator

FREEDMAN_BASE = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Envelopes

def azuma_envelope(T: int, N: int, H: int, delta: float) -> float:
    """sqrt(1/2 ln(2/delta) T N^2 H^2): deviation level for increments confined
    to an interval of length N H."""
    return math.sqrt(0.5 * math.log(2.0 / delta) * T * (N * H) ** 2)


def azuma_envelope_symmetric(T: int, N: int, H: int, delta: float) -> float:
    """Same inequality when only |D_l| <= N H is known (interval length 2 N H)."""
    return math.sqrt(2.0 * math.log(2.0 / delta) * T * (N * H) ** 2)


def freedman_envelope(T: int, N: int, H: int, delta: float, lam: float) -> float:
    return math.log(2.0 / delta) / lam + lam * T * (N * H) ** 2


def freedman_grid(T: int, N: int, H: int, delta: float, base: float = FREEDMAN_BASE) -> np.ndarray:
    """lambda_j = base^j (1/b) sqrt(ln(2/delta)/T), j = 0, 1, ..., kept while lambda_j <= 1/b, b = N H."""
    b = float(N * H)
    lam0 = math.sqrt(math.log(2.0 / delta) / T) / b
    if lam0 > 1.0 / b:
        return np.array([1.0 / b])
    J = int(math.floor(math.log(1.0 / (b * lam0)) / math.log(base) + 1e-12))
    return lam0 * base ** np.arange(J + 1)


def freedman_min(T: int, N: int, H: int, delta: float, base: float = FREEDMAN_BASE) -> float:
    return min(freedman_envelope(T, N, H, delta, lam) for lam in freedman_grid(T, N, H, delta, base))


# ---------------------------------------------------------------------------
# Martingale simulation

@dataclass(frozen=True, eq=False)
class MartingaleTrace:
    D: np.ndarray
    S: np.ndarray
    bound_az: np.ndarray
    bound_fr: np.ndarray
    N: int
    H: int
    delta: float

    @property
    def T(self) -> int:
        return self.D.size

    @property
    def S_T(self) -> float:
        return float(self.S[-1])

    @property
    def max_abs_D(self) -> float:
        return float(np.max(np.abs(self.D)))

    @property
    def exceeded(self) -> bool:
        return abs(self.S_T) > self.bound_az[-1]


def simulate_martingale(chain, P_sequence, T: int, N: int, H: int, rng_seed, features=None,
                        delta: float = 0.1) -> MartingaleTrace:
    """Windowed martingale of exact-minus-realized returns.

    Window l draws theta from ``P_sequence[l]`` and N tasks from ``chain`` (a
    tabular task distribution or a single tabular task), then adds
    D_l = sum_i (E[V_i | theta, task_i] - V_i) with one realized rollout per task.
    """
    if isinstance(P_sequence, GaussianPolicyDistribution):
        P_sequence = [P_sequence] * T
    if len(P_sequence) < T:
        raise DimensionError(f"need {T} window distributions, got {len(P_sequence)}")
    rng = generator(rng_seed, "martingale")
    if isinstance(chain, envs.TaskDistribution):
        draw_task = lambda: chain.build(envs.sample_params(chain, rng)[1])  # noqa: E731
        probe = chain.build(envs.sample_params(chain, generator(0, "probe"))[1])
    else:
        draw_task = lambda: chain  # noqa: E731
        probe = chain
    if not probe.is_tabular:
        raise UnsupportedError("exact conditional expectations need tabular tasks")
    features = probe.default_features() if features is None else features
    D = np.zeros(T)
    for l in range(T):
        P = P_sequence[l]
        theta = P.mu + P.sigma * rng.standard_normal(P.d)
        scores = features.psi @ theta
        total = 0.0
        for _ in range(N):
            task = draw_task()
            J, _ = envs.exact_value_and_grad(task, features, theta[None], need_grad=False)
            n = task.n_steps
            init_u = rng.random()
            act_u, trans_u = rng.random(n), rng.random(n)
            _, _, raw = kernels.tabular_rollout(scores, task.transitions, task.rewards, task.init, n,
                                                init_u, act_u, trans_u)
            total += float(J[0]) - envs.discounted_sum(raw * task.reward_scale, task.gamma)
        D[l] = total
    if np.any(np.abs(D) > N * H):
        raise NumericError("martingale increment exceeds N*H; rewards are outside [0, 1]")
    t = np.arange(1, T + 1)
    az = np.array([azuma_envelope(k, N, H, delta) for k in t])
    fr = np.array([freedman_min(k, N, H, delta) for k in t])
    return MartingaleTrace(D, np.cumsum(D), az, fr, N, H, delta)


# ---------------------------------------------------------------------------
# Generalization gap

@dataclass(frozen=True)
class GapReport:
    training_error: float
    expected_loss: float
    gap: float
    gap_stderr: float
    final_expected_loss: float
    final_stderr: float
    theorem1_bound: float
    regularizer: float
    confidence_stated: float
    confidence_proof: float
    bound_divisible: bool
    n_holdout: int
    windows: int

    @property
    def within_bound(self) -> bool:
        return self.gap <= self.theorem1_bound


def _losses(task, thetas, features, seed) -> np.ndarray:
    """-J(theta) for each row of ``thetas``."""
    if task.is_tabular:
        J, _ = envs.exact_value_and_grad(task, features, thetas, need_grad=False)
        return -J
    return -np.array([envs.rollout_theta(task, th, features, derive_seed(seed, j)).return_discounted
                      for j, th in enumerate(thetas)])


def gap_report(run: RunLog, cfg: RegularizerConfig, holdout_tasks: int, rng_seed,
               draws: int = 8) -> GapReport:
    """Holdout loss minus training loss, window by window.

    The training error averages -J over each window's stored tasks with theta
    drawn from the distribution that was current during that window. The
    expected loss evaluates the same theta draws on ``holdout_tasks`` fresh
    tasks, so the only difference between the two is the tasks themselves. The
    final posterior's holdout loss is reported alongside.
    """
    if holdout_tasks < 1:
        raise ConfigError("holdout_tasks must be positive")
    if run.stream is None or not run.updates:
        raise ConfigError("gap report needs a lifelong run with at least one update")
    stream = run.stream
    if stream.policy != "linear":
        raise UnsupportedError("gap report supports the flat Gaussian posterior")
    features = stream.feature_map()
    N = run.N
    T = len(run.updates)
    window_thetas = []
    for l in range(T):
        P = run.snapshots[l]
        eps = generator(rng_seed, "gap-draws", l).standard_normal((draws, P.d))
        window_thetas.append(P.mu + P.sigma * eps)

    train = []
    for l in range(T):
        for k, task in enumerate(run.tasks[l * N:(l + 1) * N]):
            train.append(np.mean(_losses(task, window_thetas[l], features,
                                         derive_seed(rng_seed, "gap-train", l, k))))
    training_error = float(np.mean(train))

    final = run.snapshots[T]
    final_thetas = final.mu + final.sigma * generator(rng_seed, "gap-final").standard_normal((draws, final.d))
    holdout_seed = derive_seed(rng_seed, "holdout")
    per_task, per_task_final = [], []
    for h in range(holdout_tasks):
        task = envs.sample_task(stream.env, holdout_seed, h)
        per_task.append(np.mean([np.mean(_losses(task, window_thetas[l], features,
                                                  derive_seed(rng_seed, "gap-holdout", h, l)))
                                 for l in range(T)]))
        per_task_final.append(np.mean(_losses(task, final_thetas, features,
                                              derive_seed(rng_seed, "gap-final", h))))
    per_task = np.array(per_task)
    per_task_final = np.array(per_task_final)
    se = lambda x: float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")  # noqa: E731
    expected = float(per_task.mean())
    cfg_run = cfg.with_K(T * N)
    bound = theorem1_report(cfg_run)
    stated, proof = bound_confidence(cfg_run)
    return GapReport(training_error, expected, expected - training_error, se(per_task),
                     float(per_task_final.mean()), se(per_task_final), bound.value,
                     run.updates[-1].training_regularizer, stated, proof, bound.divisible,
                     holdout_tasks, T)
