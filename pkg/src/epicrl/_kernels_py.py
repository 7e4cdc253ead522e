"""Pure-Python rollout kernels.

Reference implementation of the compiled kernels in ``_kernels.pyx``. The two
perform the same floating-point operations in the same order, so for identical
inputs they return identical trajectories.
"""
from __future__ import annotations

from math import cos, exp, sin

import numpy as np

GRAVITY = 9.8
FORCE_MAG = 10.0
TAU = 0.02
X_THRESHOLD = 2.4
THETA_THRESHOLD = 12.0 * 2.0 * 3.141592653589793 / 360.0
N_FEATURES = 5  # cart-pole state + bias


def cartpole_step(x, x_dot, th, th_dot, action, masscart, masspole, length):
    force = FORCE_MAG if action == 1 else -FORCE_MAG
    total_mass = masscart + masspole
    polemass_length = masspole * length
    costh = cos(th)
    sinth = sin(th)
    temp = (force + polemass_length * th_dot * th_dot * sinth) / total_mass
    thacc = (GRAVITY * sinth - costh * temp) / (
        length * (4.0 / 3.0 - masspole * costh * costh / total_mass))
    xacc = temp - polemass_length * thacc * costh / total_mass
    x_dot = x_dot + TAU * xacc
    x = x + TAU * x_dot
    th_dot = th_dot + TAU * thacc
    th = th + TAU * th_dot
    return x, x_dot, th, th_dot


def _sample_softmax(scores, u):
    m = scores[0]
    for s in scores[1:]:
        if s > m:
            m = s
    es = [exp(s - m) for s in scores]
    total = 0.0
    for e in es:
        total += e
    threshold = u * total
    acc = 0.0
    for a, e in enumerate(es):
        acc += e
        if threshold < acc:
            return a
    return len(es) - 1


def cartpole_rollout(theta, masscart, masspole, length, n_steps, init_u, act_u):
    """Roll out the linear Gibbs policy; returns (states, actions, rewards) truncated at failure."""
    th_list = [float(v) for v in theta]
    n_actions = len(th_list) // N_FEATURES
    u0 = [float(v) for v in init_u]
    s = [-0.05 + 0.1 * u0[0], -0.05 + 0.1 * u0[1], -0.05 + 0.1 * u0[2], -0.05 + 0.1 * u0[3]]
    states = np.zeros((n_steps, 4))
    actions = np.zeros(n_steps, dtype=np.int64)
    rewards = np.zeros(n_steps)
    n = 0
    for h in range(n_steps):
        scores = []
        for a in range(n_actions):
            base = a * N_FEATURES
            acc = 0.0
            for k in range(4):
                acc += th_list[base + k] * s[k]
            acc += th_list[base + 4]
            scores.append(acc)
        a = _sample_softmax(scores, float(act_u[h]))
        states[h] = s
        actions[h] = a
        x, x_dot, th, th_dot = cartpole_step(s[0], s[1], s[2], s[3], a, masscart, masspole, length)
        s = [x, x_dot, th, th_dot]
        n = h + 1
        if x < -X_THRESHOLD or x > X_THRESHOLD or th < -THETA_THRESHOLD or th > THETA_THRESHOLD:
            break
        rewards[h] = 1.0
    return states[:n], actions[:n], rewards[:n]


def _sample_categorical(probs, u):
    acc = 0.0
    last = len(probs) - 1
    for i in range(last):
        acc += probs[i]
        if u < acc:
            return i
    return last


def tabular_rollout(scores, transitions, rewards_table, init, n_steps, init_u, act_u, trans_u):
    """Roll out a softmax policy with precomputed scores[s, a] on a tabular MDP."""
    sc = scores.tolist()
    P = transitions.tolist()
    R = rewards_table.tolist()
    s = _sample_categorical(init.tolist(), float(init_u))
    states = np.zeros(n_steps, dtype=np.int64)
    actions = np.zeros(n_steps, dtype=np.int64)
    rewards = np.zeros(n_steps)
    for h in range(n_steps):
        a = _sample_softmax(sc[s], float(act_u[h]))
        states[h] = s
        actions[h] = a
        rewards[h] = R[s][a]
        s = _sample_categorical(P[s][a], float(trans_u[h]))
    return states, actions, rewards

