# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled rollout kernels; mirrors ``_kernels_py`` operation for operation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, exp

cnp.import_array()

cdef double GRAVITY = 9.8
cdef double FORCE_MAG = 10.0
cdef double TAU = 0.02
cdef double X_THRESHOLD = 2.4
cdef double THETA_THRESHOLD = 12.0 * 2.0 * 3.141592653589793 / 360.0
cdef int N_FEATURES = 5


cdef inline int _sample_softmax(const double* scores, int n, double u) noexcept nogil:
    cdef double m = scores[0]
    cdef int a
    cdef double total = 0.0, acc = 0.0, threshold
    cdef double es[16]
    for a in range(1, n):
        if scores[a] > m:
            m = scores[a]
    for a in range(n):
        es[a] = exp(scores[a] - m)
    for a in range(n):
        total += es[a]
    threshold = u * total
    for a in range(n):
        acc += es[a]
        if threshold < acc:
            return a
    return n - 1


cdef inline int _sample_categorical(const double* probs, int n, double u) noexcept nogil:
    cdef double acc = 0.0
    cdef int i
    for i in range(n - 1):
        acc += probs[i]
        if u < acc:
            return i
    return n - 1


def cartpole_rollout(theta, double masscart, double masspole, double length, int n_steps,
                     init_u, act_u):
    cdef const cnp.float64_t[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const cnp.float64_t[::1] u0 = np.ascontiguousarray(init_u, dtype=np.float64)
    cdef const cnp.float64_t[::1] ua = np.ascontiguousarray(act_u, dtype=np.float64)
    cdef int n_actions = th.shape[0] // N_FEATURES
    if n_actions > 16:
        raise ValueError("at most 16 actions supported")
    states_arr = np.zeros((n_steps, 4))
    actions_arr = np.zeros(n_steps, dtype=np.int64)
    rewards_arr = np.zeros(n_steps)
    cdef cnp.float64_t[:, ::1] states = states_arr
    cdef cnp.int64_t[::1] actions = actions_arr
    cdef cnp.float64_t[::1] rewards = rewards_arr
    cdef double s0 = -0.05 + 0.1 * u0[0]
    cdef double s1 = -0.05 + 0.1 * u0[1]
    cdef double s2 = -0.05 + 0.1 * u0[2]
    cdef double s3 = -0.05 + 0.1 * u0[3]
    cdef double scores[16]
    cdef double acc, force, total_mass, polemass_length, costh, sinth, temp, thacc, xacc
    cdef int h, a, base, n = 0
    total_mass = masscart + masspole
    polemass_length = masspole * length
    with nogil:
        for h in range(n_steps):
            for a in range(n_actions):
                base = a * N_FEATURES
                acc = 0.0
                acc += th[base] * s0
                acc += th[base + 1] * s1
                acc += th[base + 2] * s2
                acc += th[base + 3] * s3
                acc += th[base + 4]
                scores[a] = acc
            a = _sample_softmax(scores, n_actions, ua[h])
            states[h, 0] = s0
            states[h, 1] = s1
            states[h, 2] = s2
            states[h, 3] = s3
            actions[h] = a
            force = FORCE_MAG if a == 1 else -FORCE_MAG
            costh = cos(s2)
            sinth = sin(s2)
            temp = (force + polemass_length * s3 * s3 * sinth) / total_mass
            thacc = (GRAVITY * sinth - costh * temp) / (
                length * (4.0 / 3.0 - masspole * costh * costh / total_mass))
            xacc = temp - polemass_length * thacc * costh / total_mass
            s1 = s1 + TAU * xacc
            s0 = s0 + TAU * s1
            s3 = s3 + TAU * thacc
            s2 = s2 + TAU * s3
            n = h + 1
            if s0 < -X_THRESHOLD or s0 > X_THRESHOLD or s2 < -THETA_THRESHOLD or s2 > THETA_THRESHOLD:
                break
            rewards[h] = 1.0
    return states_arr[:n], actions_arr[:n], rewards_arr[:n]


def tabular_rollout(scores, transitions, rewards_table, init, int n_steps, double init_u,
                    act_u, trans_u):
    cdef const cnp.float64_t[:, ::1] sc = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const cnp.float64_t[:, :, ::1] P = np.ascontiguousarray(transitions, dtype=np.float64)
    cdef const cnp.float64_t[:, ::1] R = np.ascontiguousarray(rewards_table, dtype=np.float64)
    cdef const cnp.float64_t[::1] nu = np.ascontiguousarray(init, dtype=np.float64)
    cdef const cnp.float64_t[::1] ua = np.ascontiguousarray(act_u, dtype=np.float64)
    cdef const cnp.float64_t[::1] ut = np.ascontiguousarray(trans_u, dtype=np.float64)
    cdef int n_states = P.shape[0]
    cdef int n_actions = P.shape[1]
    if n_actions > 16:
        raise ValueError("at most 16 actions supported")
    states_arr = np.zeros(n_steps, dtype=np.int64)
    actions_arr = np.zeros(n_steps, dtype=np.int64)
    rewards_arr = np.zeros(n_steps)
    cdef cnp.int64_t[::1] states = states_arr
    cdef cnp.int64_t[::1] actions = actions_arr
    cdef cnp.float64_t[::1] rewards = rewards_arr
    cdef int h, a
    cdef int s = _sample_categorical(&nu[0], n_states, init_u)
    with nogil:
        for h in range(n_steps):
            a = _sample_softmax(&sc[s, 0], n_actions, ua[h])
            states[h] = s
            actions[h] = a
            rewards[h] = R[s, a]
            s = _sample_categorical(&P[s, a, 0], n_states, ut[h])
    return states_arr, actions_arr, rewards_arr
