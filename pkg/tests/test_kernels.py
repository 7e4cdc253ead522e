import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from epicrl import _kernels_py, kernels

compiled = pytest.importorskip("epicrl._kernels")

unit = st.floats(0, 1, exclude_max=True)


def test_compiled_backend_selected():
    assert kernels.BACKEND == "cython"


@given(arrays(np.float64, 10, elements=st.floats(-20, 20)), st.floats(0.1, 10), st.floats(0.01, 1),
       st.floats(0.1, 2), arrays(np.float64, 4, elements=unit), arrays(np.float64, 199, elements=unit))
def test_cartpole_backends_identical(theta, mc, mp, length, init_u, act_u):
    a = compiled.cartpole_rollout(theta, mc, mp, length, 199, init_u, act_u)
    b = _kernels_py.cartpole_rollout(theta, mc, mp, length, 199, init_u, act_u)
    for x, y in zip(a, b):
        assert x.shape == y.shape and np.array_equal(x, y)


@given(st.integers(1, 5), st.integers(1, 3), st.data())
def test_tabular_backends_identical(S, A, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 32)))
    P = rng.dirichlet(np.ones(S), size=(S, A))
    R = rng.random((S, A))
    init = rng.dirichlet(np.ones(S))
    scores = rng.normal(scale=5, size=(S, A))
    n = data.draw(st.integers(1, 12))
    args = (scores, P, R, init, n, rng.random(), rng.random(n), rng.random(n))
    for x, y in zip(compiled.tabular_rollout(*args), _kernels_py.tabular_rollout(*args)):
        assert np.array_equal(x, y)


def test_read_only_inputs_accepted():
    theta = np.zeros(10)
    theta.setflags(write=False)
    u = np.full(4, 0.5)
    u.setflags(write=False)
    states, actions, rewards = compiled.cartpole_rollout(theta, 1.0, 0.1, 0.5, 10, u, np.full(10, 0.3))
    assert states.shape[0] == actions.shape[0] == rewards.shape[0] > 0


def test_termination_truncates():
    # always push left: the episode ends well before the horizon
    theta = np.array([0, 0, 0, 0, 50.0, 0, 0, 0, 0, 0])
    states, actions, rewards = compiled.cartpole_rollout(theta, 1.0, 0.1, 0.5, 199, np.full(4, 0.5),
                                                         np.full(199, 0.5))
    assert len(actions) < 199 and np.all(actions == 0)
    assert rewards[-1] == 0.0 and np.all(rewards[:-1] == 1.0)
