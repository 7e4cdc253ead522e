"""Compiled vs pure-Python rollout kernels.

    python3 benchmarks/bench_kernels.py [--repeats 200]

Runs the same seeded rollouts through both backends, checks that the
trajectories are identical, and prints rollouts per second for each.
"""
import argparse
import time

import numpy as np

from epicrl import _kernels_py, envs
from epicrl.rng import generator

try:
    from epicrl import _kernels
except ImportError:  # extension not built
    _kernels = None


def _cartpole_case(rng):
    theta = envs.BlockStateFeatures(2, 4, envs.CARTPOLE_FEATURE_SCALE).raw_theta(rng.normal(0, 2, 10))
    return (theta, 1.0, 0.1, 0.5, 199, rng.random(4), rng.random(199))


def _chain_case(rng):
    task = envs.river_chain(slip=0.2)
    scores = rng.normal(size=(task.n_states, task.n_actions))
    n = 50
    return (scores, task.transitions, task.rewards, task.init, n, rng.random(), rng.random(n), rng.random(n))


def _time(fn, cases):
    start = time.perf_counter()
    out = [fn(*c) for c in cases]
    return time.perf_counter() - start, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; only the Python backend can run")
        return 1
    rng = generator(0, "bench")
    for name, make, attr in (("cartpole", _cartpole_case, "cartpole_rollout"),
                             ("chain", _chain_case, "tabular_rollout")):
        cases = [make(rng) for _ in range(args.repeats)]
        t_py, out_py = _time(getattr(_kernels_py, attr), cases)
        t_c, out_c = _time(getattr(_kernels, attr), cases)
        same = all(all(np.array_equal(a, b) for a, b in zip(x, y)) for x, y in zip(out_py, out_c))
        steps = sum(len(o[1]) for o in out_py)
        print(f"{name:9s} python {args.repeats / t_py:10.0f} rollouts/s   "
              f"cython {args.repeats / t_c:10.0f} rollouts/s   "
              f"speedup {t_py / t_c:6.1f}x   steps {steps}   identical={same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
