"""Compare the compiled and numpy simulator kernels on a batched step.

Usage: python3 benchmarks/bench_sim.py [--envs 64] [--steps 300]
"""

import argparse
import time

import numpy as np

from lococycle import sim
from lococycle.sim.model import RobotModel


def bench(backend, envs, steps, seed=0):
    model = RobotModel()
    kernel = sim.get_step_kernel(backend)
    states = np.tile(sim.nominal_state(model).data, (envs, 1))
    actions = np.random.default_rng(seed).uniform(-0.1, 0.1, (steps, envs, 8))
    sim.step_many(model, states.copy(), actions[0], kernel)  # warm-up
    t0 = time.perf_counter()
    for a in actions:
        sim.step_many(model, states, a, kernel)
    return (time.perf_counter() - t0) / steps, states


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--envs", type=int, default=64)
    p.add_argument("--steps", type=int, default=300)
    args = p.parse_args()
    results = {}
    backends = ["python"] + (["cython"] if sim.BACKEND == "cython" else [])
    for be in backends:
        dt, final = bench(be, args.envs, args.steps)
        results[be] = final
        print(f"{be:<7} {dt * 1e3:8.3f} ms/step  ({args.envs} envs, {args.steps} steps)")
    if len(results) == 2:
        # libm and numpy's vectorized sin/cos/tanh can differ in the last ulp,
        # so the backends agree to rounding rather than bit-for-bit
        gap = np.max(np.abs(results["python"] - results["cython"]))
        t_py, _ = bench("python", args.envs, 50)
        t_cy, _ = bench("cython", args.envs, 50)
        print(f"speed-up {t_py / t_cy:.1f}x, max state difference after {args.steps} steps: {gap:.3e}")
    else:
        print("compiled kernel not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
