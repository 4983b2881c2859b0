"""Time the Monte-Carlo hot loops with numba on and off.

    python3 benchmarks/bench_kernels.py [--episodes 400] [--length 100] [--repeats 5]

Both paths consume the same pre-drawn uniforms, so the benchmark also checks
that they return identical arrays.
"""
import argparse
import time

import numpy as np

from netmpg import environments as E
from netmpg import kernels
from netmpg._accel import HAS_NUMBA
from netmpg.core import draw_uniforms
from netmpg.learning import make_policy


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=400)
    ap.add_argument("--length", type=int, default=100)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    cases = {
        "job_balancing n=6": E.job_balancing_model(E.JobBalancingSpec(n=6, total_jobs=12)),
        "sensor_coverage n=6": E.sensor_coverage_model(E.SensorCoverageSpec(n=6, grid_side=3)),
    }
    print(f"{'case':<22}{'path':<8}{'rollout s':>12}{'returns s':>12}")
    for name, m in cases.items():
        pp = make_policy(m, 1).packed()
        s0, ua, un = draw_uniforms(m, 0, args.episodes, args.length)
        results = {}
        for path in (["numba"] if HAS_NUMBA else []) + ["numpy"]:
            flag = path == "numba"
            kernels.rollout(m._packed, pp, s0[:2], ua[:2], un[:2], use_numba=flag)   # warm-up / compile
            t_roll, out = best_of(lambda: kernels.rollout(m._packed, pp, s0, ua, un, use_numba=flag),
                                  args.repeats)
            t_ret, g = best_of(lambda: kernels.returns_to_go(out[2], m.gamma, use_numba=flag),
                               args.repeats)
            results[path] = out + (g,)
            print(f"{name:<22}{path:<8}{t_roll:>12.4f}{t_ret:>12.4f}")
        if len(results) == 2:
            same = all(np.array_equal(a, b) for a, b in zip(results["numba"], results["numpy"]))
            print(f"{name:<22}identical outputs: {same}")


if __name__ == "__main__":
    main()
