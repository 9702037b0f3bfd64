"""Compare the numba kernels against their numpy fallbacks.

Run with ``python benchmarks/bench_kernels.py``.  Each kernel is compiled
once before timing; both versions must agree to 1e-9 or the script exits
with status 1.
"""

import argparse
import statistics
import sys
import time

import numpy as np

from linexplore import kernels
from linexplore.env import make_random_mdp
from linexplore.rng import make_stream


def timed(fn, args, repeat):
    fn(*[a.copy() if isinstance(a, np.ndarray) else a for a in args])  # compile / warm up
    times = []
    for _ in range(repeat):
        fresh = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
        start = time.perf_counter()
        out = fn(*fresh)
        times.append(time.perf_counter() - start)
    return statistics.median(times), out


def cases(scale):
    rng = make_stream(0, "benchmark")
    mdp = make_random_mdp(20, 4, 10, rng, noise_bound=0.0)[0]
    pi = np.full((mdp.horizon, mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    d = 8
    inv = np.linalg.inv(np.eye(d) * 2.0)
    return {
        "sherman_morrison": ((inv, rng.standard_normal(d)), 2000),
        "backward_induction": ((mdp.transitions, mdp.reward_mean, 1.0), 200),
        "evaluate_policy": ((mdp.transitions, mdp.reward_mean, 1.0, pi), 200),
        "determinant_lemma_lhs": ((rng.standard_normal((50 * scale, 1000, 4)) / 2.0, 1.0), 5),
        "self_normalized_trials": ((rng.standard_normal((50 * scale, 500, 3)), rng.uniform(-1, 1, (50 * scale, 500)), 1.0), 5),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scale", type=int, default=1, help="multiplies the Monte-Carlo batch sizes")
    args = parser.parse_args(argv)
    if not kernels.NUMBA_AVAILABLE:
        print("numba is not importable; nothing to compare")
        return 0
    ok = True
    print(f"{'kernel':<24}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, (call_args, repeat) in cases(args.scale).items():
        t_nb, out_nb = timed(getattr(kernels, name + "_nb"), call_args, repeat)
        t_np, out_np = timed(getattr(kernels, name + "_np"), call_args, repeat)
        outs_nb = out_nb if isinstance(out_nb, tuple) else (out_nb,)
        outs_np = out_np if isinstance(out_np, tuple) else (out_np,)
        agree = all(np.allclose(a, b, rtol=1e-9, atol=1e-9) for a, b in zip(outs_nb, outs_np))
        ok &= agree
        flag = "" if agree else "  MISMATCH"
        print(f"{name:<24}{1e3 * t_nb:>12.3f}{1e3 * t_np:>12.3f}{t_np / t_nb:>10.1f}{flag}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
