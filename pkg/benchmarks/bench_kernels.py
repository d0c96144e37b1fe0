"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--gamma 30,100] [--repeat 5]

Both backends run on the same Pi table; results are checked for agreement
before any timing is reported.
"""
import argparse
import time

import numpy as np

from smj import _backend
from smj.disability import disability_family
from smj.intensity import shift
from smj.kernel import UniformizationKernel, jump_measure, transition_measure
from smj.pi_engine import build_pi_table


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def bench(gamma, repeat, horizon=5.0, s=4.0, n_v=200):
    fam = shift(disability_family(), 40.0)
    k = UniformizationKernel(fam, gamma, horizon, "conditional", seed=0)
    v = np.linspace(0.0, s, n_v + 1)
    tasks = {
        "pi_recursion": lambda b: build_pi_table(k.steps, k.table.L_max, horizon, backend=b).pi,
        "density": lambda b: transition_measure(k.table, s, v, backend=b).density,
        "jump_density": lambda b: jump_measure(k.table, s, v, backend=b).density,
    }
    rows = []
    for name, fn in tasks.items():
        times = {}
        ref = None
        for b in _backend.BACKENDS:
            t, out = best_of(lambda: fn(b), repeat)
            times[b] = t
            if ref is None:
                ref = out
            else:
                np.testing.assert_allclose(out, ref, rtol=1e-11, atol=1e-14)
        rows.append((gamma, k.table.L_max, name, times))
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--gamma", default="30,100")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    names = list(_backend.BACKENDS)
    print(f"backends: {', '.join(names)} (default {_backend.DEFAULT})")
    print(f"{'gamma':>6} {'L_max':>6} {'kernel':<13}" + "".join(f"{n + ' [s]':>14}" for n in names) + "   speedup")
    for g in (float(x) for x in args.gamma.split(",")):
        for gamma, L, name, times in bench(g, args.repeat):
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{gamma:6g} {L:6d} {name:<13}" + "".join(f"{times[n]:14.4f}" for n in names) + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
