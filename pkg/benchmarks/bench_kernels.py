"""Time the compiled kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py            # kernel timings
    python benchmarks/bench_kernels.py --e2e      # plus whole-call timings per backend

Kernel timings call ``<name>_numba`` and ``<name>_numpy`` side by side after
one warm-up call (so JIT compilation is excluded). ``--e2e`` runs a few
package-level calls in fresh interpreters with and without
``PHI4_DISABLE_NUMBA=1``; those numbers include import and compile time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from phi4expand import kernels


def _cases(size):
    gen = np.random.default_rng(0)
    n = 4000 * size
    x = gen.random(n * 50)
    lo = gen.normal(size=x.size) * 1e-18
    grid = gen.normal(size=(64 * size, 36 * 36))
    shape = (20 * size, 17 * 17)
    psi = gen.normal(size=shape) + 1j * gen.normal(size=shape)
    forcing = gen.normal(size=shape) + 1j * gen.normal(size=shape)
    noise = gen.normal(size=shape) + 1j * gen.normal(size=shape)
    decay, phi1, amp = (gen.random(shape[1]) for _ in range(3))
    return {
        "shell_counts": ((lambda f: f(400 * size)), "nmax=%d" % (400 * size)),
        "dd_cumsum": ((lambda f: f(x, lo)), "n=%d" % x.size),
        "wick_integrals": ((lambda f: f(grid, 2.5)), "grids=%dx36x36" % grid.shape[0]),
        "exp_euler_update": ((lambda f: f(psi.copy(), forcing, noise, decay, phi1, amp)),
                             "batch=%dx289" % shape[0]),
    }


def bench(size=1, repeat=5):
    rows = []
    for name, (call, label) in _cases(size).items():
        out = []
        for variant in ("numba", "numpy"):
            fn = getattr(kernels, f"{name}_{variant}")
            call(fn)  # warm-up / compile
            number = 3
            best = min(timeit.repeat(lambda: call(fn), number=number, repeat=repeat)) / number
            out.append(best)
        rows.append((name, label, *out))
    return rows


E2E = {
    "wick_constants(2048)": "from phi4expand.renorm import wick_constants; wick_constants(2048)",
    "langevin N=8, 2000 steps": (
        "from phi4expand.sampler import ChainConfig, langevin_chain;"
        "langevin_chain(ChainConfig(N=8, eps=0.1, dt=0.01, n_steps=2000, thin=10, n_chains=20))"
    ),
}


def e2e():
    rows = []
    for label, code in E2E.items():
        times = []
        for disable in ("0", "1"):
            env = dict(os.environ, PHI4_DISABLE_NUMBA=disable)
            stmt = f"import time; t=time.perf_counter(); {code}; print(time.perf_counter()-t)"
            res = subprocess.run([sys.executable, "-c", stmt], env=env, capture_output=True, text=True, check=True)
            times.append(float(res.stdout.strip().splitlines()[-1]))
        rows.append((label, *times))
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=1, help="problem size multiplier")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--e2e", action="store_true", help="also time package calls per backend")
    args = p.parse_args(argv)

    print(f"{'kernel':<18} {'case':<22} {'numba [ms]':>11} {'numpy [ms]':>11} {'speedup':>8}")
    for name, label, tn, tp in bench(args.size, args.repeat):
        print(f"{name:<18} {label:<22} {1e3 * tn:>11.3f} {1e3 * tp:>11.3f} {tp / tn:>8.2f}")
    if args.e2e:
        print()
        print(f"{'call':<28} {'numba [s]':>10} {'numpy [s]':>10}")
        for label, tn, tp in e2e():
            print(f"{label:<28} {tn:>10.2f} {tp:>10.2f}")


if __name__ == "__main__":
    main()
