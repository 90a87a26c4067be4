"""Compare the compiled and numpy statevector kernels.

Run with ``python3 benchmarks/bench_kernels.py [--sizes 12 16 20] [--layers 8]``.
"""

import argparse
import time

import numpy as np

from nuflavor import kernels


def random_state(n, rng):
    psi = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return psi / np.linalg.norm(psi)


def best_time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[12, 16, 20])
    parser.add_argument("--layers", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    impls = kernels.available()
    rng = np.random.default_rng(0)
    print(f"{'n':>3} {'impl':>7} {'seconds':>10} {'gates/s':>12} {'speedup':>8}")
    for n in args.sizes:
        psi0 = random_state(n, rng)
        angles = rng.uniform(0, 2 * np.pi, size=(args.layers, n - 1))
        gates = args.layers * (n - 1)
        ref_time, ref_out = None, None
        for name in ("numpy", "cython"):
            if name not in impls:
                continue
            mod = impls[name]
            psi = psi0.copy()
            mod.apply_layers(psi, n, angles)
            if ref_out is None:
                ref_out = psi
            else:
                diff = np.max(np.abs(psi - ref_out))
                assert diff < 1e-12, f"{name} disagrees with numpy by {diff}"

            def run(mod=mod):
                mod.apply_layers(psi0.copy(), n, angles)

            sec = best_time(run, args.repeats)
            ref_time = ref_time or sec
            print(f"{n:>3} {name:>7} {sec:>10.4f} {gates / sec:>12.1f} {ref_time / sec:>7.2f}x")
    if "cython" not in impls:
        print("compiled kernels unavailable; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
