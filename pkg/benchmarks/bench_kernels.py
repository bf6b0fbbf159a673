"""Time the compiled kernels against the pure-Python reference.

Run with ``python benchmarks/bench_kernels.py``.  Each kernel is called on
identical inputs and identical random buffers for both backends; the script
also asserts that the outputs agree.
"""

import argparse
import time

import numpy as np

from pinlab import kernels
from pinlab.model import PotentialSpec
from pinlab.renewal import synthetic_q
from pinlab.transfer import GridSpec, kernel_tables, markov_kernel, renewal_tables


def timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(size):
    q = synthetic_q("critical-power", {}, 4 * size).q
    tab = renewal_tables(q, 2 * size)
    Q = np.cumsum(q)

    grid = GridSpec(8.0, 16)
    pot = PotentialSpec.gaussian()
    k = markov_kernel(1.0, grid, pot, N_max=1024)
    H = 256
    kt = kernel_tables(k, H, hit_N=H - 1)
    M = np.ascontiguousarray(k.block(0, H + 1, tilt=True, hat=True))
    K = np.ascontiguousarray(k.block(0, H + 1))
    g = np.ascontiguousarray(kt.g)
    h = np.ascontiguousarray(kt.h)

    taus = np.arange(0, size + 2, 37, dtype=np.int64)
    taus[-1] = size + 1
    Js = np.zeros(taus.size)

    lengths = np.full(200, H // 2, dtype=np.int64)
    zeros = np.zeros_like(lengths)
    return {
        "renewal_mass": lambda impl, rng: kernels.renewal_mass(q, size, impl),
        "conditioned_renewal": lambda impl, rng: kernels.conditioned_renewal(q, Q, tab.u, 2 * size, rng, impl),
        "fill_excursions": lambda impl, rng: kernels.fill_excursions(taus, Js, 1.0, size, rng, impl),
        "sample_blocks": lambda impl, rng: kernels.sample_blocks(zeros, zeros, lengths, g, M, rng, impl)[0],
        "sample_hit_chain": lambda impl, rng: kernels.sample_hit_chain(K, h, H - 1, rng, impl)[0],
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    py = kernels.backend_module("python")
    cy = kernels.backend_module("cython")
    print(f"{'kernel':<22}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, fn in cases(args.size).items():
        tp, op = timeit(lambda: fn(py, np.random.default_rng(5)), args.repeat)
        tc, oc = timeit(lambda: fn(cy, np.random.default_rng(5)), args.repeat)
        if not np.array_equal(op, oc):
            raise AssertionError(f"{name}: backends disagree")
        print(f"{name:<22}{tp:>12.4f}{tc:>12.5f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
