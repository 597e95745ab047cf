"""Compare the compiled kernels with the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Both backends are timed on the same inputs and their outputs are checked to
agree before timings are printed.
"""
import argparse
import timeit

import numpy as np

from thermobench import kernels
from thermobench.rcnet import assemble
from thermobench.rcnet.building import desk_building
from thermobench.synth import default_gamma


def rollout_case(T=672, seed=0):
    m = assemble(desk_building(), default_gamma(6))
    rng = np.random.default_rng(seed)
    U = rng.uniform(0.0, 0.4, (T, m.n_inputs))
    V = np.column_stack([rng.uniform(5, 30, T), np.full(T, 12.8)])
    F = rng.uniform(0.0, 0.5, (T, m.n_zones))
    x0 = np.full(m.n_states, 21.0)
    return lambda b: kernels.rollout_bilinear(m.A, m.Bv, m.Big, m.xu, m.vu, x0, U, V, F, backend=b)[0]


def smoother_case(n_pos=672, n_eval=672, channels=8, seed=0):
    rng = np.random.default_rng(seed)
    upos = np.arange(n_pos, dtype=float)
    counts = rng.integers(1, 4, n_pos).astype(float)
    sums = rng.normal(size=(n_pos, channels)) * counts[:, None]
    ev = np.arange(n_eval, dtype=float)
    return lambda b: kernels.lwlr_grouped(upos, counts, sums, ev, 12.0, float(n_pos), backend=b)[0]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the python backend only")
    print(f"{'kernel':<20}{'backend':<10}{'ms/call':>10}{'speedup':>10}")
    for name, case in (("rollout_bilinear", rollout_case()), ("lwlr_grouped", smoother_case())):
        ref = case("python")
        times = {}
        for b in backends:
            out = case(b)
            np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-10)
            times[b] = min(timeit.repeat(lambda: case(b), number=1, repeat=args.repeat)) * 1e3
        for b, t in times.items():
            print(f"{name:<20}{b:<10}{t:>10.3f}{times['python'] / t:>9.1f}x")


if __name__ == "__main__":
    main()
