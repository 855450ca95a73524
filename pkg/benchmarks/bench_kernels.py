#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the smoothed value+gradient kernel, the projection, and one full APG
iteration across problem sizes, printing per-call microseconds and the
numba speedup. Run after any kernel change:

    python benchmarks/bench_kernels.py [--repeats 2000]
"""

import argparse
import time

import numpy as np

from cellfree_maxmin import Dimensions, PhysicalConfig, build_rate_model, generate_instance
from cellfree_maxmin.kernels import HAVE_NUMBA, NUMPY_IMPL, NUMBA_IMPL


def time_call(fn, args, repeats):
    fn(*args)  # warm (JIT compile / cache touch)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats * 1e6


def bench_size(m_aps, n_groups, users_per_group, repeats):
    dims = Dimensions.uniform(m_aps, n_groups, users_per_group)
    inst = generate_instance(dims, PhysicalConfig(), seed=0)
    model = build_rate_model(inst)
    gs, asq, ptr, rho = model.gamma_sqrt, model.a_sq, model.group_ptr, model.rho_bar
    rng = np.random.default_rng(0)
    mu = np.ascontiguousarray(rng.uniform(0.05, 0.6, size=(n_groups, m_aps)))

    cases = {
        "value_grad": lambda impl: (impl.soft_min_value_grad, (gs, asq, ptr, mu, rho, 100.0)),
        "project": lambda impl: (impl.project_ball_orthant, (mu,)),
        "apg_step": lambda impl: (
            impl.rate_apg_step,
            (gs, asq, ptr, rho, 100.0, mu, mu, mu, 1.0, 1.0, 1.0, 1.0, 1e-5, 0.45, 60),
        ),
    }
    rows = []
    for name, make in cases.items():
        fn_np, args = make(NUMPY_IMPL)
        t_np = time_call(fn_np, args, repeats)
        if HAVE_NUMBA:
            fn_nb, args = make(NUMBA_IMPL)
            t_nb = time_call(fn_nb, args, repeats)
            rows.append((name, t_np, t_nb, t_np / t_nb))
        else:
            rows.append((name, t_np, float("nan"), float("nan")))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    if not HAVE_NUMBA:
        print("numba not available; timing the numpy backend only")
    print(f"{'size':>18s} {'kernel':>12s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for m, n, k in [(30, 2, 4), (100, 2, 15), (100, 4, 10), (200, 2, 15)]:
        for name, t_np, t_nb, sp in bench_size(m, n, k, args.repeats):
            print(f"M={m:<4d} N={n} K={k:<3d} {name:>12s} {t_np:10.2f} {t_nb:10.2f} {sp:8.2f}x")


if __name__ == "__main__":
    main()
