"""Benchmark the stochastic-flow kernels: compiled backend vs numpy fallback.

Runs the conditional vector flow and the joint eigenvalue/eigenvector flow
at several dimensions on both backends (selected via EMF_BACKEND), checks
that the trajectories agree to floating-point roundoff, and prints a
timing table with speedups.

Usage: python3 benchmarks/bench_kernels.py [--steps 400] [--repeat 3]
"""

import argparse
import os
import time

import numpy as np


def run_backend(backend, n, steps, noise_vec, noise_val, lam0):
    os.environ["EMF_BACKEND"] = backend
    from emflab import kernels

    dt = 1e-5  # timing is dt-independent; small steps keep gaps open
    lam_steps = np.tile(lam0, (steps, 1))
    u = np.eye(n)
    t0 = time.perf_counter()
    kernels.vector_flow(u, lam_steps, noise_vec, dt, reorth_every=2)
    t_vec = time.perf_counter() - t0

    lam_path = np.empty((steps + 1, n))
    lam_path[0] = lam0
    uj = np.eye(n)
    t0 = time.perf_counter()
    done = kernels.joint_flow(lam_path, uj, noise_val, noise_vec, dt,
                              reorth_every=2, gap_floor=1e-10, start_step=0)
    t_joint = time.perf_counter() - t0
    if done != steps:
        raise RuntimeError(f"gap collapse at step {done}; widen the spectrum")
    return t_vec, t_joint, u, lam_path[-1]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    from emflab import kernels

    if not kernels.HAS_NUMBA:
        print("compiled backend unavailable; timing the numpy fallback only")
    sizes = (10, 20, 40, 80)
    rng = np.random.default_rng(7)

    # warm-up so compilation time is not billed to the first measurement
    if kernels.HAS_NUMBA:
        run_backend("numba", 5, 10, rng.standard_normal((10, 10)),
                    rng.standard_normal((10, 5)), np.linspace(-1, 1, 5))

    header = (f"{'n':>4} {'steps':>6} | {'numpy vec':>10} {'numba vec':>10} "
              f"{'speedup':>8} | {'numpy joint':>11} {'numba joint':>11} "
              f"{'speedup':>8} | {'max dev':>9}")
    print(header)
    print("-" * len(header))
    for n in sizes:
        steps = args.steps
        lam0 = np.linspace(-n / 10.0, n / 10.0, n)  # constant gaps ~0.2
        noise_vec = rng.standard_normal((steps, n * (n - 1) // 2))
        noise_val = rng.standard_normal((steps, n))

        results = {}
        for backend in ("numpy", "numba") if kernels.HAS_NUMBA else ("numpy",):
            best_vec = best_joint = float("inf")
            for _ in range(args.repeat):
                t_vec, t_joint, u, lam_end = run_backend(
                    backend, n, steps, noise_vec, noise_val, lam0)
                best_vec = min(best_vec, t_vec)
                best_joint = min(best_joint, t_joint)
            results[backend] = (best_vec, best_joint, u, lam_end)

        if kernels.HAS_NUMBA:
            nv, nj, u_np, lam_np = results["numpy"]
            bv, bj, u_nb, lam_nb = results["numba"]
            dev = max(np.abs(u_np - u_nb).max(), np.abs(lam_np - lam_nb).max())
            print(f"{n:>4} {steps:>6} | {nv * 1e3:>8.2f}ms {bv * 1e3:>8.2f}ms "
                  f"{nv / bv:>7.1f}x | {nj * 1e3:>9.2f}ms {bj * 1e3:>9.2f}ms "
                  f"{nj / bj:>7.1f}x | {dev:>9.2e}")
        else:
            nv, nj, _, _ = results["numpy"]
            print(f"{n:>4} {steps:>6} | {nv * 1e3:>8.2f}ms {'-':>10} {'-':>8} "
                  f"| {nj * 1e3:>9.2f}ms {'-':>11} {'-':>8} | {'-':>9}")

    os.environ.pop("EMF_BACKEND", None)


if __name__ == "__main__":
    main()
