"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--points 100000] [--joints 24]

The same kernels are selected at import time by SKINCELLS_NUMBA; here both
implementations are imported directly and timed on identical inputs.
"""

import argparse
import time

import numpy as np

from skincells import build_laplacian, toys
from skincells.field import cell_stride
from skincells.kernels import numpy_impl

try:
    from skincells.kernels import numba_impl
except ImportError:
    numba_impl = None


def best_of(fn, repeat=5, warmup=1):
    for _ in range(warmup):
        fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=100_000)
    parser.add_argument("--joints", type=int, default=24)
    parser.add_argument("--sites", type=int, default=6)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    n, m, l = args.joints, args.sites, 4
    params = rng.normal(scale=0.5, size=n * cell_stride(m))
    points = rng.uniform(-20, 20, size=(args.points, 3))
    grad_w = rng.normal(size=(args.points, n))

    mesh = toys.cylinder_mesh(radius=3.0, length=30.0, axial=100, radial=24)
    lap = build_laplacian(mesh)
    positions = rng.normal(size=(mesh.n_vertices, 3))
    seg_a = rng.uniform(-6, 6, size=(2000, 3))
    seg_b = rng.uniform(-6, 6, size=(2000, 3))
    no_excl = np.zeros(2001, dtype=np.int64), np.empty(0, dtype=np.int64)

    impls = [("numpy", numpy_impl)]
    if numba_impl is not None:
        impls.append(("numba", numba_impl))
    else:
        print("numba unavailable; timing the numpy fallback only")

    rows = []
    saved = numpy_impl.field_forward(params, n, m, points, l, False)
    cases = {
        "field_forward": lambda impl: impl.field_forward(params, n, m, points, l, False),
        "field_backward": lambda impl: impl.field_backward(
            params, n, m, points, l, False, *saved, grad_w
        ),
        "laplacian_apply": lambda impl: impl.laplacian_apply(
            lap.offsets, lap.flat, lap.inv_deg, positions
        ),
        "segment_hits": lambda impl: impl.segment_hits(
            mesh.vertices, mesh.triangles, seg_a, seg_b, *no_excl, 1e-4
        ),
    }
    for name, case in cases.items():
        times = {}
        for impl_name, impl in impls:
            times[impl_name] = best_of(lambda: case(impl), repeat=args.repeat)
        speedup = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        rows.append((name, times["numpy"], times.get("numba", float("nan")), speedup))

    print(f"\n{args.points:,} points, n={n} joints, m={m} sites "
          f"| mesh {mesh.n_vertices} verts / {mesh.n_triangles} tris, 2,000 segments")
    print(f"{'kernel':<18}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, t_np, t_nb, s in rows:
        print(f"{name:<18}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms{s:>9.1f}x")


if __name__ == "__main__":
    main()
