"""Compare the compiled and numpy closest-point kernels.

    python benchmarks/bench_kernels.py [--queries N] [--repeat R]

Both backends run on the same sphere mesh and query set; the script checks
that their outputs agree bit for bit before reporting timings.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from voxsynth import _kernels
from voxsynth.reconstruct import marching_cubes
from voxsynth.validate import SurfaceIndex
from voxsynth.volume import Volume


def sphere_mesh(radius: float = 10.0):
    n = int(2 * radius + 6)
    z, y, x = np.mgrid[:n, :n, :n] - (n - 1) / 2
    return marching_cubes(Volume((x * x + y * y + z * z <= radius * radius).astype(np.float32)))


def bench(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--queries", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    mesh = sphere_mesh()
    index = SurfaceIndex(mesh)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-15, 15, size=(args.queries, 3)) + mesh.vertices.mean(axis=0)
    print(f"mesh: {len(mesh.triangles)} triangles, {args.queries} queries")

    backends = {"python": _kernels.fallback}
    if _kernels.compiled is not None:
        backends["cython"] = _kernels.compiled
    else:
        print("compiled extension not built; timing the fallback only")

    results, times = {}, {}
    for name, mod in backends.items():
        results[name] = index.query(pts, backend=mod)
        times[name] = (bench(lambda: index.query(pts, backend=mod), args.repeat),
                       bench(lambda: index.brute_force(pts, backend=mod), 1))
    if len(results) == 2:
        same = all(np.array_equal(a, b) for a, b in zip(results["python"], results["cython"]))
        print(f"backends agree bit-for-bit: {same}")
    print(f"{'backend':<8}{'bvh (s)':>12}{'brute (s)':>12}")
    for name, (t_bvh, t_brute) in times.items():
        print(f"{name:<8}{t_bvh:>12.4f}{t_brute:>12.4f}")
    if len(times) == 2:
        print(f"bvh speedup cython/python: {times['python'][0] / times['cython'][0]:.1f}x")


if __name__ == "__main__":
    main()
