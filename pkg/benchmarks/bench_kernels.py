"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 33 65 129] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from spindrift.kernels import available_backends, load_backend
from spindrift.llg import tilt_profile
from spindrift.mesh import Grid2D


def cases(grid):
    rng = np.random.default_rng(0)
    m = tilt_profile(grid, 0.8)
    # 4x4 face coefficient blocks, as assembled by the transport step
    ax = np.eye(4)[:, :, None, None] + 0.1 * rng.random((4, 4, grid.nx - 1, grid.ny))
    ay = np.eye(4)[:, :, None, None] + 0.1 * rng.random((4, 4, grid.nx, grid.ny - 1))
    n = 1.0 + 0.1 * rng.random((4, *grid.shape))
    v1, v2 = rng.normal(size=grid.shape), rng.normal(size=grid.shape)
    hx, hy = grid.hx, grid.hy
    dt = 0.1 * hx * hx
    return {
        "llg_rhs": lambda k: k.llg_rhs(m, hx, hy),
        "heun_step": lambda k: k.heun_step(m, dt, hx, hy),
        "diffusion_triplets": lambda k: k.diffusion_triplets(ax, ay, hx, hy),
        "drift_divergence": lambda k: k.drift_divergence(ax, ay, n, v1, v2, hx, hy),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[33, 65, 129])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {name: load_backend(name) for name in available_backends()}
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':20s} {'N':>5s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for N in args.sizes:
        for name, fn in cases(Grid2D(N, N)).items():
            times = {}
            for b, mod in backends.items():
                number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-7)))
                best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
                times[b] = best
            ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
            cols = " ".join(f"{times[b] * 1e6:10.1f}us" for b in backends)
            print(f"{name:20s} {N:5d} {cols}   {ratio:6.2f}x")


if __name__ == "__main__":
    main()
