"""Time the numba kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--reps 7] [--scale 1.0]

Inputs are sized like one 512-ray render chunk at 64 samples per ray.
"""

import argparse
import statistics
import time

import numpy as np

from progvol import kernels


def make_inputs(scale, seed=0):
    rng = np.random.default_rng(seed)
    n_rays = max(1, int(512 * scale))
    n_pts = n_rays * 64
    occ = rng.random((40, 20, 48)) < 0.3
    lut = np.full(occ.shape, -1, dtype=np.int32)
    lut[occ] = np.arange(occ.sum(), dtype=np.int32)
    feats = rng.standard_normal((int(occ.sum()), 32))
    origin = np.zeros(3)
    size = 0.025
    pts = rng.uniform(0, 1, (n_pts, 3)) * np.array(occ.shape) * size
    fmap = rng.standard_normal((64, 64, 32)).astype(np.float32)
    uv = rng.uniform(-2, 66, (n_pts, 2))
    sigma = (rng.exponential(5.0, (n_rays, 64)) * (rng.random((n_rays, 64)) < 0.4)).astype(np.float32)
    delta = np.full(n_rays, 0.02, dtype=np.float32)
    color = rng.random((n_rays, 64, 3)).astype(np.float32)
    bg = np.zeros(3, dtype=np.float32)
    return {
        "bilinear_gather": (fmap, uv, np.float32),
        "occupancy_lookup": (lut, origin, size, pts),
        "trilinear_sparse": (lut, feats, origin, size, pts, np.float32),
        "composite_rays": (sigma, delta, color, bg),
    }


def time_call(fn, args, reps):
    fn(*args)  # warm up (and compile)
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        fn(*args)
        times.append((time.perf_counter() - start) * 1e3)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=7)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args(argv)
    inputs = make_inputs(args.scale)
    backends = [b for b in ("numpy", "numba") if b in kernels.IMPLEMENTATIONS]
    print(f"{'kernel':20}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for name, call_args in inputs.items():
        ms = [time_call(kernels.IMPLEMENTATIONS[b][name], call_args, args.reps) for b in backends]
        speed = f"{ms[0] / ms[1]:>9.1f}x" if len(ms) == 2 else ""
        print(f"{name:20}" + "".join(f"{m:>12.2f}" for m in ms) + speed)


if __name__ == "__main__":
    main()
