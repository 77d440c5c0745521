"""Slow, loop-based reference computations shared by the tests."""

import numpy as np

from progvol.geometry import generate_rays, ray_aabb_intersect_many
from progvol.nets import density_forward
from progvol.renderer import _point_features
from progvol.volume import occupied_aabb


def brute_force_pixels(volume, cam):
    """Project each occupied voxel centre and collect the 2x2 pixel block around it."""
    chosen = set()
    for idx in volume.indices:
        x = volume.grid.origin + (idx + 0.5) * volume.grid.voxel_size
        pc = cam.R @ x + cam.t
        if pc[2] <= 0:
            continue
        u = cam.K[0, 0] * pc[0] / pc[2] + cam.K[0, 1] * pc[1] / pc[2] + cam.K[0, 2]
        v = cam.K[1, 1] * pc[1] / pc[2] + cam.K[1, 2]
        i0, j0 = int(np.floor(u - 0.5)), int(np.floor(v - 0.5))
        for i in (i0, i0 + 1):
            for j in (j0, j0 + 1):
                if 0 <= i < cam.width and 0 <= j < cam.height:
                    chosen.add((j, i))
    return np.array([(i, j) for j, i in sorted(chosen)])


def count_oracle(scene, bundle, cam, pixels, n):
    """Independent per-sample counts of occupied and positive-density samples."""
    box = occupied_aabb(scene.volume)
    origins, dirs = generate_rays(cam, pixels)
    tn, tf, hit = ray_aabb_intersect_many(origins, dirs, box.lo, box.hi)
    g = scene.volume.grid
    rays, pts = 0, []
    for p in np.flatnonzero(hit & (tf > tn)):
        rays += 1
        step = (tf[p] - tn[p]) / n
        for i in range(n):
            x = origins[p] + (tn[p] + (i + 0.5) * step) * dirs[p]
            idx = np.floor((x - g.origin) / g.voxel_size).astype(int)
            if np.all(idx >= 0) and np.all(idx < g.resolution) and scene.volume.lut[tuple(idx)] >= 0:
                pts.append(x)
    pts = np.array(pts)
    geom, _, mu, var = _point_features(scene, pts, np.float32)
    sigma = density_forward(bundle.density.astype(np.float32), geom, mu, var)
    return rays, len(pts), int((sigma > 0).sum())
