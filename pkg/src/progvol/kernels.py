"""Hot inner loops: feature gathers, occupancy lookups and ray compositing.

Every kernel has a vectorised numpy implementation (``*_np``) and a
loop implementation compiled with numba (``*_nb``).  The public names
dispatch to one of them according to :data:`progvol._accel.USE_NUMBA`.
Both paths take and return plain arrays so they can be compared
directly in tests and in ``benchmarks/bench_kernels.py``.
"""

import math

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, jit

__all__ = [
    "bilinear_gather",
    "occupancy_lookup",
    "trilinear_sparse",
    "composite_rays",
    "IMPLEMENTATIONS",
]


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------


def bilinear_gather_np(fmap, uv, out_dtype=np.float64):
    """Bilinearly sample ``fmap`` (H, W, d) at node coordinates ``uv`` (P, 2).

    Coordinates are clamped to [0, W-1] x [0, H-1]; the returned flag is
    True wherever clamping changed the coordinate.
    """
    h, w, _ = fmap.shape
    u = uv[:, 0].astype(np.float64)
    v = uv[:, 1].astype(np.float64)
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    oob = (uc != u) | (vc != v)
    i0 = np.minimum(np.floor(uc).astype(np.int64), max(w - 2, 0))
    j0 = np.minimum(np.floor(vc).astype(np.int64), max(h - 2, 0))
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    fu = (uc - i0)[:, None]
    fv = (vc - j0)[:, None]
    f00 = fmap[j0, i0].astype(np.float64)
    f01 = fmap[j0, i1].astype(np.float64)
    f10 = fmap[j1, i0].astype(np.float64)
    f11 = fmap[j1, i1].astype(np.float64)
    out = (1.0 - fv) * ((1.0 - fu) * f00 + fu * f01) + fv * ((1.0 - fu) * f10 + fu * f11)
    return out.astype(out_dtype, copy=False), oob


def occupancy_lookup_np(lut, origin, voxel_size, points):
    """Row index into the occupied-feature table for each point, -1 when empty."""
    idx = np.floor((points.astype(np.float64) - origin) / voxel_size).astype(np.int64)
    res = np.asarray(lut.shape)
    inside = np.all((idx >= 0) & (idx < res), axis=1)
    rows = np.full(len(points), -1, dtype=np.int32)
    ii = idx[inside]
    rows[inside] = lut[ii[:, 0], ii[:, 1], ii[:, 2]]
    return rows


_CORNERS = np.array(
    [[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.int64
)


def trilinear_sparse_np(lut, feats, origin, voxel_size, points, out_dtype=np.float64):
    """Trilinear interpolation over occupied voxel centres.

    Unoccupied lattice nodes get zero weight and the remaining weights are
    renormalised; a point with no occupied node yields the zero vector.
    """
    p = len(points)
    d = feats.shape[1]
    g = (points.astype(np.float64) - origin) / voxel_size - 0.5
    base = np.floor(g).astype(np.int64)
    frac = g - base
    res = np.asarray(lut.shape)
    acc = np.zeros((p, d), dtype=np.float64)
    wsum = np.zeros(p, dtype=np.float64)
    for corner in _CORNERS:
        idx = base + corner
        w = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=1)
        inside = np.all((idx >= 0) & (idx < res), axis=1)
        rows = np.full(p, -1, dtype=np.int64)
        ii = idx[inside]
        rows[inside] = lut[ii[:, 0], ii[:, 1], ii[:, 2]]
        hit = rows >= 0
        w = np.where(hit, w, 0.0)
        acc[hit] += w[hit, None] * feats[rows[hit]].astype(np.float64)
        wsum += w
    ok = wsum > 0.0
    acc[ok] /= wsum[ok, None]
    return acc.astype(out_dtype, copy=False)


def composite_rays_np(sigma, delta, color, background):
    """Volume-render R rays of N samples.

    Returns (rgb (R, 3), weights (R, N), transmittance (R, N + 1)) where
    transmittance[:, i] is the light surviving the first i samples.
    """
    dt = color.dtype
    tau = sigma * delta[:, None]
    depth = np.zeros((sigma.shape[0], sigma.shape[1] + 1), dtype=dt)
    np.cumsum(tau, axis=1, out=depth[:, 1:])
    trans = np.exp(-depth)
    alpha = -np.expm1(-tau)
    weights = trans[:, :-1] * alpha
    rgb = np.einsum("rn,rnk->rk", weights, color) + trans[:, -1:] * background.astype(dt)
    return rgb.astype(dt, copy=False), weights, trans


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------


@jit
def _bilinear_gather_loop(fmap, uv, out, oob):
    h, w, d = fmap.shape
    for p in range(uv.shape[0]):
        u = uv[p, 0]
        v = uv[p, 1]
        uc = min(max(u, 0.0), w - 1.0)
        vc = min(max(v, 0.0), h - 1.0)
        oob[p] = (uc != u) or (vc != v)
        i0 = min(int(math.floor(uc)), max(w - 2, 0))
        j0 = min(int(math.floor(vc)), max(h - 2, 0))
        i1 = min(i0 + 1, w - 1)
        j1 = min(j0 + 1, h - 1)
        fu = uc - i0
        fv = vc - j0
        for k in range(d):
            top = (1.0 - fu) * fmap[j0, i0, k] + fu * fmap[j0, i1, k]
            bot = (1.0 - fu) * fmap[j1, i0, k] + fu * fmap[j1, i1, k]
            out[p, k] = (1.0 - fv) * top + fv * bot


def bilinear_gather_nb(fmap, uv, out_dtype=np.float64):
    out = np.empty((uv.shape[0], fmap.shape[2]), dtype=out_dtype)
    oob = np.empty(uv.shape[0], dtype=np.bool_)
    _bilinear_gather_loop(fmap, np.ascontiguousarray(uv, dtype=np.float64), out, oob)
    return out, oob


@jit
def _occupancy_loop(lut, origin, voxel_size, points, rows):
    nx, ny, nz = lut.shape
    for p in range(points.shape[0]):
        i = int(math.floor((points[p, 0] - origin[0]) / voxel_size))
        j = int(math.floor((points[p, 1] - origin[1]) / voxel_size))
        k = int(math.floor((points[p, 2] - origin[2]) / voxel_size))
        if 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
            rows[p] = lut[i, j, k]
        else:
            rows[p] = -1


def occupancy_lookup_nb(lut, origin, voxel_size, points):
    rows = np.empty(points.shape[0], dtype=np.int32)
    _occupancy_loop(
        lut, np.asarray(origin, dtype=np.float64), float(voxel_size),
        np.ascontiguousarray(points, dtype=np.float64), rows,
    )
    return rows


@jit
def _trilinear_loop(lut, feats, origin, voxel_size, points, out):
    nx, ny, nz = lut.shape
    d = feats.shape[1]
    acc = np.empty(d, dtype=np.float64)
    for p in range(points.shape[0]):
        gx = (points[p, 0] - origin[0]) / voxel_size - 0.5
        gy = (points[p, 1] - origin[1]) / voxel_size - 0.5
        gz = (points[p, 2] - origin[2]) / voxel_size - 0.5
        bx = int(math.floor(gx))
        by = int(math.floor(gy))
        bz = int(math.floor(gz))
        fx = gx - bx
        fy = gy - by
        fz = gz - bz
        acc[:] = 0.0
        wsum = 0.0
        # corner order matches _CORNERS in the numpy path
        for a in range(2):
            wx = fx if a == 1 else 1.0 - fx
            i = bx + a
            for b in range(2):
                wy = fy if b == 1 else 1.0 - fy
                j = by + b
                for c in range(2):
                    wz = fz if c == 1 else 1.0 - fz
                    k = bz + c
                    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                        continue
                    row = lut[i, j, k]
                    if row < 0:
                        continue
                    w = wx * wy * wz
                    wsum += w
                    for q in range(d):
                        acc[q] += w * feats[row, q]
        if wsum > 0.0:
            for q in range(d):
                out[p, q] = acc[q] / wsum
        else:
            for q in range(d):
                out[p, q] = 0.0


def trilinear_sparse_nb(lut, feats, origin, voxel_size, points, out_dtype=np.float64):
    out = np.empty((points.shape[0], feats.shape[1]), dtype=out_dtype)
    _trilinear_loop(
        lut, feats, np.asarray(origin, dtype=np.float64), float(voxel_size),
        np.ascontiguousarray(points, dtype=np.float64), out,
    )
    return out


@jit
def _composite_loop(sigma, delta, color, background, rgb, weights, trans):
    r_count, n = sigma.shape
    for r in range(r_count):
        depth = 0.0
        trans[r, 0] = 1.0
        for k in range(3):
            rgb[r, k] = 0.0
        for i in range(n):
            tau = sigma[r, i] * delta[r]
            t_i = math.exp(-depth)
            w = t_i * -math.expm1(-tau)
            weights[r, i] = w
            for k in range(3):
                rgb[r, k] += w * color[r, i, k]
            depth += tau
            trans[r, i + 1] = math.exp(-depth)
        for k in range(3):
            rgb[r, k] += trans[r, n] * background[k]


def composite_rays_nb(sigma, delta, color, background):
    dt = color.dtype
    r_count, n = sigma.shape
    rgb = np.empty((r_count, 3), dtype=dt)
    weights = np.empty((r_count, n), dtype=dt)
    trans = np.empty((r_count, n + 1), dtype=dt)
    _composite_loop(
        np.ascontiguousarray(sigma, dtype=dt), np.ascontiguousarray(delta, dtype=dt),
        np.ascontiguousarray(color, dtype=dt), np.asarray(background, dtype=dt),
        rgb, weights, trans,
    )
    return rgb, weights, trans


IMPLEMENTATIONS = {
    "numpy": {
        "bilinear_gather": bilinear_gather_np,
        "occupancy_lookup": occupancy_lookup_np,
        "trilinear_sparse": trilinear_sparse_np,
        "composite_rays": composite_rays_np,
    },
}
if HAVE_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "bilinear_gather": bilinear_gather_nb,
        "occupancy_lookup": occupancy_lookup_nb,
        "trilinear_sparse": trilinear_sparse_nb,
        "composite_rays": composite_rays_nb,
    }

_active = IMPLEMENTATIONS["numba" if USE_NUMBA else "numpy"]
bilinear_gather = _active["bilinear_gather"]
occupancy_lookup = _active["occupancy_lookup"]
trilinear_sparse = _active["trilinear_sparse"]
composite_rays = _active["composite_rays"]
