"""Sparse geometry feature volume.

Vertex features are binned into voxels, grown by a few rounds of
renormalised 3x3x3 dilation, and then queried either for binary
occupancy or for a trilinearly interpolated feature.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EmptyVolume, OutOfGrid
from .geometry import Aabb

DEFAULT_VOXEL_SIZE = 0.025
DEFAULT_MARGIN = 5
DEFAULT_ROUNDS = 2


def box_kernel():
    return np.ones((3, 3, 3), dtype=np.float64)


@dataclass(frozen=True, eq=False)
class GridSpec:
    origin: np.ndarray
    voxel_size: float
    resolution: tuple

    def __post_init__(self):
        o = np.array(self.origin, dtype=np.float64).reshape(3)
        o.setflags(write=False)
        res = tuple(int(r) for r in self.resolution)
        if not float(self.voxel_size) > 0:
            raise ValueError("voxel size must be positive")
        if len(res) != 3 or min(res) < 1:
            raise ValueError("resolution must be three positive integers")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "resolution", res)

    @property
    def upper(self):
        return self.origin + np.asarray(self.resolution) * self.voxel_size

    def centers(self, indices):
        return self.origin + (np.asarray(indices, dtype=np.float64) + 0.5) * self.voxel_size


def fit_grid(positions, voxel_size=DEFAULT_VOXEL_SIZE, margin=DEFAULT_MARGIN):
    """Grid covering ``positions`` with ``margin`` empty voxels on every side."""
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    lo = p.min(axis=0)
    hi = p.max(axis=0)
    origin = np.floor(lo / voxel_size) * voxel_size - margin * voxel_size
    res = np.floor((hi - origin) / voxel_size).astype(int) + 1 + margin
    return GridSpec(origin, voxel_size, tuple(res))


@dataclass(frozen=True, eq=False)
class SparseFeatureVolume:
    """Occupied voxel indices (K, 3) with one feature row each (K, d).

    Rows are kept in lexicographic index order; ``lut`` maps a voxel index
    to its row (or -1) for the lookup kernels.
    """

    grid: GridSpec
    indices: np.ndarray
    features: np.ndarray
    lut: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or len(feats) != len(idx):
            raise ValueError("one feature row is required per occupied voxel")
        res = np.asarray(self.grid.resolution)
        if len(idx) and (idx.min() < 0 or np.any(idx >= res)):
            raise OutOfGrid(np.flatnonzero(np.any((idx < 0) | (idx >= res), axis=1)))
        order = np.lexsort(idx.T[::-1])
        idx = np.ascontiguousarray(idx[order])
        feats = np.ascontiguousarray(feats[order])
        lut = np.full(self.grid.resolution, -1, dtype=np.int32)
        lut[idx[:, 0], idx[:, 1], idx[:, 2]] = np.arange(len(idx), dtype=np.int32)
        for a in (idx, feats, lut):
            a.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "lut", lut)

    def __len__(self):
        return len(self.indices)

    @property
    def dim(self):
        return self.features.shape[1]

    def dense(self):
        """(occupancy (X, Y, Z), features (X, Y, Z, d)) as dense arrays."""
        occ = self.lut >= 0
        f = np.zeros(self.grid.resolution + (self.dim,))
        f[occ] = self.features[self.lut[occ]]
        return occ, f


def voxelize(positions, features, grid):
    """Bin vertices into voxels, averaging the features of vertices that share one."""
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(features, dtype=np.float64)
    idx = np.floor((p - grid.origin) / grid.voxel_size).astype(np.int64)
    bad = np.any((idx < 0) | (idx >= np.asarray(grid.resolution)), axis=1)
    if bad.any():
        raise OutOfGrid(np.flatnonzero(bad))
    uniq, inverse = np.unique(idx, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(uniq), f.shape[1]))
    np.add.at(sums, inverse, f)
    counts = np.bincount(inverse, minlength=len(uniq))
    return SparseFeatureVolume(grid, uniq, sums / counts[:, None])


def _neighbour_sum(padded, kernel, shape):
    x, y, z = shape
    out = np.zeros((x, y, z) + padded.shape[3:])
    for a in range(3):
        for b in range(3):
            for c in range(3):
                k = kernel[a, b, c]
                if k != 0.0:
                    out += k * padded[a:a + x, b:b + y, c:c + z]
    return out


def densify(volume, rounds=DEFAULT_ROUNDS, kernel=None):
    """Grow the occupied set by ``rounds`` of renormalised 3x3x3 dilation.

    ``kernel`` is one (3, 3, 3) array of nonnegative weights used every
    round, or a sequence with one kernel per round; ``kernel[a, b, c]``
    weights the neighbour at offset ``(a-1, b-1, c-1)``.  Each output voxel
    takes the kernel-weighted mean of its occupied neighbours.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if rounds == 0:
        return volume
    if kernel is None:
        kernel = box_kernel()
    kernels_ = np.asarray(kernel, dtype=np.float64)
    if kernels_.shape == (3, 3, 3):
        kernels_ = np.broadcast_to(kernels_, (rounds, 3, 3, 3))
    if kernels_.shape != (rounds, 3, 3, 3):
        raise ValueError(f"expected {rounds} kernels of shape (3, 3, 3), got {kernels_.shape}")
    if np.any(kernels_ < 0) or np.any(kernels_.reshape(rounds, -1).max(axis=1) <= 0):
        raise ValueError("densify kernels must be nonnegative with a positive weight")

    shape = volume.grid.resolution
    occ, feats = volume.dense()
    occ = occ.astype(np.float64)
    pad = ((1, 1), (1, 1), (1, 1))
    for k in kernels_:
        mass = _neighbour_sum(np.pad(occ, pad), k, shape)
        num = _neighbour_sum(np.pad(feats * occ[..., None], pad + ((0, 0),)), k, shape)
        new_occ = mass > 0
        feats = np.zeros_like(num)
        feats[new_occ] = num[new_occ] / mass[new_occ, None]
        occ = new_occ.astype(np.float64)
    occ_b = occ > 0
    idx = np.argwhere(occ_b)
    return SparseFeatureVolume(volume.grid, idx, feats[occ_b])


def occupancy_rows(volume, points):
    """Feature row of the voxel containing each point, -1 when unoccupied or outside."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return kernels.occupancy_lookup(volume.lut, volume.grid.origin, volume.grid.voxel_size, pts)


def query_occupancy(volume, point):
    rows = occupancy_rows(volume, point)
    if np.ndim(point) == 1:
        return bool(rows[0] >= 0)
    return rows >= 0


def sample_features(volume, points, dtype=np.float64):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return kernels.trilinear_sparse(
        volume.lut, volume.features, volume.grid.origin, volume.grid.voxel_size, pts, dtype
    )


def sample_feature(volume, point):
    out = sample_features(volume, point)
    return out[0] if np.ndim(point) == 1 else out


def occupied_aabb(volume):
    """World box around the occupied voxels, padded by one voxel per side."""
    if len(volume) == 0:
        raise EmptyVolume("volume has no occupied voxels")
    g = volume.grid
    lo = g.origin + (volume.indices.min(axis=0) - 1) * g.voxel_size
    hi = g.origin + (volume.indices.max(axis=0) + 2) * g.voxel_size
    return Aabb(lo, hi)


def positive_density_points(points, sigmas):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    sig = np.asarray(sigmas, dtype=np.float64).reshape(-1)
    return pts[sig > 0]


def export_occupied_points(volume, density_samples=None):
    """Points for a cloud export.

    With ``density_samples`` (a list of ``(point, sigma)`` pairs) keep the
    points whose sigma is strictly positive; otherwise return the occupied
    voxel centres.
    """
    if density_samples is None:
        return volume.grid.centers(volume.indices)
    pairs = list(density_samples)
    if not pairs:
        return np.zeros((0, 3))
    return positive_density_points([p for p, _ in pairs], [s for _, s in pairs])


def write_point_list(path, points):
    """ASCII cloud, one ``x y z`` line per point."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, "w") as fh:
        for x, y, z in pts:
            fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
