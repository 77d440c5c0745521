"""Pinhole cameras, rigid transforms, rays, bounds and feature-map sampling.

Conventions: cameras map world points with ``x_cam = R @ x_world + t``
(x right, y down, z forward).  Integer pixel ``(u, v)`` has its centre at
the continuous coordinate ``(u + 0.5, v + 0.5)``.  Feature-map nodes sit
at integer coordinates, so a continuous image coordinate ``q`` samples the
map at ``q - 0.5``.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BadCamera, DimensionMismatch, NonPositiveDepth, PixelOutOfRange

ORTHO_TOL = 1e-6


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Camera:
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = _frozen(self.K)
        R = _frozen(self.R)
        t = _frozen(self.t).reshape(-1)
        if K.shape != (3, 3) or R.shape != (3, 3) or t.shape != (3,):
            raise BadCamera("K and R must be 3x3 and t a 3-vector")
        if not np.all(np.isfinite(K)) or not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise BadCamera("camera parameters must be finite")
        if K[2, 2] != 1.0 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise BadCamera("intrinsics need positive focal lengths and K[2][2] = 1")
        if np.abs(K[2, :2]).max() != 0.0 or abs(np.linalg.det(K)) == 0.0:
            raise BadCamera("intrinsics matrix is singular or has a malformed last row")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or np.linalg.det(R) < 0:
            raise BadCamera("rotation is not a proper orthonormal matrix")
        if int(self.width) < 1 or int(self.height) < 1:
            raise BadCamera("image size must be at least 1x1")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def center(self):
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    @classmethod
    def look_at(cls, eye, target, up, focal, width, height, cx=None, cy=None):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        K = np.array([
            [focal, 0.0, width / 2.0 if cx is None else cx],
            [0.0, focal, height / 2.0 if cy is None else cy],
            [0.0, 0.0, 1.0],
        ])
        return cls(K, R, -R @ eye, width, height)

    def to_dict(self):
        return {
            "intrinsics": self.K.tolist(),
            "rotation": self.R.tolist(),
            "translation": self.t.tolist(),
            "width": self.width,
            "height": self.height,
        }


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    pixel: tuple = (0, 0)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            d = d / n
        object.__setattr__(self, "origin", _frozen(self.origin))
        object.__setattr__(self, "direction", _frozen(d))

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


@dataclass(frozen=True, eq=False)
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _frozen(self.lo), _frozen(self.hi)
        if np.any(lo > hi):
            raise ValueError("Aabb min corner exceeds max corner")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-view feature grid stored as float32 ``values[v, u, channel]``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise DimensionMismatch("feature map values must be (height, width, channels)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]


def world_to_camera(point, camera):
    """``R @ point + t``; accepts a single point or an (..., 3) array."""
    p = np.asarray(point, dtype=np.float64)
    return p @ camera.R.T + camera.t


def project_points(points_cam, camera):
    """Batch projection without raising.

    Returns ``(uv, in_front)``; uv rows for points with z <= 0 are NaN.
    """
    p = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    z = p[:, 2]
    front = z > 0
    uv = np.full((len(p), 2), np.nan)
    zf = z[front]
    K = camera.K
    uv[front, 0] = K[0, 0] * p[front, 0] / zf + K[0, 1] * p[front, 1] / zf + K[0, 2]
    uv[front, 1] = K[1, 1] * p[front, 1] / zf + K[1, 2]
    return uv, front


def project(point_cam, camera):
    """Continuous pixel coordinate of a camera-frame point; may fall outside the image."""
    p = np.asarray(point_cam, dtype=np.float64)
    uv, front = project_points(p, camera)
    if not front.all():
        raise NonPositiveDepth(f"point depth must be positive, got {p.reshape(-1, 3)[~front, 2]}")
    return uv.reshape(p.shape[:-1] + (2,))


def bilinear_sample(fmap, uv):
    """Sample a feature map at node coordinates ``uv``.

    Returns ``(vector, clamped)``; ``clamped`` is True when the coordinate was
    pulled back into ``[0, W-1] x [0, H-1]``.
    """
    values = fmap.values if isinstance(fmap, FeatureMap) else np.asarray(fmap)
    if values.ndim == 2:
        values = values[:, :, None]
    q = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    out, oob = kernels.bilinear_gather(values, q)
    if np.ndim(uv) == 1:
        return out[0], bool(oob[0])
    return out, oob


def ray_aabb_intersect_many(origins, directions, lo, hi):
    """Slab test for many rays.  Returns (t_near, t_far, hit)."""
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    parallel = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    inside_slab = (o >= lo) & (o <= hi)
    tmin = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), tmax)
    t_near = np.maximum(tmin.max(axis=1), 0.0)
    t_far = tmax.min(axis=1)
    hit = (t_near <= t_far) & (t_far >= 0.0)
    return t_near, t_far, hit


def ray_aabb_intersect(ray, box):
    """Entry/exit distances of ``ray`` through ``box`` clipped to t >= 0, or None."""
    tn, tf, hit = ray_aabb_intersect_many(ray.origin, ray.direction, box.lo, box.hi)
    if not hit[0]:
        return None
    return float(tn[0]), float(tf[0])


def pixel_directions(camera, pixels):
    """Unit world-space directions through the centres of integer ``pixels`` (P, 2)."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    hom = np.column_stack([px + 0.5, np.ones(len(px))])
    cam_dirs = np.linalg.solve(camera.K, hom.T).T
    world = cam_dirs @ camera.R
    return world / np.linalg.norm(world, axis=1, keepdims=True)


def generate_rays(camera, pixels):
    """Batch version of :func:`generate_ray` without range checks."""
    dirs = pixel_directions(camera, pixels)
    origins = np.broadcast_to(camera.center, dirs.shape)
    return origins, dirs


def generate_ray(camera, pixel):
    u, v = int(pixel[0]), int(pixel[1])
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise PixelOutOfRange(f"pixel {(u, v)} outside {camera.width}x{camera.height} image")
    d = pixel_directions(camera, [(u, v)])[0]
    return Ray(camera.center, d, (u, v))
