"""Progressive rendering with occupancy and density culling.

``render_progressive`` marches rays only for pixels near the projected
feature volume, evaluates density only at samples inside occupied voxels
and colour only where density is positive.  ``render_dense_masked`` is the
reference: every pixel, every sample and every head evaluation, with the
occupancy mask applied to density afterwards.  Both share the sampling,
feature gathering and compositing code so they agree to rounding.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EmptyVolume, InvalidInterval
from .geometry import Camera, generate_rays, project_points, ray_aabb_intersect_many, world_to_camera
from .integration import gather_view_features, view_stats
from .nets import appearance_forward, density_forward
from .volume import occupancy_rows, occupied_aabb, sample_features

COUNTER_FIELDS = ("rays", "pd_points", "pc_points", "td_ms", "tc_ms", "total_ms")


@dataclass
class RenderConfig:
    n_samples: int = 64
    background: tuple = None  # None -> the scene's background
    dtype: type = np.float32
    workers: int = 1
    chunk_rays: int = 512
    density_threshold: float = 0.0
    occupancy_mask: bool = True  # dense mode only; False renders the unmasked field


@dataclass
class RenderCounters:
    rays: int = 0
    pd_points: int = 0
    pc_points: int = 0
    td_ms: float = 0.0
    tc_ms: float = 0.0
    total_ms: float = 0.0

    def merge(self, other):
        self.rays += other.rays
        self.pd_points += other.pd_points
        self.pc_points += other.pc_points
        self.td_ms += other.td_ms
        self.tc_ms += other.tc_ms
        return self

    def counts(self):
        return (self.rays, self.pd_points, self.pc_points)

    def csv_header(self):
        return ",".join(COUNTER_FIELDS)

    def csv_row(self):
        return (
            f"{self.rays},{self.pd_points},{self.pc_points},"
            f"{self.td_ms:.3f},{self.tc_ms:.3f},{self.total_ms:.3f}"
        )


@dataclass
class RenderedImage:
    rgb: np.ndarray  # (H, W, 3)
    rendered: np.ndarray  # (H, W) bool

    @property
    def width(self):
        return self.rgb.shape[1]

    @property
    def height(self):
        return self.rgb.shape[0]


@dataclass
class RaySamples:
    """Samples along one ray plus the culling state of each sample."""

    ray: object
    t: np.ndarray
    positions: np.ndarray
    delta: np.ndarray
    stage1: np.ndarray = None
    sigma: np.ndarray = None
    stage2: np.ndarray = None
    color: np.ndarray = None
    extras: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# single-ray building blocks
# --------------------------------------------------------------------------


def sample_depths(t_near, t_far, n, rng=None):
    """Bin midpoints (or jittered bin positions when ``rng`` is given) and the constant spacing.

    Vectorised over rays: ``t_near``/``t_far`` of shape (R,) give t (R, n) and delta (R,).
    """
    tn = np.asarray(t_near, dtype=np.float64)
    tf = np.asarray(t_far, dtype=np.float64)
    step = (tf - tn) / n
    offs = np.arange(n) + 0.5
    if rng is not None:
        offs = np.arange(n) + rng.random(tn.shape + (n,))
    return tn[..., None] + offs * step[..., None], step


def sample_points_on_ray(ray, t_near, t_far, n, rng=None):
    if not t_near < t_far:
        raise InvalidInterval(f"need t_near < t_far, got [{t_near}, {t_far}]")
    if n < 1:
        raise InvalidInterval("need at least one sample")
    t, step = sample_depths(t_near, t_far, n, rng)
    return RaySamples(ray, t, ray.at(t), np.full(n, step))


def cull_stage1(samples, volume):
    samples.stage1 = occupancy_rows(volume, samples.positions) >= 0
    return samples


def cull_stage2(samples, threshold=0.0):
    if samples.sigma is None or samples.stage1 is None:
        raise ValueError("density must be evaluated on stage-1 survivors first")
    samples.stage2 = samples.stage1 & (samples.sigma > threshold)
    return samples


def composite(samples, background):
    """Colour of one ray.  Samples outside stage 1 count as empty, outside stage 2 as black."""
    sigma = np.asarray(samples.sigma, dtype=np.float64)
    color = np.zeros((len(sigma), 3)) if samples.color is None else np.asarray(samples.color, dtype=np.float64)
    if samples.stage1 is not None:
        sigma = np.where(samples.stage1, sigma, 0.0)
    if samples.stage2 is not None:
        color = np.where(samples.stage2[:, None], color, 0.0)
    rgb, _, _ = kernels.composite_rays(
        sigma[None], np.asarray(samples.delta[:1], dtype=np.float64), color[None],
        np.asarray(background, dtype=np.float64),
    )
    return rgb[0]


def select_valid_pixels(volume, target):
    """Pixels whose centres surround the projection of some occupied voxel centre.

    Returns an (P, 2) array of (u, v), sorted row-major (by v then u).
    """
    if len(volume) == 0:
        raise EmptyVolume("cannot select pixels from an empty volume")
    centers = volume.grid.centers(volume.indices)
    uv, front = project_points(world_to_camera(centers, target), target)
    base = np.floor(uv[front] - 0.5).astype(np.int64)
    cand = np.concatenate([base + off for off in ((0, 0), (1, 0), (0, 1), (1, 1))])
    inside = (
        (cand[:, 0] >= 0) & (cand[:, 0] < target.width)
        & (cand[:, 1] >= 0) & (cand[:, 1] < target.height)
    )
    cand = cand[inside]
    if not len(cand):
        return np.zeros((0, 2), dtype=np.int64)
    flat = np.unique(cand[:, 1] * target.width + cand[:, 0])
    return np.column_stack([flat % target.width, flat // target.width])


# --------------------------------------------------------------------------
# batched marching
# --------------------------------------------------------------------------


def _point_features(scene, pts, dtype):
    geom = sample_features(scene.volume, pts, dtype)
    vf, _ = gather_view_features(pts, scene.cameras, scene.maps, dtype)
    mu, var = view_stats(vf)
    return geom, vf, mu, var


def _march_chunk(scene, dens, app, origins, dirs, tn, tf, cfg, bg, progressive):
    """Render one chunk of rays.  Returns (rgb (R, 3), counters)."""
    dt = cfg.dtype
    n = cfg.n_samples
    cnt = RenderCounters(rays=len(origins))
    t0 = time.perf_counter()
    t, step = sample_depths(tn, tf, n)
    pts = (origins[:, None, :] + t[..., None] * dirs[:, None, :]).reshape(-1, 3)
    occupied = occupancy_rows(scene.volume, pts) >= 0
    sigma = np.zeros(len(pts), dtype=dt)
    if progressive:
        eval_idx = np.flatnonzero(occupied)
    else:
        eval_idx = np.arange(len(pts))
    geom, vf, mu, var = _point_features(scene, pts[eval_idx], dt)
    sig = density_forward(dens, geom, mu, var).astype(dt, copy=False)
    if not progressive and cfg.occupancy_mask:
        sig = np.where(occupied, sig, dt(0))
    sigma[eval_idx] = sig
    cnt.pd_points = len(eval_idx)
    t1 = time.perf_counter()

    keep = sig > cfg.density_threshold
    color = np.zeros((len(pts), 3), dtype=dt)
    if keep.any():
        color[eval_idx[keep]] = appearance_forward(app, vf[keep], mu[keep], var[keep])
    cnt.pc_points = int(keep.sum())
    rgb, _, _ = kernels.composite_rays(
        sigma.reshape(-1, n), step.astype(dt), color.reshape(-1, n, 3), bg
    )
    t2 = time.perf_counter()
    cnt.td_ms = (t1 - t0) * 1e3
    cnt.tc_ms = (t2 - t1) * 1e3
    return rgb, cnt


def _resolve_target(scene, target):
    if isinstance(target, Camera):
        return target
    return scene.targets[int(target)]


def _render(scene, bundle, target, config, progressive):
    cfg = config or RenderConfig()
    cam = _resolve_target(scene, target)
    start = time.perf_counter()
    dt = cfg.dtype
    bg = np.asarray(scene.background if cfg.background is None else cfg.background, dtype=dt)
    box = occupied_aabb(scene.volume)
    if progressive:
        pixels = select_valid_pixels(scene.volume, cam)
    else:
        vv, uu = np.mgrid[0:cam.height, 0:cam.width]
        pixels = np.column_stack([uu.ravel(), vv.ravel()])
    origins, dirs = generate_rays(cam, pixels)
    tn, tf, hit = ray_aabb_intersect_many(origins, dirs, box.lo, box.hi)
    hit &= tf > tn
    marched = np.flatnonzero(hit)

    dens = bundle.density.astype(dt)
    app = bundle.appearance.astype(dt)
    chunks = [marched[s:s + cfg.chunk_rays] for s in range(0, len(marched), cfg.chunk_rays)]

    def work(sel):
        return _march_chunk(
            scene, dens, app, np.ascontiguousarray(origins[sel]), dirs[sel], tn[sel], tf[sel],
            cfg, bg, progressive,
        )

    if cfg.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    image = np.empty((cam.height, cam.width, 3), dtype=dt)
    image[...] = bg
    rendered = np.zeros((cam.height, cam.width), dtype=bool)
    rendered[pixels[:, 1], pixels[:, 0]] = True
    counters = RenderCounters()
    for sel, (rgb, cnt) in zip(chunks, results):
        px = pixels[sel]
        image[px[:, 1], px[:, 0]] = rgb
        counters.merge(cnt)
    if not progressive:
        rendered[...] = False
        rendered[pixels[marched, 1], pixels[marched, 0]] = True
    counters.total_ms = (time.perf_counter() - start) * 1e3
    return RenderedImage(np.clip(image, 0.0, 1.0), rendered), counters


def render_progressive(scene, bundle, target, config=None):
    """Progressive render of ``target`` (a Camera or an index into ``scene.targets``).

    Returns ``(RenderedImage, RenderCounters)``; unselected pixels hold the
    background and have ``rendered`` False.
    """
    return _render(scene, bundle, target, config, progressive=True)


def render_dense_masked(scene, bundle, target, config=None, with_counters=False):
    """Reference render: every pixel and sample evaluated, density masked by occupancy."""
    image, counters = _render(scene, bundle, target, config, progressive=False)
    return (image, counters) if with_counters else image
