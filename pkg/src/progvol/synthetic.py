"""Capsule-figure scenes with analytic density and colour.

Density is ``sigma0`` inside the union of capsules and zero outside; the
colour at a point is the base colour of the nearest capsule.  Source and
target views are produced by dense ray marching of that field, and the
prior vertices are sampled uniformly on the capsule surfaces.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import IoError
from .geometry import Camera, generate_rays, ray_aabb_intersect_many
from .scene import write_mask, write_ppm, write_vertices

SIGMA0 = 30.0
N_GT = 256


@dataclass
class Capsule:
    a: tuple
    b: tuple
    radius: float
    color: tuple


def default_figure():
    """A small stick figure, about 0.95 m tall, centred on the origin (z up)."""
    skin = (0.9, 0.75, 0.6)
    shirt = (0.8, 0.3, 0.2)
    sleeve = (0.2, 0.5, 0.8)
    trousers = (0.25, 0.25, 0.35)
    return [
        Capsule((0.0, 0.0, -0.05), (0.0, 0.0, 0.2), 0.09, shirt),
        Capsule((0.0, 0.0, 0.34), (0.0, 0.0, 0.36), 0.07, skin),
        Capsule((0.12, 0.0, 0.2), (0.3, 0.0, 0.0), 0.035, sleeve),
        Capsule((-0.12, 0.0, 0.2), (-0.3, 0.0, 0.0), 0.035, sleeve),
        Capsule((0.06, 0.0, -0.1), (0.08, 0.0, -0.45), 0.045, trousers),
        Capsule((-0.06, 0.0, -0.1), (-0.08, 0.0, -0.45), 0.045, trousers),
    ]


@dataclass
class SyntheticSceneSpec:
    capsules: list = field(default_factory=default_figure)
    n_vertices: int = 642
    width: int = 64
    height: int = 64
    views: int = 3
    targets: int = 8
    seed: int = 42
    camera_distance: float = 2.2
    camera_height: float = 0.0
    focal: float = 120.0
    sigma0: float = SIGMA0
    n_gt: int = N_GT
    feature_dim: int = 32
    background: tuple = (0.0, 0.0, 0.0)
    target_offset_deg: float = 20.0

    def __post_init__(self):
        self.capsules = [c if isinstance(c, Capsule) else Capsule(**c) for c in self.capsules]
        if not self.capsules or any(c.radius <= 0 for c in self.capsules):
            raise ValueError("need at least one capsule, all radii positive")
        if self.n_vertices < 4:
            raise ValueError("need at least 4 prior vertices")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        return cls(**doc)

    def to_dict(self):
        return asdict(self)


def _segments(spec):
    a = np.array([c.a for c in spec.capsules], dtype=np.float64)
    b = np.array([c.b for c in spec.capsules], dtype=np.float64)
    r = np.array([c.radius for c in spec.capsules], dtype=np.float64)
    col = np.array([c.color for c in spec.capsules], dtype=np.float64)
    return a, b, r, col


def capsule_sdf(points, a, b, r):
    """Signed distance of (P, 3) points to each capsule, shape (P, C)."""
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-30)
    pa = points[:, None, :] - a[None]
    h = np.clip((pa * ab[None]).sum(axis=2) / denom, 0.0, 1.0)
    diff = pa - h[..., None] * ab[None]
    return np.sqrt((diff * diff).sum(axis=2)) - r


def analytic_field(points, spec):
    """(sigma (P,), colour (P, 3)) of the capsule union at ``points``."""
    a, b, r, col = _segments(spec)
    sdf = capsule_sdf(np.asarray(points, dtype=np.float64).reshape(-1, 3), a, b, r)
    nearest = sdf.argmin(axis=1)
    inside = sdf[np.arange(len(sdf)), nearest] <= 0.0
    return np.where(inside, spec.sigma0, 0.0), col[nearest]


def scene_bounds(spec, pad=0.05):
    a, b, r, _ = _segments(spec)
    lo = np.minimum(a, b) - r[:, None]
    hi = np.maximum(a, b) + r[:, None]
    return lo.min(axis=0) - pad, hi.max(axis=0) + pad


def render_analytic(camera, spec, chunk=2048):
    """Dense marching of the analytic field: returns (rgb (H, W, 3), accumulated weight (H, W))."""
    lo, hi = scene_bounds(spec)
    vv, uu = np.mgrid[0:camera.height, 0:camera.width]
    pixels = np.column_stack([uu.ravel(), vv.ravel()])
    origins, dirs = generate_rays(camera, pixels)
    tn, tf, hit = ray_aabb_intersect_many(origins, dirs, lo, hi)
    hit &= tf > tn
    bg = np.asarray(spec.background, dtype=np.float64)
    rgb = np.tile(bg, (len(pixels), 1))
    acc = np.zeros(len(pixels))
    n = spec.n_gt
    idx = np.flatnonzero(hit)
    for s in range(0, len(idx), chunk):
        sel = idx[s:s + chunk]
        step = (tf[sel] - tn[sel]) / n
        t = tn[sel, None] + (np.arange(n) + 0.5) * step[:, None]
        pts = origins[sel, None, :] + t[..., None] * dirs[sel, None, :]
        sigma, color = analytic_field(pts.reshape(-1, 3), spec)
        out, w, _ = kernels.composite_rays_np(
            sigma.reshape(len(sel), n), step, color.reshape(len(sel), n, 3), bg
        )
        rgb[sel] = out
        acc[sel] = w.sum(axis=1)
    return rgb.reshape(camera.height, camera.width, 3), acc.reshape(camera.height, camera.width)


def sample_surface(spec, count, rng):
    """Points uniformly distributed over the union of capsule surfaces (overlaps included)."""
    a, b, r, _ = _segments(spec)
    length = np.linalg.norm(b - a, axis=1)
    side = 2 * np.pi * r * length
    cap = 4 * np.pi * r * r
    which = rng.choice(len(r), size=count, p=(side + cap) / (side + cap).sum())
    out = np.empty((count, 3))
    for i in range(count):
        k = which[i]
        axis = (b[k] - a[k]) / length[k] if length[k] > 0 else np.array([0.0, 0.0, 1.0])
        helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(axis, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        if rng.random() < side[k] / (side[k] + cap[k]):
            theta = rng.uniform(0, 2 * np.pi)
            out[i] = a[k] + rng.random() * (b[k] - a[k]) + r[k] * (np.cos(theta) * e1 + np.sin(theta) * e2)
        else:
            s = rng.standard_normal(3)
            s /= np.linalg.norm(s)
            end = b[k] if s @ axis >= 0 else a[k]
            out[i] = end + r[k] * s
    return out


def ring_cameras(spec, count, offset_deg=0.0):
    """Cameras on a horizontal circle, evenly spaced in azimuth, looking at the origin."""
    cams = []
    for k in range(count):
        az = np.deg2rad(offset_deg + 360.0 * k / count)
        eye = (spec.camera_distance * np.cos(az), spec.camera_distance * np.sin(az), spec.camera_height)
        cams.append(Camera.look_at(eye, (0, 0, 0), (0, 0, 1), spec.focal, spec.width, spec.height))
    return cams


def _view_entry(camera, **paths):
    entry = camera.to_dict()
    entry.update({k: v for k, v in paths.items() if v is not None})
    return entry


def gen_synthetic_scene(spec, out_dir):
    """Write a complete scene (manifest, images, masks, prior vertices) to ``out_dir``.

    Returns the manifest path.  Output is a pure function of ``spec``.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
        rng = np.random.default_rng(spec.seed)
        verts = sample_surface(spec, spec.n_vertices, rng)
        write_vertices(os.path.join(out_dir, "prior.gpvx"), verts)

        views = []
        for m, cam in enumerate(ring_cameras(spec, spec.views)):
            rgb, acc = render_analytic(cam, spec)
            write_ppm(os.path.join(out_dir, f"src_{m}.ppm"), rgb)
            write_mask(os.path.join(out_dir, f"src_{m}_mask.ppm"), acc > 0.5)
            views.append(_view_entry(cam, image=f"src_{m}.ppm", mask=f"src_{m}_mask.ppm"))

        targets = []
        for k, cam in enumerate(ring_cameras(spec, spec.targets, spec.target_offset_deg)):
            rgb, acc = render_analytic(cam, spec)
            write_ppm(os.path.join(out_dir, f"target_{k}.ppm"), rgb)
            write_mask(os.path.join(out_dir, f"target_{k}_mask.ppm"), acc > 0.5)
            targets.append(_view_entry(cam, image=f"target_{k}.ppm", mask=f"target_{k}_mask.ppm"))

        manifest = {
            "feature_dim": spec.feature_dim,
            "feature_seed": spec.seed,
            "views": views,
            "prior_vertices": "prior.gpvx",
            "targets": targets,
            "grid": {"voxel_size": 0.025, "margin": 5},
            "background": list(spec.background),
        }
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        with open(os.path.join(out_dir, "spec.json"), "w") as fh:
            json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise IoError(f"writing scene to {out_dir}: {exc}") from exc
    return path


def make_scene(spec, bundle=None):
    """Build a prepared :class:`~progvol.scene.Scene` in memory (no files).

    Source images go through the same PPM quantisation as
    :func:`gen_synthetic_scene`, so both routes yield identical scenes.
    """
    from .nets import make_bundle
    from .scene import prepare_scene
    from .volume import fit_grid

    quant = lambda img: np.floor(np.clip(img, 0, 1) * 255.0 + 0.5) / 255.0  # noqa: E731
    rng = np.random.default_rng(spec.seed)
    verts = sample_surface(spec, spec.n_vertices, rng).astype(np.float32).astype(np.float64)
    cams = ring_cameras(spec, spec.views)
    images, masks = [], []
    for cam in cams:
        rgb, acc = render_analytic(cam, spec)
        images.append(quant(rgb))
        masks.append(acc > 0.5)
    targets = ring_cameras(spec, spec.targets, spec.target_offset_deg)
    t_imgs, t_masks = [], []
    for cam in targets:
        rgb, acc = render_analytic(cam, spec)
        t_imgs.append(quant(rgb))
        t_masks.append(acc > 0.5)
    if bundle is None:
        bundle = make_bundle(spec.feature_dim, spec.views, spec.n_vertices, seed=spec.seed)
    return prepare_scene(
        cams, images, verts, bundle, fit_grid(verts), spec.background, spec.feature_dim,
        spec.seed, targets=targets, target_images=t_imgs, target_masks=t_masks,
        source_masks=masks,
    )
