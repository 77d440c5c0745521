"""Quick invariant checks on built-in micro fixtures (``progvol selftest``)."""

import os
import tempfile

import numpy as np

from . import kernels
from .geometry import Camera, FeatureMap, bilinear_sample, generate_ray, project, world_to_camera
from .integration import AttentionParams, attention_weights
from .nets import load_bundle, make_bundle, save_bundle
from .volume import GridSpec, densify, voxelize


def _compositor(rng):
    sigma = rng.exponential(2.0, (200, 32)) * (rng.random((200, 32)) < 0.5)
    delta = rng.uniform(0.01, 0.2, 200)
    color = rng.random((200, 32, 3))
    rgb, w, trans = kernels.composite_rays(sigma, delta, color, np.zeros(3))
    ok = np.all(trans[:, 0] == 1.0) and np.all(np.diff(trans, axis=1) <= 0)
    return ok and np.abs(w.sum(axis=1) + trans[:, -1] - 1.0).max() <= 1e-6


def _closed_form(rng):
    sigma = np.array([[np.log(2.0), 50.0]])
    color = np.array([[[1.0, 0, 0], [0, 1.0, 0]]])
    rgb, _, _ = kernels.composite_rays(sigma, np.ones(1), color, np.zeros(3))
    return np.abs(rgb[0] - [0.5, 0.5, 0.0]).max() <= 1e-6


def _attention(rng):
    d, m = 8, 3
    params = AttentionParams(rng.standard_normal((d, d)), rng.standard_normal(d),
                             rng.standard_normal((m, d, d)), rng.standard_normal((m, d)))
    valid = rng.random((500, m)) < 0.7
    valid[:, 0] = True
    w = attention_weights(rng.standard_normal((500, d)), rng.standard_normal((500, m, d)), valid, params)
    return np.abs(w.sum(axis=1) - 1).max() <= 1e-6 and np.all(w >= 0)


def _camera_roundtrip(rng):
    cam = Camera.look_at((1.5, -2.0, 0.4), (0, 0, 0), (0, 0, 1), 80.0, 40, 30)
    for _ in range(50):
        px = (int(rng.integers(40)), int(rng.integers(30)))
        ray = generate_ray(cam, px)
        uv = project(world_to_camera(ray.at(rng.uniform(0.5, 3.0)), cam), cam)
        if np.abs(uv - (np.array(px) + 0.5)).max() > 1e-4:
            return False
    return True


def _bilinear(rng):
    vv, uu = np.mgrid[0:6, 0:7]
    fmap = FeatureMap((2.0 * uu + 3.0 * vv + 1.0)[..., None])
    uv = rng.uniform(0, [6, 5], (100, 2))
    vals, _ = bilinear_sample(fmap, uv)
    return np.abs(vals[:, 0] - (2 * uv[:, 0] + 3 * uv[:, 1] + 1)).max() <= 1e-5


def _densify(rng):
    grid = GridSpec((0, 0, 0), 1.0, (8, 8, 8))
    pts = rng.uniform(2, 6, (20, 3))
    vol = densify(voxelize(pts, np.full((20, 4), 0.75), grid), 2)
    return np.abs(vol.features - 0.75).max() <= 1e-6


def _weights(rng):
    b = make_bundle(d=6, views=2, n_queries=5, seed=3, density_hidden=(8,), appearance_hidden=(8, 4))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "w.gpnw")
        save_bundle(b, path)
        c = load_bundle(path)
    pairs = [(b.queries, c.queries), (b.attention.W2, c.attention.W2)]
    pairs += list(zip(b.density.params() + b.appearance.params(), c.density.params() + c.appearance.params()))
    return all(np.array_equal(x, y) for x, y in pairs)


CHECKS = [
    ("compositor transmittance", _compositor),
    ("compositor closed form", _closed_form),
    ("attention weights convex", _attention),
    ("camera round trip", _camera_roundtrip),
    ("bilinear affine exactness", _bilinear),
    ("densify constant field", _densify),
    ("weight file round trip", _weights),
]


def run(out=print):
    rng = np.random.default_rng(0)
    failed = 0
    for name, fn in CHECKS:
        ok = bool(fn(rng))
        failed += not ok
        out(f"{'PASS' if ok else 'FAIL'}  {name}")
    return failed == 0
