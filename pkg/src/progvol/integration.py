"""Multi-view feature integration on prior vertices.

Each prior vertex is projected into every source view, the pixel-aligned
features are scored against a per-vertex query embedding with a scaled
dot-product, and the views are blended with the resulting weights.  The
same pixel-aligned gather also feeds the per-point mean/variance
statistics used by both network heads.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch
from .geometry import project_points, world_to_camera

SOFTMAX = "softmax"
RAW = "raw"


@dataclass(frozen=True, eq=False)
class GeometryPrior:
    positions: np.ndarray  # (L, 3)
    queries: np.ndarray  # (L, d)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        q = np.asarray(self.queries, dtype=np.float64)
        if q.ndim != 2 or len(q) != len(pos):
            raise DimensionMismatch(
                f"{len(pos)} vertex positions but query table has shape {q.shape}"
            )
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "queries", q)

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class AttentionParams:
    W1: np.ndarray  # (d, d)
    b1: np.ndarray  # (d,)
    W2: np.ndarray  # (M, d, d), one key projection per view
    b2: np.ndarray  # (M, d)

    def __post_init__(self):
        W1, b1 = np.asarray(self.W1), np.asarray(self.b1)
        W2, b2 = np.asarray(self.W2), np.asarray(self.b2)
        d = W1.shape[0]
        if W1.shape != (d, d) or b1.shape != (d,):
            raise DimensionMismatch("query projection must be (d, d) with a d bias")
        if W2.ndim != 3 or W2.shape[1:] != (d, d) or b2.shape != (W2.shape[0], d):
            raise DimensionMismatch("key projections must be (M, d, d) with (M, d) biases")
        for name, val in (("W1", W1), ("b1", b1), ("W2", W2), ("b2", b2)):
            object.__setattr__(self, name, val)

    @property
    def dim(self):
        return self.W1.shape[0]

    @property
    def views(self):
        return self.W2.shape[0]

    @property
    def scale(self):
        return np.sqrt(self.dim)

    def permuted(self, order):
        """Same parameters with the per-view key projections reordered."""
        order = np.asarray(order)
        return AttentionParams(self.W1, self.b1, self.W2[order], self.b2[order])


@dataclass(frozen=True, eq=False)
class ViewFeatureSet:
    features: np.ndarray  # (M, d)
    valid: np.ndarray  # (M,)

    def __post_init__(self):
        f = np.asarray(self.features)
        v = np.asarray(self.valid, dtype=bool)
        if f.ndim != 2 or v.shape != (f.shape[0],) or f.shape[0] < 1:
            raise DimensionMismatch("need M >= 1 feature rows and one validity flag per row")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "valid", v)


@dataclass(frozen=True, eq=False)
class ViewStats:
    mean: np.ndarray
    var: np.ndarray


def _check_maps(cameras, maps):
    if len(cameras) != len(maps) or len(maps) == 0:
        raise DimensionMismatch(f"{len(cameras)} cameras but {len(maps)} feature maps")
    dims = {m.channels for m in maps}
    if len(dims) != 1:
        raise DimensionMismatch(f"feature maps disagree on channel count: {sorted(dims)}")
    return dims.pop()


def gather_view_features(points, cameras, maps, dtype=np.float64):
    """Pixel-aligned features of ``points`` (P, 3) in every view.

    Returns ``(features (P, M, d), valid (P, M))``.  Points behind a camera
    or projecting outside its image get a zero feature and ``valid=False``.
    """
    d = _check_maps(cameras, maps)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.zeros((len(pts), len(maps), d), dtype=dtype)
    valid = np.zeros((len(pts), len(maps)), dtype=bool)
    for m, (cam, fmap) in enumerate(zip(cameras, maps)):
        uv, front = project_points(world_to_camera(pts, cam), cam)
        if not front.any():
            continue
        # image coordinate -> feature-node coordinate (maps may be resampled)
        scale = np.array([fmap.width / cam.width, fmap.height / cam.height])
        nodes = uv[front] * scale - 0.5
        feats, oob = kernels.bilinear_gather(fmap.values, nodes, dtype)
        ok = ~oob
        idx = np.flatnonzero(front)[ok]
        out[idx, m] = feats[ok]
        valid[idx, m] = True
    return out, valid


def extract_pixel_aligned(point, cameras, maps):
    feats, valid = gather_view_features(np.asarray(point)[None], cameras, maps)
    return ViewFeatureSet(feats[0], valid[0])


def attention_logits(queries, features, params):
    """Scaled dot-product scores, shape (P, M), for queries (P, d) and features (P, M, d)."""
    q = np.asarray(queries, dtype=np.float64)
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != params.dim or q.shape[-1] != params.dim or f.shape[1] != params.views:
        raise DimensionMismatch(
            f"features {f.shape} / queries {q.shape} do not match d={params.dim}, M={params.views}"
        )
    qp = q @ params.W1.T + params.b1
    keys = np.einsum("pmj,mij->pmi", f, params.W2) + params.b2
    return np.einsum("pi,pmi->pm", qp, keys) / params.scale


def attention_weights(queries, features, valid, params, mode=SOFTMAX):
    """Per-view weights, shape (P, M).

    ``softmax`` normalises over valid views (all-zero when no view is
    valid); ``raw`` returns the unnormalised scores with invalid views zeroed.
    """
    logits = attention_logits(queries, features, params)
    valid = np.asarray(valid, dtype=bool)
    if mode == RAW:
        return np.where(valid, logits, 0.0)
    if mode != SOFTMAX:
        raise ValueError(f"unknown attention mode {mode!r}")
    masked = np.where(valid, logits, -np.inf)
    peak = masked.max(axis=1, keepdims=True)
    any_valid = np.isfinite(peak[:, 0])
    peak[~any_valid] = 0.0
    e = np.where(valid, np.exp(masked - peak), 0.0)
    total = e.sum(axis=1, keepdims=True)
    total[~any_valid] = 1.0
    return e / total


def attention_scores(query, features, params, mode=SOFTMAX):
    return attention_weights(
        np.asarray(query)[None], features.features[None], features.valid[None], params, mode
    )[0]


def aggregate(weights, features):
    """Weighted blend of the view features: ``sum_m w_m f_m``."""
    f = features.features if isinstance(features, ViewFeatureSet) else np.asarray(features)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[-1] != f.shape[-2]:
        raise DimensionMismatch(f"{w.shape[-1]} weights for {f.shape[-2]} views")
    return np.einsum("...m,...md->...d", w, f)


def view_stats(features):
    """Population mean and variance over the view axis of (..., M, d) features."""
    f = np.asarray(features)
    mu = f.mean(axis=-2)
    var = ((f - mu[..., None, :]) ** 2).mean(axis=-2)
    return mu, var


def mean_variance(features):
    f = features.features if isinstance(features, ViewFeatureSet) else features
    mu, var = view_stats(np.asarray(f, dtype=np.float64))
    return ViewStats(mu, var)


def integrate_prior(prior, cameras, maps, params, mode=SOFTMAX):
    """Aggregated feature for every prior vertex, shape (L, d)."""
    d = _check_maps(cameras, maps)
    if prior.queries.shape[1] != d or params.dim != d or params.views != len(maps):
        raise DimensionMismatch(
            f"prior/attention dims (d={prior.queries.shape[1]}, {params.dim}, M={params.views}) "
            f"inconsistent with {len(maps)} maps of d={d}"
        )
    feats, valid = gather_view_features(prior.positions, cameras, maps)
    w = attention_weights(prior.queries, feats, valid, params, mode)
    return aggregate(w, feats)
