"""Fitting the density and appearance heads to target views.

Everything upstream of the heads (attention, queries, densify kernels,
feature maps) is frozen, so the pixel-aligned and volume features of a
ray batch are computed once and reused for every evaluation of that
batch.  Gradients flow analytically through the compositor and both
MLPs; ``tests/test_trainer.py`` checks them against central differences.

Samples outside the occupied volume have density pinned to zero and so
contribute no gradient.  Samples with zero predicted density are not
passed through the appearance head: their compositing weight is zero and
relu's derivative at zero is taken as zero, so skipping them is exact.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionMismatch, InsufficientBodyPixels, MissingActivations
from .geometry import generate_rays, ray_aabb_intersect_many
from .nets import (
    MlpWeights,
    appearance_input,
    density_input,
    mlp_backward,
    mlp_forward_cached,
)
from .renderer import _point_features, sample_depths
from .volume import occupancy_rows, occupied_aabb

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class TrainConfig:
    batch: int = 1024
    steps: int = 0
    lr: float = 1e-4
    decay_horizon: int = 180_000
    decay_floor: float = 0.0
    seed: int = 42
    jitter: bool = True
    n_samples: int = 64
    log_every: int = 100
    holdout: tuple = ()

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def lr_at(step, config):
    """Exponential decay by one decade over ``decay_horizon`` steps, floored."""
    lr = config.lr * 0.1 ** (step / config.decay_horizon)
    return max(lr, config.lr * config.decay_floor)


def sample_training_rays(image, mask, batch, seed):
    """Pick ``batch`` distinct pixels, at least half of them on the body mask.

    Returns ``(pixels (B, 2) as (u, v), colours (B, 3))``.
    """
    img = np.asarray(image)
    m = np.asarray(mask, dtype=bool)
    if m.shape != img.shape[:2]:
        raise DimensionMismatch(f"mask {m.shape} does not match image {img.shape[:2]}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    need = math.ceil(batch / 2)
    body = np.flatnonzero(m.ravel())
    if len(body) < need:
        raise InsufficientBodyPixels(f"{len(body)} body pixels, need at least {need}")
    if batch > m.size:
        raise InsufficientBodyPixels(f"batch {batch} exceeds the {m.size} image pixels")
    first = rng.choice(body, size=need, replace=False)
    rest_pool = np.setdiff1d(np.arange(m.size), first, assume_unique=False)
    rest = rng.choice(rest_pool, size=batch - need, replace=False)
    flat = np.concatenate([first, rest])
    w = img.shape[1]
    pixels = np.column_stack([flat % w, flat // w])
    return pixels, img.reshape(-1, 3)[flat].astype(np.float64)


def loss_rgb(predicted, truth):
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionMismatch(f"prediction {p.shape} vs truth {t.shape}")
    return float(np.mean((p - t) ** 2))


# --------------------------------------------------------------------------
# ray batches
# --------------------------------------------------------------------------


@dataclass
class RayBatch:
    """Frozen per-batch inputs: sample layout, culling mask and point features."""

    truth: np.ndarray  # (B, 3)
    background: np.ndarray  # (3,)
    marched: np.ndarray  # indices of rays that cross the volume box
    delta: np.ndarray  # (R,) spacing of marched rays
    stage1: np.ndarray  # (R, N) occupancy of each sample
    dens_in: np.ndarray  # (P1, 3d) density inputs of stage-1 samples
    app_in: np.ndarray  # (P1, (M+2)d) appearance inputs of stage-1 samples


def build_batch(scene, camera, pixels, truth, n_samples=64, rng=None):
    """Gather everything the heads need for a batch of target pixels (64-bit)."""
    box = occupied_aabb(scene.volume)
    origins, dirs = generate_rays(camera, pixels)
    tn, tf, hit = ray_aabb_intersect_many(origins, dirs, box.lo, box.hi)
    hit &= tf > tn
    marched = np.flatnonzero(hit)
    t, step = sample_depths(tn[marched], tf[marched], n_samples, rng)
    pts = origins[marched, None, :] + t[..., None] * dirs[marched, None, :]
    stage1 = (occupancy_rows(scene.volume, pts.reshape(-1, 3)) >= 0).reshape(t.shape)
    geom, vf, mu, var = _point_features(scene, pts.reshape(-1, 3)[stage1.ravel()], np.float64)
    return RayBatch(
        np.asarray(truth, dtype=np.float64), np.asarray(scene.background, dtype=np.float64),
        marched, step, stage1, density_input(geom, mu, var), appearance_input(vf, mu, var),
    )


@dataclass
class ForwardCache:
    rgb: np.ndarray
    sigma: np.ndarray
    color: np.ndarray
    weights: np.ndarray
    trans: np.ndarray
    keep: np.ndarray
    dens_cache: list
    app_cache: list = field(default=None)


def forward(batch, density, appearance):
    """Composite the batch with the given heads.  Returns (rgb (B, 3), cache)."""
    r, n = batch.stage1.shape
    sig1, dcache = mlp_forward_cached(density, batch.dens_in)
    sig1 = sig1[:, 0]
    keep = sig1 > 0
    c1, acache = mlp_forward_cached(appearance, batch.app_in[keep])
    sigma = np.zeros((r, n))
    sigma[batch.stage1] = sig1
    color = np.zeros((r, n, 3))
    pos1 = np.flatnonzero(batch.stage1.ravel())
    color.reshape(-1, 3)[pos1[keep]] = c1
    out, w, trans = kernels.composite_rays_np(sigma, batch.delta, color, batch.background)
    rgb = np.tile(batch.background, (len(batch.truth), 1))
    rgb[batch.marched] = out
    return rgb, ForwardCache(rgb, sigma, color, w, trans, keep, dcache, acache)


def backward(batch, cache, density, appearance):
    """Gradients of the mean squared colour error w.r.t. both heads' parameters.

    Returns ``(density_grads, appearance_grads)`` in ``MlpWeights.params()`` order.
    """
    if cache is None or cache.dens_cache is None or cache.app_cache is None:
        raise MissingActivations("backward needs the cache of a forward pass on this batch")
    g_rgb = 2.0 * (cache.rgb - batch.truth) / batch.truth.size
    g = g_rgb[batch.marched]  # (R, 3)
    w, trans, color = cache.weights, cache.trans, cache.color
    # dC/dc_i = w_i ;  dC/dsigma_i = delta (T_{i+1} c_i - (C - sum_{j<=i} w_j c_j))
    g_color = w[..., None] * g[:, None, :]
    contrib = np.einsum("rnk,rk->rn", w[..., None] * color, g)
    total = np.einsum("rk,rk->r", cache.rgb[batch.marched], g)
    suffix = total[:, None] - np.cumsum(contrib, axis=1)
    g_sigma = batch.delta[:, None] * (trans[:, 1:] * np.einsum("rnk,rk->rn", color, g) - suffix)

    g_sig1 = g_sigma[batch.stage1][:, None]
    d_grads = mlp_backward(density, cache.dens_cache, g_sig1)
    pos1 = np.flatnonzero(batch.stage1.ravel())
    g_c1 = g_color.reshape(-1, 3)[pos1[cache.keep]]
    a_grads = mlp_backward(appearance, cache.app_cache, g_c1)
    return d_grads, a_grads


def loss_and_grads(batch, density, appearance):
    rgb, cache = forward(batch, density, appearance)
    loss = loss_rgb(rgb, batch.truth)
    return loss, backward(batch, cache, density, appearance)


# --------------------------------------------------------------------------
# optimiser
# --------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update.  Returns (new params, new state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionMismatch("params, grads and optimiser state differ in length")
    k = state.step + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionMismatch(f"gradient {g.shape} vs parameter {p.shape}")
        m = BETA1 * m + (1 - BETA1) * g
        v = BETA2 * v + (1 - BETA2) * g * g
        m_hat = m / (1 - BETA1 ** k)
        v_hat = v / (1 - BETA2 ** k)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + EPS))
        new_m.append(m)
        new_v.append(v)
    return new_p, OptimizerState(new_m, new_v, k)


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------


def _views(scenes, holdout):
    out = []
    for s_idx, scene in enumerate(scenes):
        for t_idx, (cam, img) in enumerate(zip(scene.targets, scene.target_images)):
            if img is None or (s_idx, t_idx) in holdout or t_idx in holdout:
                continue
            mask = scene.target_masks[t_idx] if t_idx < len(scene.target_masks) else None
            if mask is None:
                mask = np.ones(img.shape[:2], dtype=bool)
            out.append((scene, cam, img, mask))
    return out


def train_loop(scenes, bundle, config, callback=None):
    """Optimise both heads with Adam on the scenes' target views.

    ``config.holdout`` lists target indices (or ``(scene, target)`` pairs)
    to leave out.  Returns ``(trained bundle, trace)`` with trace rows
    ``(step, lr, loss)`` every ``log_every`` steps and at the last step.
    """
    if config.steps == 0:
        return bundle, []
    views = _views(scenes, set(config.holdout))
    if not views:
        raise ValueError("no target views with ground-truth images to train on")
    rng = np.random.default_rng(config.seed)
    dens = bundle.density.astype(np.float64)
    app = bundle.appearance.astype(np.float64)
    d_acts, a_acts = dens.acts, app.acts
    nd = len(dens.params())
    params = dens.params() + app.params()
    state = OptimizerState.zeros_like(params)
    trace = []
    for step in range(config.steps):
        scene, cam, img, mask = views[step % len(views)]
        pixels, truth = sample_training_rays(img, mask, config.batch, rng)
        batch = build_batch(scene, cam, pixels, truth, config.n_samples,
                            rng if config.jitter else None)
        loss, (gd, ga) = loss_and_grads(batch, dens, app)
        lr = lr_at(step, config)
        params, state = adam_step(params, gd + ga, state, lr)
        dens = MlpWeights.from_params(params[:nd], d_acts)
        app = MlpWeights.from_params(params[nd:], a_acts)
        if step % config.log_every == 0 or step == config.steps - 1:
            trace.append((step, lr, loss))
            if callback is not None:
                callback(step, lr, loss)
    trained = bundle.with_heads(dens.astype(np.float32), app.astype(np.float32))
    return trained, trace


def write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write("step,lr,loss\n")
        for step, lr, loss in trace:
            fh.write(f"{step},{lr:.6e},{loss:.8e}\n")
