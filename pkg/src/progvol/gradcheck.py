"""Central finite-difference check of the trainer's analytic gradients."""

import numpy as np

from .nets import MlpWeights
from .trainer import forward, loss_and_grads, loss_rgb


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def _relu_pattern(batch, density, appearance):
    rgb, cache = forward(batch, density, appearance)
    masks = [out > 0 for mlp, caches in ((density, cache.dens_cache), (appearance, cache.app_cache))
             for layer, (_, out) in zip(mlp.layers, caches) if layer.act == "relu"]
    return loss_rgb(rgb, batch.truth), masks


def _same(a, b):
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(batch, density, appearance, n_per_head=60, h=1e-5, seed=0):
    """Compare analytic and central-difference gradients on random parameters.

    Runs in 64-bit.  A parameter whose +h and -h evaluations see different
    relu on/off patterns straddles a kink, where the loss has no derivative;
    such draws are skipped and replaced by the next random parameter.

    Returns ``(results, skipped)``: ``results`` holds ``(head, array index,
    flat index, analytic, numeric, relative error)`` tuples, ``n_per_head``
    per head when enough smooth parameters exist.
    """
    rng = np.random.default_rng(seed)
    dens = density.astype(np.float64)
    app = appearance.astype(np.float64)
    _, (gd, ga) = loss_and_grads(batch, dens, app)
    results, skipped = [], 0
    for name, mlp, grads in (("density", dens, gd), ("appearance", app, ga)):
        params = mlp.params()
        offsets = np.concatenate([[0], np.cumsum([p.size for p in params])])
        taken = 0
        for flat in rng.permutation(offsets[-1]):
            if taken == n_per_head:
                break
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            j = int(flat - offsets[k])

            def evaluate(delta):
                ps = [p.copy() for p in params]
                ps[k].reshape(-1)[j] += delta
                mod = MlpWeights.from_params(ps, mlp.acts)
                return _relu_pattern(batch, *((mod, app) if name == "density" else (dens, mod)))

            (lp, mp), (lm, mm) = evaluate(h), evaluate(-h)
            if not _same(mp, mm):
                skipped += 1
                continue
            numeric = (lp - lm) / (2 * h)
            analytic = float(grads[k].reshape(-1)[j])
            results.append((name, k, j, analytic, numeric, relative_error(analytic, numeric)))
            taken += 1
    return results, skipped
