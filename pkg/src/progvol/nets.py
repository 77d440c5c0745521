"""Small fully connected networks and the binary weight bundle.

Weight file layout (little-endian)::

    "GPNW"  u32 version  u32 d  u32 M  u32 L
    attention:  block W1 (d*d)  block b1 (d)  block W2 (M*d*d)  block b2 (M*d)
    queries:    block Q (L*d)
    densify:    u32 rounds  block kernels (rounds*27)
    density:    mlp
    appearance: mlp

    mlp   := u32 n_layers, then per layer: u32 out  u32 in  u32 act  block W (out*in)  block b (out)
    block := u64 count, then count float32 values, row-major
    act   := 0 none, 1 relu, 2 sigmoid
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    InconsistentDims,
    TruncatedFile,
    UnsupportedVersion,
)
from .integration import AttentionParams
from .volume import DEFAULT_ROUNDS, box_kernel

MAGIC = b"GPNW"
VERSION = 1
ACTIVATIONS = ("none", "relu", "sigmoid")

DENSITY_HIDDEN = (256, 256)
APPEARANCE_HIDDEN = (256, 128)


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    return np.exp(-np.logaddexp(0, -x)).astype(np.result_type(x), copy=False)


_ACT_FN = {"none": lambda x: x, "relu": relu, "sigmoid": sigmoid}


@dataclass(frozen=True, eq=False)
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    act: str = "relu"

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionMismatch(f"layer weight {self.W.shape} / bias {self.b.shape} mismatch")


@dataclass(frozen=True, eq=False)
class MlpWeights:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionMismatch("an MLP needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.W.shape[0] != nxt.W.shape[1]:
                raise DimensionMismatch(
                    f"layer output {prev.W.shape[0]} does not feed next input {nxt.W.shape[1]}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self):
        return self.layers[0].W.shape[1]

    @property
    def out_dim(self):
        return self.layers[-1].W.shape[0]

    def astype(self, dtype):
        return MlpWeights(tuple(
            Layer(l.W.astype(dtype), l.b.astype(dtype), l.act) for l in self.layers
        ))

    def params(self):
        """Flat list of parameter arrays: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    @classmethod
    def from_params(cls, params, acts):
        return cls(tuple(Layer(W, b, a) for (W, b), a in zip(zip(params[::2], params[1::2]), acts)))

    @property
    def acts(self):
        return [l.act for l in self.layers]


def init_mlp(sizes, acts, rng, dtype=np.float32):
    """He-scaled Gaussian weights (std sqrt(2/in)) and zero biases."""
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], acts):
        W = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        layers.append(Layer(W.astype(dtype), np.zeros(n_out, dtype=dtype), act))
    return MlpWeights(tuple(layers))


def mlp_forward(weights, x):
    """Affine + activation per layer.  ``x`` is (in,) or (P, in)."""
    h = np.asarray(x)
    if h.shape[-1] != weights.in_dim:
        raise DimensionMismatch(f"input width {h.shape[-1]} != MLP input {weights.in_dim}")
    for layer in weights.layers:
        h = _ACT_FN[layer.act](h @ layer.W.T + layer.b)
    return h


def mlp_forward_cached(weights, x):
    """Forward pass returning ``(output, cache)`` for :func:`mlp_backward`.

    The cache holds each layer's input and output.
    """
    h = np.asarray(x)
    if h.shape[-1] != weights.in_dim:
        raise DimensionMismatch(f"input width {h.shape[-1]} != MLP input {weights.in_dim}")
    cache = []
    for layer in weights.layers:
        out = _ACT_FN[layer.act](h @ layer.W.T + layer.b)
        cache.append((h, out))
        h = out
    return h, cache


def mlp_backward(weights, cache, grad_out):
    """Parameter gradients (same order as ``weights.params()``) for a batch.

    relu's derivative at exactly zero is taken as 0.
    """
    grads = [None] * (2 * len(weights.layers))
    g = grad_out
    for i in range(len(weights.layers) - 1, -1, -1):
        layer = weights.layers[i]
        h_in, h_out = cache[i]
        if layer.act == "relu":
            g = g * (h_out > 0)
        elif layer.act == "sigmoid":
            g = g * h_out * (1.0 - h_out)
        grads[2 * i] = g.T @ h_in
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = g @ layer.W
    return grads


# --------------------------------------------------------------------------
# heads
# --------------------------------------------------------------------------


def density_input(geom, mu, var):
    return np.concatenate([geom, mu, var], axis=-1)


def appearance_input(view_feats, mu, var):
    v = np.asarray(view_feats)
    flat = v.reshape(v.shape[:-2] + (v.shape[-2] * v.shape[-1],))
    return np.concatenate([flat, mu, var], axis=-1)


def density_forward(weights, geom, mu, var):
    """Density for a batch of points; returns shape (P,)."""
    d = mu.shape[-1]
    if geom.shape[-1] != d or var.shape[-1] != d:
        raise DimensionMismatch("geometry feature, mean and variance must share width d")
    return mlp_forward(weights, density_input(geom, mu, var))[..., 0]


def appearance_forward(weights, view_feats, mu, var):
    """RGB in [0, 1] for a batch of points; returns shape (P, 3)."""
    return mlp_forward(weights, appearance_input(view_feats, mu, var))


def density_head(geom_feature, stats, weights):
    g = np.asarray(geom_feature, dtype=np.float64)
    mu = np.asarray(stats.mean, dtype=np.float64)
    if g.shape != mu.shape:
        raise DimensionMismatch(f"geometry feature length {g.shape} != d {mu.shape}")
    return float(density_forward(weights, g, mu, np.asarray(stats.var, dtype=np.float64)))


def appearance_head(view_features, stats, weights):
    f = view_features.features if hasattr(view_features, "features") else view_features
    return appearance_forward(weights, np.asarray(f, dtype=np.float64), stats.mean, stats.var)


# --------------------------------------------------------------------------
# bundle
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeightBundle:
    """Every learnable table: attention, queries, densify kernels and both heads."""

    attention: AttentionParams
    queries: np.ndarray  # (L, d)
    densify_kernels: np.ndarray  # (rounds, 3, 3, 3)
    density: MlpWeights
    appearance: MlpWeights
    version: int = VERSION

    def __post_init__(self):
        att = self.attention
        q = np.asarray(self.queries)
        k = np.asarray(self.densify_kernels).reshape(-1, 3, 3, 3)
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "densify_kernels", k)
        d, m = att.dim, att.views
        if q.ndim != 2 or q.shape[1] != d:
            raise InconsistentDims(f"query table {q.shape} does not match d={d}")
        if self.density.in_dim != 3 * d or self.density.out_dim != 1:
            raise InconsistentDims(
                f"density MLP maps {self.density.in_dim}->{self.density.out_dim}, expected {3 * d}->1"
            )
        if self.appearance.in_dim != (m + 2) * d or self.appearance.out_dim != 3:
            raise InconsistentDims(
                f"appearance MLP maps {self.appearance.in_dim}->{self.appearance.out_dim}, "
                f"expected {(m + 2) * d}->3"
            )
        if self.density.layers[-1].act != "relu" or self.appearance.layers[-1].act != "sigmoid":
            raise InconsistentDims("density must end in relu and appearance in sigmoid")

    @property
    def dim(self):
        return self.attention.dim

    @property
    def views(self):
        return self.attention.views

    @property
    def n_queries(self):
        return len(self.queries)

    @property
    def rounds(self):
        return len(self.densify_kernels)

    def with_heads(self, density, appearance):
        return WeightBundle(self.attention, self.queries, self.densify_kernels, density, appearance)


def make_bundle(d=32, views=3, n_queries=6890, seed=42, rounds=DEFAULT_ROUNDS,
                density_hidden=DENSITY_HIDDEN, appearance_hidden=APPEARANCE_HIDDEN):
    """Seeded bundle: unit-Gaussian queries, 1/sqrt(d)-scaled attention, He-initialised heads."""
    rng = np.random.default_rng(seed)
    f32 = np.float32
    queries = rng.standard_normal((n_queries, d)).astype(f32)
    s = 1.0 / np.sqrt(d)
    attention = AttentionParams(
        (rng.standard_normal((d, d)) * s).astype(f32),
        np.zeros(d, dtype=f32),
        (rng.standard_normal((views, d, d)) * s).astype(f32),
        np.zeros((views, d), dtype=f32),
    )
    kernels = np.broadcast_to(box_kernel(), (rounds, 3, 3, 3)).astype(f32)
    dens_sizes = (3 * d,) + tuple(density_hidden) + (1,)
    app_sizes = ((views + 2) * d,) + tuple(appearance_hidden) + (3,)
    density = init_mlp(dens_sizes, ["relu"] * (len(dens_sizes) - 1), rng)
    appearance = init_mlp(
        app_sizes, ["relu"] * (len(app_sizes) - 2) + ["sigmoid"], rng
    )
    return WeightBundle(attention, queries, kernels, density, appearance)


def _block(arr):
    a = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
    return struct.pack("<Q", a.size) + a.tobytes()


def _mlp_bytes(mlp):
    out = [struct.pack("<I", len(mlp.layers))]
    for layer in mlp.layers:
        o, i = layer.W.shape
        out.append(struct.pack("<III", o, i, ACTIVATIONS.index(layer.act)))
        out.append(_block(layer.W))
        out.append(_block(layer.b))
    return b"".join(out)


def save_bundle(bundle, path):
    att = bundle.attention
    parts = [
        MAGIC,
        struct.pack("<IIII", bundle.version, bundle.dim, bundle.views, bundle.n_queries),
        _block(att.W1), _block(att.b1), _block(att.W2), _block(att.b2),
        _block(bundle.queries),
        struct.pack("<I", bundle.rounds), _block(bundle.densify_kernels),
        _mlp_bytes(bundle.density),
        _mlp_bytes(bundle.appearance),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count > 1 else vals[0]

    def block(self, expected, shape, what):
        (n,) = struct.unpack("<Q", self.take(8))
        if n != expected:
            raise InconsistentDims(f"{what}: file holds {n} values, header implies {expected}")
        arr = np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)
        return arr.reshape(shape)

    def mlp(self, what):
        n_layers = self.u32()
        layers = []
        for k in range(n_layers):
            o, i, act = self.u32(3)
            if act >= len(ACTIVATIONS):
                raise InconsistentDims(f"{what} layer {k}: unknown activation tag {act}")
            W = self.block(o * i, (o, i), f"{what} layer {k} weight")
            b = self.block(o, (o,), f"{what} layer {k} bias")
            layers.append(Layer(W, b, ACTIVATIONS[act]))
        try:
            return MlpWeights(tuple(layers))
        except DimensionMismatch as exc:
            raise InconsistentDims(f"{what}: {exc}") from None


def load_bundle(path):
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if len(data) < 4 and MAGIC.startswith(data):
        raise TruncatedFile(f"file is {len(data)} bytes, shorter than the header")
    magic = data[:4]
    r.pos = 4
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
    version, d, m, n_q = r.u32(4)
    if version != VERSION:
        raise UnsupportedVersion(f"weight file version {version}, supported {VERSION}")
    attention = AttentionParams(
        r.block(d * d, (d, d), "W1"),
        r.block(d, (d,), "b1"),
        r.block(m * d * d, (m, d, d), "W2"),
        r.block(m * d, (m, d), "b2"),
    )
    queries = r.block(n_q * d, (n_q, d), "query table")
    rounds = r.u32()
    kernels = r.block(rounds * 27, (rounds, 3, 3, 3), "densify kernels")
    density = r.mlp("density MLP")
    appearance = r.mlp("appearance MLP")
    if r.pos != len(data):
        raise InconsistentDims(f"{len(data) - r.pos} trailing bytes after appearance MLP")
    return WeightBundle(attention, queries, kernels, density, appearance, version)
