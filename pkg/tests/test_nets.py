import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from progvol.errors import BadMagic, DimensionMismatch, InconsistentDims, TruncatedFile, UnsupportedVersion
from progvol.integration import ViewStats
from progvol.nets import (
    Layer,
    MlpWeights,
    WeightBundle,
    appearance_head,
    density_forward,
    density_head,
    init_mlp,
    load_bundle,
    make_bundle,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    save_bundle,
)


def small_bundle(seed=3):
    return make_bundle(d=5, views=2, n_queries=7, seed=seed, density_hidden=(6,), appearance_hidden=(6, 4))


def bundles_equal(a, b):
    pairs = [(a.attention.W1, b.attention.W1), (a.attention.b1, b.attention.b1),
             (a.attention.W2, b.attention.W2), (a.attention.b2, b.attention.b2),
             (a.queries, b.queries), (a.densify_kernels, b.densify_kernels)]
    pairs += list(zip(a.density.params(), b.density.params()))
    pairs += list(zip(a.appearance.params(), b.appearance.params()))
    return (a.density.acts == b.density.acts and a.appearance.acts == b.appearance.acts
            and all(x.dtype == y.dtype and x.shape == y.shape and np.array_equal(x, y) for x, y in pairs))


def test_mlp_forward_by_hand():
    mlp = MlpWeights((Layer(np.array([[1.0, -1.0], [2.0, 0.0]]), np.array([0.0, -1.0]), "relu"),
                      Layer(np.array([[1.0, 1.0]]), np.array([0.5]), "none")))
    np.testing.assert_allclose(mlp_forward(mlp, np.array([[3.0, 1.0], [0.0, 2.0]])), [[2 + 5 + 0.5], [0.5]])


def test_mlp_shape_errors():
    with pytest.raises(DimensionMismatch):
        MlpWeights((Layer(np.ones((3, 2)), np.ones(3), "relu"), Layer(np.ones((1, 4)), np.ones(1), "none")))
    with pytest.raises(DimensionMismatch):
        Layer(np.ones((3, 2)), np.ones(2), "relu")
    with pytest.raises(DimensionMismatch):
        mlp_forward(init_mlp((4, 2), ["none"], np.random.default_rng(0)), np.ones(3))


@pytest.mark.parametrize("acts", [["relu", "relu", "sigmoid"], ["none", "relu", "none"]])
def test_mlp_backward_finite_difference(acts):
    rng = np.random.default_rng(0)
    mlp = init_mlp((4, 6, 5, 2), acts, rng, np.float64)
    mlp = MlpWeights.from_params([p + 0.1 * rng.standard_normal(p.shape) for p in mlp.params()], acts)
    x = rng.standard_normal((7, 4))
    target = rng.standard_normal((7, 2))

    def loss(m):
        return 0.5 * np.sum((mlp_forward(m, x) - target) ** 2)

    out, cache = mlp_forward_cached(mlp, x)
    grads = mlp_backward(mlp, cache, out - target)
    params = mlp.params()
    h = 1e-6
    for k, p in enumerate(params):
        for j in range(0, p.size, 3):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k].reshape(-1)[j] += h
            minus[k].reshape(-1)[j] -= h
            num = (loss(MlpWeights.from_params(plus, acts)) - loss(MlpWeights.from_params(minus, acts))) / (2 * h)
            assert grads[k].reshape(-1)[j] == pytest.approx(num, rel=1e-5, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_head_ranges(seed):
    rng = np.random.default_rng(seed)
    b = small_bundle(seed % 1000)
    geom, mu, var = (rng.standard_normal((20, 5)) * 3 for _ in range(3))
    assert np.all(density_forward(b.density, geom, mu, np.abs(var)) >= 0)
    rgb = appearance_head(rng.standard_normal((20, 2, 5)) * 10, ViewStats(mu, var), b.appearance)
    assert rgb.shape == (20, 3) and np.all((rgb >= 0) & (rgb <= 1))


def test_density_head_checks_widths():
    b = small_bundle()
    with pytest.raises(DimensionMismatch):
        density_head(np.zeros(4), ViewStats(np.zeros(5), np.zeros(5)), b.density)
    assert density_head(np.zeros(5), ViewStats(np.zeros(5), np.zeros(5)), b.density) >= 0


def test_make_bundle_is_seeded():
    assert bundles_equal(small_bundle(3), small_bundle(3))
    assert not bundles_equal(small_bundle(3), small_bundle(4))
    b = make_bundle(d=32, views=3, n_queries=642)
    assert b.density.in_dim == 96 and b.appearance.in_dim == 160
    assert [l.W.shape[0] for l in b.density.layers] == [256, 256, 1]
    assert [l.W.shape[0] for l in b.appearance.layers] == [256, 128, 3]
    assert b.queries.dtype == np.float32


def test_bundle_validation():
    b = small_bundle()
    with pytest.raises(InconsistentDims):
        WeightBundle(b.attention, b.queries[:, :4], b.densify_kernels, b.density, b.appearance)
    with pytest.raises(InconsistentDims):
        b.with_heads(b.appearance, b.density)
    flipped = MlpWeights(b.appearance.layers[:-1] + (Layer(b.appearance.layers[-1].W, b.appearance.layers[-1].b, "relu"),))
    with pytest.raises(InconsistentDims):
        b.with_heads(b.density, flipped)


def test_roundtrip_bit_exact(tmp_path):
    b = make_bundle(d=8, views=3, n_queries=50, seed=9, density_hidden=(16, 16), appearance_hidden=(16, 8))
    path = tmp_path / "w.gpnw"
    save_bundle(b, path)
    c = load_bundle(path)
    assert bundles_equal(b, c)
    save_bundle(c, tmp_path / "w2.gpnw")
    assert path.read_bytes() == (tmp_path / "w2.gpnw").read_bytes()


def test_file_header_layout(tmp_path):
    b = small_bundle()
    save_bundle(b, tmp_path / "w")
    data = (tmp_path / "w").read_bytes()
    assert data[:4] == b"GPNW"
    assert struct.unpack("<IIII", data[4:20]) == (1, 5, 2, 7)
    assert struct.unpack("<Q", data[20:28]) == (25,)


def test_bad_magic(tmp_path):
    save_bundle(small_bundle(), tmp_path / "w")
    data = bytearray((tmp_path / "w").read_bytes())
    data[0:4] = b"XXXX"
    (tmp_path / "bad").write_bytes(bytes(data))
    with pytest.raises(BadMagic):
        load_bundle(tmp_path / "bad")
    (tmp_path / "empty").write_bytes(b"")
    with pytest.raises(TruncatedFile):
        load_bundle(tmp_path / "empty")


def test_unsupported_version(tmp_path):
    save_bundle(small_bundle(), tmp_path / "w")
    data = bytearray((tmp_path / "w").read_bytes())
    data[4:8] = struct.pack("<I", 99)
    (tmp_path / "v").write_bytes(bytes(data))
    with pytest.raises(UnsupportedVersion):
        load_bundle(tmp_path / "v")


def test_every_truncation_is_reported(tmp_path):
    save_bundle(small_bundle(), tmp_path / "w")
    data = (tmp_path / "w").read_bytes()
    cut = tmp_path / "cut"
    for n in range(len(data)):
        cut.write_bytes(data[:n])
        with pytest.raises(TruncatedFile):
            load_bundle(cut)


def test_trailing_bytes_and_bad_counts(tmp_path):
    save_bundle(small_bundle(), tmp_path / "w")
    data = (tmp_path / "w").read_bytes()
    (tmp_path / "t").write_bytes(data + b"\0")
    with pytest.raises(InconsistentDims):
        load_bundle(tmp_path / "t")
    bad = bytearray(data)
    bad[20:28] = struct.pack("<Q", 24)
    (tmp_path / "c").write_bytes(bytes(bad))
    with pytest.raises(InconsistentDims):
        load_bundle(tmp_path / "c")
