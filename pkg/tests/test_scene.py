import json
import os

import numpy as np
import pytest

from progvol.errors import (
    BadCamera,
    BadDimension,
    BadHeader,
    BadMagic,
    DimensionMismatch,
    InconsistentDims,
    MissingFile,
    SchemaError,
    TruncatedFile,
)
from progvol.geometry import FeatureMap
from progvol.nets import make_bundle
from progvol.scene import (
    feature_provider,
    load_scene,
    parse_manifest,
    read_feature_map,
    read_mask,
    read_ppm,
    read_vertices,
    write_feature_map,
    write_mask,
    write_ppm,
    write_vertices,
)
from progvol.synthetic import gen_synthetic_scene, make_scene

from conftest import tiny_bundle, tiny_spec


def test_ppm_roundtrip_and_rounding(tmp_path, rng):
    img = rng.random((5, 7, 3))
    img[0, 0] = [0.5 / 255, 1.5 / 255, 1.2]
    write_ppm(tmp_path / "a.ppm", img)
    back = read_ppm(tmp_path / "a.ppm")
    assert back.shape == (5, 7, 3)
    assert np.abs(back - img.clip(0, 1)).max() <= 0.5 / 255 + 1e-12
    np.testing.assert_array_equal(np.round(back[0, 0] * 255), [1, 2, 255])
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")


def test_ppm_header_comments(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([0, 128, 255, 10, 20, 30]))
    np.testing.assert_allclose(read_ppm(tmp_path / "c.ppm")[0, 1] * 255, [10, 20, 30])


@pytest.mark.parametrize("data, err", [
    (b"P3\n1 1\n255\n0 0 0\n", BadHeader),
    (b"P6\n1 1\n65535\n" + bytes(6), BadHeader),
    (b"P6\n1 x\n255\n" + bytes(3), BadHeader),
    (b"P6\n2 2", BadHeader),
    (b"P6\n2 2\n255\n" + bytes(5), TruncatedFile),
])
def test_ppm_errors(tmp_path, data, err):
    (tmp_path / "bad.ppm").write_bytes(data)
    with pytest.raises(err):
        read_ppm(tmp_path / "bad.ppm")


def test_mask_roundtrip(tmp_path, rng):
    m = rng.random((6, 4)) < 0.5
    write_mask(tmp_path / "m.ppm", m)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.ppm"), m)


def test_vertices_binary_and_ascii(tmp_path, rng):
    pts = rng.standard_normal((11, 3))
    write_vertices(tmp_path / "v.gpvx", pts)
    np.testing.assert_array_equal(read_vertices(tmp_path / "v.gpvx"), pts.astype(np.float32))
    (tmp_path / "v.txt").write_text("# header\n1 2 3\n\n4.5 -1 0\n")
    np.testing.assert_array_equal(read_vertices(tmp_path / "v.txt"), [[1, 2, 3], [4.5, -1, 0]])
    (tmp_path / "bad.txt").write_text("1 2\n")
    with pytest.raises(BadMagic):
        read_vertices(tmp_path / "bad.txt")
    data = (tmp_path / "v.gpvx").read_bytes()
    (tmp_path / "short.gpvx").write_bytes(data[:-4])
    with pytest.raises(TruncatedFile):
        read_vertices(tmp_path / "short.gpvx")


def test_feature_map_file(tmp_path, rng):
    fmap = FeatureMap(rng.standard_normal((4, 6, 3)))
    write_feature_map(tmp_path / "f.gpfm", fmap)
    np.testing.assert_array_equal(read_feature_map(tmp_path / "f.gpfm").values, fmap.values)
    data = (tmp_path / "f.gpfm").read_bytes()
    (tmp_path / "t.gpfm").write_bytes(data[:-1])
    with pytest.raises(TruncatedFile):
        read_feature_map(tmp_path / "t.gpfm")
    (tmp_path / "m.gpfm").write_bytes(b"NOPE" + data[4:])
    with pytest.raises(BadMagic):
        read_feature_map(tmp_path / "m.gpfm")


def test_feature_provider(rng):
    img = rng.random((9, 8, 3))
    a = feature_provider(img, 12, 5)
    assert a.values.shape == (9, 8, 12)
    np.testing.assert_array_equal(a.values, feature_provider(img, 12, 5).values)
    assert not np.array_equal(a.values[..., 5:], feature_provider(img, 12, 6).values[..., 5:])
    np.testing.assert_allclose(a.values[..., :3], img, atol=1e-6)
    with pytest.raises(BadDimension):
        feature_provider(img, 4)


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    path = gen_synthetic_scene(tiny_spec(), str(out))
    return out, path


def test_gen_scene_writes_expected_files(scene_dir):
    out, path = scene_dir
    names = set(os.listdir(out))
    assert {"manifest.json", "spec.json", "prior.gpvx", "src_0.ppm", "src_2_mask.ppm", "target_1.ppm"} <= names
    man = parse_manifest(path)
    assert len(man.views) == 3 and len(man.targets) == 2 and man.feature_dim == 8


def test_gen_scene_bit_identical(scene_dir, tmp_path):
    out, _ = scene_dir
    gen_synthetic_scene(tiny_spec(), str(tmp_path))
    for name in sorted(os.listdir(out)):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_file_route_matches_memory_route(scene_dir):
    _, path = scene_dir
    spec = tiny_spec()
    bundle = tiny_bundle(spec)
    a = load_scene(path, bundle)
    b = make_scene(spec, bundle)
    np.testing.assert_array_equal(a.volume.indices, b.volume.indices)
    np.testing.assert_array_equal(a.volume.features, b.volume.features)
    for ma, mb in zip(a.maps, b.maps):
        np.testing.assert_array_equal(ma.values, mb.values)
    for ta, tb in zip(a.target_images, b.target_images):
        np.testing.assert_array_equal(ta, tb)


def _edit_manifest(src, dst, edit):
    doc = json.loads(open(src).read())
    edit(doc)
    base = os.path.dirname(src)
    for v in doc.get("views", []) + doc.get("targets", []):
        for key in ("image", "mask"):
            if isinstance(v.get(key), str):
                v[key] = os.path.join(base, v[key])
    if isinstance(doc.get("prior_vertices"), str):
        doc["prior_vertices"] = os.path.join(base, doc["prior_vertices"])
    dst.write_text(json.dumps(doc))
    return dst


@pytest.mark.parametrize("edit, field", [
    (lambda d: d.pop("views"), "views"),
    (lambda d: d.__setitem__("views", []), "views"),
    (lambda d: d["views"][1].pop("rotation"), "views[1].rotation"),
    (lambda d: d["views"][0].__setitem__("intrinsics", [[1, 0], [0, 1]]), "views[0].intrinsics"),
    (lambda d: d["targets"][0].__setitem__("width", 2.5), "targets[0].width"),
    (lambda d: d.pop("prior_vertices"), "prior_vertices"),
    (lambda d: d.__setitem__("background", [0, 0]), "background"),
    (lambda d: d.__setitem__("feature_dim", 0), "feature_dim"),
    (lambda d: d["views"][0].pop("image"), "views[0].image"),
])
def test_manifest_schema_errors(scene_dir, tmp_path, edit, field):
    _, path = scene_dir
    bad = _edit_manifest(path, tmp_path / "m.json", edit)
    with pytest.raises(SchemaError) as info:
        parse_manifest(bad)
    assert info.value.field == field


def test_manifest_missing_files(scene_dir, tmp_path):
    _, path = scene_dir
    with pytest.raises(MissingFile):
        parse_manifest(tmp_path / "nope.json")
    bad = _edit_manifest(path, tmp_path / "m.json", lambda d: d["views"][0].__setitem__("image", "gone.ppm"))
    with pytest.raises(MissingFile):
        parse_manifest(bad)
    (tmp_path / "j.json").write_text("{not json")
    with pytest.raises(SchemaError):
        parse_manifest(tmp_path / "j.json")


def test_manifest_bad_camera(scene_dir, tmp_path):
    _, path = scene_dir
    bad = _edit_manifest(path, tmp_path / "m.json",
                         lambda d: d["views"][0].__setitem__("rotation", [[2, 0, 0], [0, 1, 0], [0, 0, 1]]))
    with pytest.raises(BadCamera):
        parse_manifest(bad)


def test_load_scene_dimension_checks(scene_dir):
    _, path = scene_dir
    with pytest.raises(DimensionMismatch):
        load_scene(path, make_bundle(d=6, views=3, n_queries=200, density_hidden=(4,), appearance_hidden=(4,)))
    with pytest.raises(InconsistentDims):
        load_scene(path, make_bundle(d=8, views=3, n_queries=199, density_hidden=(4,), appearance_hidden=(4,)))


def test_explicit_grid_and_feature_files(scene_dir, tmp_path):
    out, path = scene_dir
    spec = tiny_spec()
    bundle = tiny_bundle(spec)
    ref = load_scene(path, bundle)
    for m, fmap in enumerate(ref.maps):
        write_feature_map(tmp_path / f"f{m}.gpfm", fmap)
    g = ref.volume.grid

    def edit(d):
        d["grid"] = {"origin": g.origin.tolist(), "voxel_size": g.voxel_size, "resolution": list(g.resolution)}
        for m, v in enumerate(d["views"]):
            v["features"] = str(tmp_path / f"f{m}.gpfm")

    scene = load_scene(_edit_manifest(path, tmp_path / "m.json", edit), bundle)
    np.testing.assert_array_equal(scene.volume.features, ref.volume.features)
    write_feature_map(tmp_path / "f0.gpfm", FeatureMap(np.zeros((24, 24, 5))))
    with pytest.raises(BadDimension):
        load_scene(tmp_path / "m.json", bundle)


def test_constant_image_has_zero_gradients():
    fmap = feature_provider(np.full((12, 10, 3), 0.4), 9, 1)
    assert np.all(fmap.values[..., 3:5] == 0)


def test_single_view_manifest(scene_dir, tmp_path):
    _, path = scene_dir

    def keep_one(d):
        d["views"] = d["views"][:1]

    bundle = make_bundle(8, 1, 200, density_hidden=(4,), appearance_hidden=(4,))
    scene = load_scene(_edit_manifest(path, tmp_path / "one.json", keep_one), bundle)
    assert scene.views == 1 and len(scene.maps) == 1


def test_singular_rotation_is_bad_camera(scene_dir, tmp_path):
    _, path = scene_dir
    bad = _edit_manifest(path, tmp_path / "m.json",
                         lambda d: d["views"][0].__setitem__("rotation", [[1, 0, 0], [0, 1, 0], [0, 0, 0]]))
    with pytest.raises(BadCamera):
        load_scene(bad)


def test_load_scene_idempotent(scene_dir):
    from progvol.renderer import render_progressive

    _, path = scene_dir
    bundle = tiny_bundle(tiny_spec())
    a, b = load_scene(path, bundle), load_scene(path, bundle)
    ia, ca = render_progressive(a, bundle, 0)
    ib, cb = render_progressive(b, bundle, 0)
    assert ca.counts() == cb.counts() and np.array_equal(ia.rgb, ib.rgb)


def test_masks_agree_with_marcher(scene_dir):
    from progvol.synthetic import render_analytic, ring_cameras

    out, path = scene_dir
    spec = tiny_spec()
    man = parse_manifest(path)
    for cam, entry in zip(ring_cameras(spec, spec.views), man.views):
        _, acc = render_analytic(cam, spec)
        mask = read_mask(entry.mask)
        assert mask.any() and np.all(acc[mask] > 0.5)
        np.testing.assert_array_equal(mask, acc > 0.5)
