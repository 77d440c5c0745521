"""Scene manifests, file formats and scene preparation.

Manifest (JSON)::

    {
      "feature_dim": 32,            # optional, default 32
      "feature_seed": 42,           # optional, seed of the built-in feature provider
      "views": [                    # M >= 1 source views
        {"intrinsics": [[fx, s, cx], [0, fy, cy], [0, 0, 1]],
         "rotation": [[...], [...], [...]], "translation": [tx, ty, tz],
         "width": 64, "height": 64,
         "image": "src_0.ppm",      # P6 PPM
         "features": "src_0.gpfm",  # optional precomputed feature map
         "mask": "src_0_mask.ppm"}  # optional body mask
      ],
      "prior_vertices": "prior.gpvx",
      "targets": [{<camera fields>, "image": optional, "mask": optional}],
      "grid": {"voxel_size": 0.025, "margin": 5}          # optional overrides, or
              {"origin": [x, y, z], "voxel_size": s, "resolution": [nx, ny, nz]},
      "background": [0, 0, 0]
    }

Relative paths resolve against the manifest's directory.
"""

import json
import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
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
from .geometry import Camera, FeatureMap
from .integration import GeometryPrior, integrate_prior
from .volume import DEFAULT_MARGIN, DEFAULT_VOXEL_SIZE, GridSpec, densify, fit_grid, voxelize

DEFAULT_FEATURE_DIM = 32
DEFAULT_FEATURE_SEED = 42
VERTEX_MAGIC = b"GPVX"
FEATURE_MAGIC = b"GPFM"


# --------------------------------------------------------------------------
# PPM images
# --------------------------------------------------------------------------


def write_ppm(path, image):
    """Write an (H, W, 3) float image in [0, 1] as binary P6, rounding half up."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    h, w, _ = img.shape
    data = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _header_tokens(data, count):
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and chr(data[pos]).isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not chr(data[pos]).isspace():
            pos += 1
        if start == pos:
            raise BadHeader("PPM header ended early")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the pixels
    return tokens, pos + 1


def read_ppm(path):
    """Read a binary P6 PPM (maxval 255) into an (H, W, 3) float64 array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6":
        raise BadHeader(f"{path}: only binary P6 PPM is supported, found {data[:2]!r}")
    try:
        tokens, start = _header_tokens(data, 4)
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise BadHeader(f"{path}: malformed PPM header") from None
    if maxval != 255 or w < 1 or h < 1:
        raise BadHeader(f"{path}: need maxval 255 and a positive size, got {w}x{h}/{maxval}")
    need = w * h * 3
    payload = data[start:start + need]
    if len(payload) < need:
        raise TruncatedFile(f"{path}: expected {need} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3) / 255.0


def write_mask(path, mask):
    write_ppm(path, np.asarray(mask, dtype=np.float64))


def read_mask(path):
    return read_ppm(path)[:, :, 0] > 0.5


# --------------------------------------------------------------------------
# prior vertices and feature maps
# --------------------------------------------------------------------------


def write_vertices(path, positions):
    p = np.ascontiguousarray(positions, dtype="<f4").reshape(-1, 3)
    with open(path, "wb") as fh:
        fh.write(VERTEX_MAGIC + struct.pack("<I", len(p)) + p.tobytes())


def read_vertices(path):
    """Binary ``GPVX`` vertex file, or ASCII ``x y z`` lines (detected by magic)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == VERTEX_MAGIC:
        if len(data) < 8:
            raise TruncatedFile(f"{path}: missing vertex count")
        (n,) = struct.unpack("<I", data[4:8])
        if len(data) < 8 + 12 * n:
            raise TruncatedFile(f"{path}: header claims {n} vertices")
        return np.frombuffer(data[8:8 + 12 * n], dtype="<f4").reshape(n, 3).astype(np.float64)
    try:
        rows = [line.split() for line in data.decode("ascii").splitlines()]
        pts = np.array([[float(x) for x in r] for r in rows if r and not r[0].startswith("#")])
    except (UnicodeDecodeError, ValueError):
        raise BadMagic(f"{path}: neither a GPVX file nor ASCII 'x y z' lines") from None
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise BadMagic(f"{path}: ASCII vertex lines must have three values")
    return pts


def write_feature_map(path, fmap):
    v = np.ascontiguousarray(fmap.values, dtype="<f4")
    h, w, d = v.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<III", h, w, d) + v.tobytes())


def read_feature_map(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FEATURE_MAGIC:
        raise BadMagic(f"{path}: not a GPFM feature map")
    if len(data) < 16:
        raise TruncatedFile(f"{path}: header truncated")
    h, w, d = struct.unpack("<III", data[4:16])
    need = h * w * d * 4
    if len(data) < 16 + need:
        raise TruncatedFile(f"{path}: expected {need} payload bytes")
    return FeatureMap(np.frombuffer(data[16:16 + need], dtype="<f4").reshape(h, w, d))


# --------------------------------------------------------------------------
# feature provider
# --------------------------------------------------------------------------


def luminance(image):
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


def feature_provider(image, d=DEFAULT_FEATURE_DIM, seed=DEFAULT_FEATURE_SEED):
    """Deterministic stand-in for a learned image backbone.

    Channels: RGB, |d/du| and |d/dv| of luminance (central differences),
    then ``d - 5`` responses of fixed seeded 5x5 filters on luminance.
    """
    if d < 5:
        raise BadDimension(f"built-in feature provider needs d >= 5, got {d}")
    img = np.asarray(image, dtype=np.float64)
    lum = luminance(img)
    gv, gu = np.gradient(lum)
    chans = [img[..., 0], img[..., 1], img[..., 2], np.abs(gu), np.abs(gv)]
    rng = np.random.default_rng(seed)
    filters = rng.standard_normal((d - 5, 5, 5)) / 5.0
    for f in filters:
        chans.append(ndimage.correlate(lum, f, mode="nearest"))
    return FeatureMap(np.stack(chans, axis=-1))


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ViewEntry:
    camera: Camera
    image: str = None
    features: str = None
    mask: str = None


@dataclass(frozen=True, eq=False)
class SceneManifest:
    path: str
    views: tuple
    prior_vertices: str
    targets: tuple
    grid: dict
    background: tuple
    feature_dim: int = DEFAULT_FEATURE_DIM
    feature_seed: int = DEFAULT_FEATURE_SEED


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}.{key}" if where else key, "missing required field")
    return obj[key]


def _matrix(value, shape, field):
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError(field, "must be numeric") from None
    if arr.shape != shape:
        raise SchemaError(field, f"expected shape {shape}, got {arr.shape}")
    return arr


def _camera_from(entry, where):
    K = _matrix(_require(entry, "intrinsics", where), (3, 3), f"{where}.intrinsics")
    R = _matrix(_require(entry, "rotation", where), (3, 3), f"{where}.rotation")
    t = _matrix(_require(entry, "translation", where), (3,), f"{where}.translation")
    w = _require(entry, "width", where)
    h = _require(entry, "height", where)
    if not isinstance(w, int) or not isinstance(h, int):
        raise SchemaError(f"{where}.width", "width and height must be integers")
    try:
        return Camera(K, R, t, w, h)
    except BadCamera as exc:
        raise BadCamera(f"{where}: {exc}") from None


def _path(base, rel, field, required=True):
    if rel is None:
        if required:
            raise SchemaError(field, "missing required field")
        return None
    if not isinstance(rel, str):
        raise SchemaError(field, "must be a path string")
    full = rel if os.path.isabs(rel) else os.path.join(base, rel)
    if not os.path.exists(full):
        raise MissingFile(f"{field}: {full} does not exist")
    return full


def parse_manifest(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise MissingFile(f"manifest {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise SchemaError("manifest", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("manifest", "top level must be an object")
    base = os.path.dirname(os.path.abspath(path))
    views_doc = _require(doc, "views", "")
    if not isinstance(views_doc, list) or not views_doc:
        raise SchemaError("views", "need at least one source view")
    views = []
    for i, v in enumerate(views_doc):
        where = f"views[{i}]"
        cam = _camera_from(v, where)
        views.append(ViewEntry(
            cam,
            _path(base, v.get("image"), f"{where}.image"),
            _path(base, v.get("features"), f"{where}.features", required=False),
            _path(base, v.get("mask"), f"{where}.mask", required=False),
        ))
    targets = []
    for i, v in enumerate(doc.get("targets", [])):
        where = f"targets[{i}]"
        targets.append(ViewEntry(
            _camera_from(v, where),
            _path(base, v.get("image"), f"{where}.image", required=False),
            None,
            _path(base, v.get("mask"), f"{where}.mask", required=False),
        ))
    prior = _path(base, _require(doc, "prior_vertices", ""), "prior_vertices")
    grid = doc.get("grid", {}) or {}
    if not isinstance(grid, dict):
        raise SchemaError("grid", "must be an object")
    bg = doc.get("background", [0.0, 0.0, 0.0])
    bg_arr = _matrix(bg, (3,), "background")
    d = doc.get("feature_dim", DEFAULT_FEATURE_DIM)
    if not isinstance(d, int) or d < 1:
        raise SchemaError("feature_dim", "must be a positive integer")
    seed = doc.get("feature_seed", DEFAULT_FEATURE_SEED)
    return SceneManifest(
        os.path.abspath(path), tuple(views), prior, tuple(targets), grid,
        tuple(float(x) for x in bg_arr), d, int(seed),
    )


def grid_from_overrides(positions, overrides):
    size = float(overrides.get("voxel_size", DEFAULT_VOXEL_SIZE))
    if "origin" in overrides or "resolution" in overrides:
        try:
            return GridSpec(
                _require(overrides, "origin", "grid"), size, _require(overrides, "resolution", "grid")
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError("grid", str(exc)) from None
    return fit_grid(positions, size, int(overrides.get("margin", DEFAULT_MARGIN)))


# --------------------------------------------------------------------------
# prepared scene
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Scene:
    """Read-only state shared by every render and training worker."""

    cameras: tuple
    maps: tuple
    prior: np.ndarray
    volume: object
    background: np.ndarray
    targets: tuple = ()
    target_images: tuple = ()
    target_masks: tuple = ()
    source_images: tuple = ()
    source_masks: tuple = ()

    @property
    def views(self):
        return len(self.cameras)

    @property
    def dim(self):
        return self.maps[0].channels


def build_volume(positions, cameras, maps, bundle, grid):
    """Integrate prior-vertex features, voxelise them and densify."""
    if bundle.n_queries != len(positions):
        raise InconsistentDims(
            f"bundle has {bundle.n_queries} query embeddings for {len(positions)} prior vertices"
        )
    if bundle.views != len(cameras) or bundle.dim != maps[0].channels:
        raise InconsistentDims(
            f"bundle expects M={bundle.views}, d={bundle.dim}; scene has "
            f"M={len(cameras)}, d={maps[0].channels}"
        )
    prior = GeometryPrior(positions, bundle.queries.astype(np.float64))
    feats = integrate_prior(prior, cameras, maps, bundle.attention)
    vol = voxelize(positions, feats, grid)
    return densify(vol, bundle.rounds, bundle.densify_kernels.astype(np.float64))


def prepare_scene(cameras, images, positions, bundle, grid=None, background=(0, 0, 0),
                  feature_dim=None, feature_seed=DEFAULT_FEATURE_SEED, maps=None,
                  targets=(), target_images=(), target_masks=(), source_masks=()):
    d = feature_dim or bundle.dim
    if maps is None:
        maps = tuple(feature_provider(img, d, feature_seed) for img in images)
    positions = np.asarray(positions, dtype=np.float64)
    if grid is None:
        grid = fit_grid(positions)
    vol = build_volume(positions, cameras, maps, bundle, grid)
    return Scene(
        tuple(cameras), tuple(maps), positions, vol, np.asarray(background, dtype=np.float64),
        tuple(targets), tuple(target_images), tuple(target_masks),
        tuple(images), tuple(source_masks),
    )


def load_scene(manifest_path, bundle=None):
    """Parse a manifest, load its files and build the densified feature volume.

    Without ``bundle`` a seeded default (:func:`progvol.nets.make_bundle`)
    sized to the scene is used for the attention and densify stages.
    """
    from .nets import make_bundle

    man = parse_manifest(manifest_path)
    cameras = [v.camera for v in man.views]
    images = []
    maps = []
    for i, v in enumerate(man.views):
        img = read_ppm(v.image)
        if img.shape[:2] != (v.camera.height, v.camera.width):
            raise SchemaError(f"views[{i}].image", "image size differs from camera width/height")
        images.append(img)
        if v.features is not None:
            fmap = read_feature_map(v.features)
            if fmap.channels != man.feature_dim:
                raise BadDimension(
                    f"views[{i}].features has d={fmap.channels}, manifest d={man.feature_dim}"
                )
        else:
            fmap = feature_provider(img, man.feature_dim, man.feature_seed)
        maps.append(fmap)
    positions = read_vertices(man.prior_vertices)
    if bundle is None:
        bundle = make_bundle(man.feature_dim, len(cameras), len(positions))
    elif bundle.dim != man.feature_dim:
        raise DimensionMismatch(f"weights use d={bundle.dim}, manifest d={man.feature_dim}")
    grid = grid_from_overrides(positions, man.grid)
    target_imgs = tuple(read_ppm(t.image) if t.image else None for t in man.targets)
    target_masks = tuple(read_mask(t.mask) if t.mask else None for t in man.targets)
    src_masks = tuple(read_mask(v.mask) if v.mask else None for v in man.views)
    return prepare_scene(
        cameras, images, positions, bundle, grid, man.background, man.feature_dim,
        man.feature_seed, maps=tuple(maps), targets=tuple(t.camera for t in man.targets),
        target_images=target_imgs, target_masks=target_masks, source_masks=src_masks,
    )
