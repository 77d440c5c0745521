"""Geometry-guided progressive volumetric rendering."""

from ._accel import USE_NUMBA, backend_name
from .geometry import Aabb, Camera, FeatureMap, Ray
from .nets import WeightBundle, load_bundle, make_bundle, save_bundle
from .renderer import RenderConfig, render_dense_masked, render_progressive
from .scene import Scene, load_scene

__version__ = "0.1.0"

__all__ = [
    "Aabb", "Camera", "FeatureMap", "Ray", "Scene", "WeightBundle", "RenderConfig",
    "USE_NUMBA", "backend_name", "load_bundle", "load_scene", "make_bundle",
    "render_dense_masked", "render_progressive", "save_bundle",
]
