"""Feature specification, multiscale aggregation and the quantized feature cube."""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from utils.errors import ConfigError
from utils.validation import check_interval, load_feature_ranges
from vision import features as ops
from vision.scene_io import SceneData

logger = logging.getLogger(__name__)

HOG_BINS = 9
HOG_FEATURES = tuple(f"hog{i}" for i in range(HOG_BINS))
FEATURE_NAMES = (
    "int", "sat", "var_int", "var_sat", "var_grad", "ndvi", "ndsm", "dist", "dsm_grad", "y",
) + HOG_FEATURES

# Box-filter windows of scales 2 and 3.
WIDE_SCALE_WINDOWS = (45, 91)
NARROW_SCALE_WINDOWS = (10, 100)
WIDE_SCALE_FEATURES = ("int", "sat", "ndvi", "ndsm")

VARIANCE_WINDOWS = {"var_int": 7, "var_sat": 13, "var_grad": 13}

# Channels each feature needs; "color" means any of red/green/blue, "display2" two display channels.
REQUIRED_CHANNELS = {
    "int": ("color",), "sat": ("display2",), "var_int": ("color",), "var_sat": ("display2",),
    "var_grad": ("color",), "ndvi": ("nir", "red"), "ndsm": ("dsm",), "dist": ("color",),
    "dsm_grad": ("dsm",), "y": (),
}
REQUIRED_CHANNELS.update({name: ("color",) for name in HOG_FEATURES})

VAIHINGEN_FEATURES = ("int", "sat", "var_int", "var_sat", "var_grad", "ndvi", "ndsm", "dist", "dsm_grad")
STREETSCENES_FEATURES = ("int", "sat", "var_int", "var_sat", "var_grad", "y") + HOG_FEATURES
FEATURE_SETS = {"vaihingen": VAIHINGEN_FEATURES, "streetscenes": STREETSCENES_FEATURES}


def scale_windows_for(name, overrides=None):
    """Windows (scale 2, scale 3) of a feature; HOG planes share the ``hog`` entry."""
    overrides = overrides or {}
    key = "hog" if name in HOG_FEATURES else name
    if key in overrides:
        return tuple(int(w) for w in overrides[key])
    return WIDE_SCALE_WINDOWS if name in WIDE_SCALE_FEATURES else NARROW_SCALE_WINDOWS


def aggregate_multiscale(grid, name, windows=None):
    """Scale 1 plus box-filter means at the feature's scale-2/3 windows.

    Returns:
        tuple: (scale1, scale2, scale3) grids
    """
    grid = np.asarray(grid, dtype=np.float64)
    w2, w3 = windows if windows is not None else scale_windows_for(name)
    return (
        grid,
        ndimage.uniform_filter(grid, size=w2, mode="nearest"),
        ndimage.uniform_filter(grid, size=w3, mode="nearest"),
    )


def quantize(values, low, high):
    """Linear map of [low, high] to [0, 255], rounded half-up and clamped, as bytes."""
    scaled = (np.asarray(values, dtype=np.float64) - low) * (255.0 / (high - low))
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def parse_feature_list(names, scales):
    """Expand feature names × scales (name-major); ``hog`` expands to the nine planes.

    ``names`` may also be the key of a preset in ``FEATURE_SETS``.
    """
    if isinstance(names, str):
        if names not in FEATURE_SETS:
            raise ConfigError(f"Unknown feature set '{names}', expected one of {sorted(FEATURE_SETS)}")
        names = FEATURE_SETS[names]
    expanded = []
    for name in names:
        expanded.extend(HOG_FEATURES if name == "hog" else (name,))
    return tuple((name, int(scale)) for name in expanded for scale in scales)


@dataclass
class FeatureSpec:
    """Ordered (feature name, scale) pairs plus every parameter feature extraction needs."""

    features: tuple
    site_size: int = 1
    ranges: dict = None
    scale_windows: dict = field(default_factory=dict)
    variance_windows: dict = field(default_factory=lambda: dict(VARIANCE_WINDOWS))
    opening_size: int = 31
    median_size: int = 31
    edge_threshold: float = None
    edge_percentile: float = 85.0
    hog_cell: int = 7
    hog_block: int = 2

    def __post_init__(self):
        self.features = tuple((str(name), int(scale)) for name, scale in self.features)
        if not self.features:
            raise ConfigError("Feature specification is empty")
        for name, scale in self.features:
            if name not in FEATURE_NAMES:
                raise ConfigError(f"Unknown feature '{name}', expected one of {FEATURE_NAMES}")
            if scale not in (1, 2, 3):
                raise ConfigError(f"Feature '{name}' has scale {scale}, expected 1, 2 or 3")
        if self.ranges is None:
            self.ranges = load_feature_ranges()
        self.ranges = {name: check_interval(f"range of '{name}'", r) for name, r in self.ranges.items()}
        for name in self.names:
            self.range_for(name)
        if int(self.site_size) < 1:
            raise ConfigError(f"site_size must be >= 1, got {self.site_size}")
        self.site_size = int(self.site_size)

    @property
    def n_features(self):
        return len(self.features)

    @property
    def names(self):
        """Distinct feature names in first-use order."""
        return tuple(dict.fromkeys(name for name, _ in self.features))

    def range_for(self, name):
        key = "hog" if name in HOG_FEATURES and name not in self.ranges else name
        if key not in self.ranges:
            raise ConfigError(f"No scaling range configured for feature '{name}'")
        return self.ranges[key]

    def missing_channels(self, scene):
        """Channels the scene lacks for the requested features, keyed by feature."""
        missing = {}
        for name in self.names:
            lacking = []
            for need in REQUIRED_CHANNELS[name]:
                if need == "color":
                    if not any(scene.has(c) for c in ops.COLOR_CHANNELS):
                        lacking.append("red|green|blue")
                elif need == "display2":
                    if len(ops.display_channels(scene)) < 2:
                        lacking.append("two colour channels")
                elif not scene.has(need):
                    lacking.append(need)
            if lacking:
                missing[name] = lacking
        return missing

    def to_dict(self):
        return {
            "features": [[name, scale] for name, scale in self.features],
            "site_size": self.site_size,
            "ranges": {name: list(r) for name, r in sorted(self.ranges.items())},
            "scale_windows": {name: list(w) for name, w in sorted(self.scale_windows.items())},
            "variance_windows": dict(sorted(self.variance_windows.items())),
            "opening_size": self.opening_size,
            "median_size": self.median_size,
            "edge_threshold": self.edge_threshold,
            "edge_percentile": self.edge_percentile,
            "hog_cell": self.hog_cell,
            "hog_block": self.hog_block,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["features"] = tuple(tuple(f) for f in data["features"])
        return cls(**data)


def default_spec_for_channels(channels, names=VAIHINGEN_FEATURES, scales=(1, 2, 3), **kwargs):
    """Spec with every catalogue feature the channel set supports; others skipped with a warning."""
    blank = SceneData(scene_id="blank", channels={c: np.zeros((1, 1)) for c in channels})
    spec = FeatureSpec(features=parse_feature_list(names, scales), **kwargs)
    missing = spec.missing_channels(blank)
    for name, lacking in missing.items():
        logger.warning("Skipping feature '%s': missing %s", name, lacking)
    kept = tuple(name for name in spec.names if name not in missing)
    return FeatureSpec(features=parse_feature_list(kept, scales), **kwargs)


@dataclass
class FeatureCube:
    """Quantized feature vectors of all nodes, shape (node_height, node_width, n_features)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.ndim != 3:
            raise ConfigError(f"Feature cube must be 3-D, got shape {self.values.shape}")

    @property
    def node_height(self):
        return self.values.shape[0]

    @property
    def node_width(self):
        return self.values.shape[1]

    @property
    def node_shape(self):
        return self.values.shape[:2]

    @property
    def n_features(self):
        return self.values.shape[2]

    def flat(self):
        """(n_nodes, n_features) in row-major node order."""
        return self.values.reshape(-1, self.n_features)


class _FeatureGrids:
    """Lazily computed pixel grids of one scene, cached per feature and scale."""

    def __init__(self, scene, spec):
        self.scene = scene
        self.spec = spec
        self._base = {}
        self._scaled = {}
        self._hog = None

    def base(self, name):
        if name not in self._base:
            self._base[name] = self._compute(name)
        return self._base[name]

    def _compute(self, name):
        scene, spec = self.scene, self.spec
        if name == "int":
            return ops.compute_intensity(scene)
        if name == "sat":
            return ops.compute_saturation(scene)
        if name == "var_int":
            return ops.compute_local_variance(self.base("int"), spec.variance_windows["var_int"])
        if name == "var_sat":
            return ops.compute_local_variance(self.base("sat"), spec.variance_windows["var_sat"])
        if name == "var_grad":
            return ops.compute_gradient_variance(self.base("int"), spec.variance_windows["var_grad"])
        if name == "ndvi":
            return ops.compute_ndvi(scene)
        if name == "ndsm":
            return ops.compute_ndsm(scene, spec.opening_size, spec.median_size)
        if name == "dist":
            threshold = spec.edge_threshold
            if threshold is None:
                threshold = ops.edge_threshold_percentile([scene], spec.edge_percentile)
                logger.warning("No calibrated edge threshold, using this scene's percentile %.3f", threshold)
            return ops.distance_to_edges(ops.edge_map(self.base("int"), threshold))
        if name == "dsm_grad":
            return ops.compute_dsm_gradient(scene)
        if name == "y":
            return ops.compute_y_coordinate(scene)
        if name in HOG_FEATURES:
            if self._hog is None:
                self._hog = ops.hog_planes(self.base("int"), cell=spec.hog_cell, block=spec.hog_block, bins=HOG_BINS)
            return self._hog[HOG_FEATURES.index(name)]
        raise ConfigError(f"Unknown feature '{name}'")

    def at_scale(self, name, scale):
        if scale == 1:
            return self.base(name)
        if name not in self._scaled:
            windows = scale_windows_for(name, self.spec.scale_windows)
            self._scaled[name] = aggregate_multiscale(self.base(name), name, windows)
        return self._scaled[name][scale - 1]


def build_feature_cube(scene, spec):
    """Assemble the per-node byte vectors of ``scene`` in ``spec`` order.

    Scaling uses the fixed ranges of ``spec`` (never per-image statistics);
    the node value is the pixel value at the node centre.
    """
    missing = spec.missing_channels(scene)
    if missing:
        detail = ", ".join(f"{name}: {lacking}" for name, lacking in missing.items())
        raise ConfigError(f"Scene {scene.scene_id} cannot provide the requested features ({detail})")

    grids = _FeatureGrids(scene, spec)
    rows, cols = scene.node_centers()
    node_h, node_w = scene.node_shape
    values = np.empty((node_h, node_w, spec.n_features), dtype=np.uint8)
    for k, (name, scale) in enumerate(spec.features):
        grid = grids.at_scale(name, scale)
        low, high = spec.range_for(name)
        values[:, :, k] = quantize(grid[rows[:, None], cols[None, :]], low, high)
    return FeatureCube(values)
