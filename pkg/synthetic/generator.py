"""Synthetic two-layer scenes with controllable occlusion.

A scene is painted in three steps: a base layout (grass/agricultural background,
buildings, roads), occluders on top of it (tree discs, car rectangles) and the
rendered sensor channels, where an occluded site shows the occluder's appearance.
The reference keeps the hidden base label under every occluder.
"""

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import yaml
from joblib import Parallel, delayed
from scipy import ndimage

from labeling.domain import VOID, TwoLayerLabeling, vaihingen_domain
from training.pipeline import make_split_plan
from utils.errors import ConfigError
from utils.validation import check_range
from vision.scene_io import LabeledScene, SceneData, write_manifest, write_scene

logger = logging.getLogger(__name__)

MIN_SUITE_SIZE = 12
DEFAULT_RECIPE_PATH = os.path.abspath(os.path.join(os.path.dirname(__file__), "../config/synthetic_recipe.yaml"))


@dataclass
class OccluderSpec:
    """Placement parameters of one occluder class.

    ``covers`` weights the base classes an occluder may be placed over; a base
    class without a weight is never covered.
    """

    target_fraction: float
    size: tuple
    covers: dict
    shape: str = "disc"

    def __post_init__(self):
        check_range("target_fraction", self.target_fraction, low=0.0, high=1.0, high_open=True)
        if self.shape not in ("disc", "rectangle"):
            raise ConfigError(f"Occluder shape must be 'disc' or 'rectangle', got '{self.shape}'")
        self.size = tuple(int(v) for v in self.size)
        if len(self.size) != 2 or not 1 <= self.size[0] <= self.size[1]:
            raise ConfigError(f"Occluder size must be [min, max] with 1 <= min <= max, got {self.size}")
        if any(w < 0 for w in self.covers.values()) or not any(w > 0 for w in self.covers.values()):
            raise ConfigError("Occluder 'covers' weights must be >= 0 with at least one positive")


@dataclass
class SceneRecipe:
    """Grid size, layout, occluder and appearance parameters of generated scenes."""

    height: int = 128
    width: int = 128
    seed: int = 0
    channels: tuple = ("red", "green", "nir")
    agricultural_fraction: float = 0.35
    n_roads: tuple = (1, 3)
    road_width: tuple = (5, 9)
    n_buildings: tuple = (3, 7)
    building_size: tuple = (10, 26)
    occluders: dict = field(default_factory=dict)
    appearance: dict = field(default_factory=dict)
    heights: dict = field(default_factory=dict)
    terrain_amplitude: float = 2.0
    terrain_smoothing: float = 16.0
    max_attempts: int = 5000

    def __post_init__(self):
        self.domain = vaihingen_domain()
        check_range("height", self.height, low=8)
        check_range("width", self.width, low=8)
        check_range("agricultural_fraction", self.agricultural_fraction, low=0.0, high=1.0)
        self.channels = tuple(self.channels)
        self.occluders = {name: o if isinstance(o, OccluderSpec) else OccluderSpec(**o)
                          for name, o in self.occluders.items()}
        for name, spec in self.occluders.items():
            self.domain.class_index("occlusion", name)
            for base in spec.covers:
                self.domain.class_index("base", base)
        visible = self.domain.base_classes + tuple(self.occluders)
        for name in visible:
            if name not in self.appearance:
                raise ConfigError(f"No appearance model for class '{name}'")
            for channel in self.channels:
                mean, sigma = self.appearance[name][channel]
                check_range(f"appearance.{name}.{channel} mean", mean, low=0.0, high=255.0)
                check_range(f"appearance.{name}.{channel} sigma", sigma, low=0.0)
        if sum(o.target_fraction for o in self.occluders.values()) >= 1.0:
            raise ConfigError("Occlusion targets must sum to less than 1")

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"Bad scene recipe: {e}")

    def with_targets(self, **targets):
        """Copy with other occlusion targets, e.g. ``with_targets(tree=0.0, car=0.0)``."""
        data = {k: v for k, v in self.__dict__.items() if k != "domain"}
        data["occluders"] = {
            name: OccluderSpec(targets.get(name, o.target_fraction), o.size, dict(o.covers), o.shape)
            for name, o in self.occluders.items()
        }
        return SceneRecipe(**data)


def load_recipe(path=None):
    path = path or DEFAULT_RECIPE_PATH
    if not os.path.exists(path):
        raise ConfigError(f"Recipe file {path} not found")
    with open(path) as f:
        return SceneRecipe.from_dict(yaml.safe_load(f) or {})


def _randint(rng, bounds):
    low, high = bounds
    return int(rng.integers(int(low), int(high) + 1))


def paint_base_layout(recipe, rng):
    """Base class grid: background split by a random line, then buildings, then roads."""
    d = recipe.domain
    h, w = recipe.height, recipe.width
    rows, cols = np.mgrid[0:h, 0:w]
    angle = rng.uniform(0.0, np.pi)
    projection = rows * np.sin(angle) + cols * np.cos(angle)
    cut = np.quantile(projection, recipe.agricultural_fraction) if recipe.agricultural_fraction > 0 else -np.inf
    base = np.where(projection <= cut, d.class_index("base", "agricultural"), d.class_index("base", "grass"))

    building = d.class_index("base", "building")
    for _ in range(_randint(rng, recipe.n_buildings)):
        bh, bw = _randint(rng, recipe.building_size), _randint(rng, recipe.building_size)
        r0, c0 = int(rng.integers(0, max(h - bh, 1))), int(rng.integers(0, max(w - bw, 1)))
        base[r0:r0 + bh, c0:c0 + bw] = building

    asphalt = d.class_index("base", "asphalt")
    for _ in range(_randint(rng, recipe.n_roads)):
        width = _randint(rng, recipe.road_width)
        if rng.random() < 0.5:
            r0 = int(rng.integers(0, max(h - width, 1)))
            base[r0:r0 + width, :] = asphalt
        else:
            c0 = int(rng.integers(0, max(w - width, 1)))
            base[:, c0:c0 + width] = asphalt
    return base.astype(np.int64)


def _footprint(spec, rng, center, shape):
    h, w = shape
    r, c = center
    if spec.shape == "disc":
        radius = _randint(rng, spec.size)
        rows, cols = np.ogrid[0:h, 0:w]
        return (rows - r) ** 2 + (cols - c) ** 2 <= radius * radius, False
    length, breadth = _randint(rng, spec.size), max(1, _randint(rng, spec.size) // 2)
    if rng.random() < 0.5:
        length, breadth = breadth, length
    mask = np.zeros(shape, dtype=bool)
    r0, c0 = r - length // 2, c - breadth // 2
    if r0 < 0 or c0 < 0 or r0 + length > h or c0 + breadth > w:
        return mask, True
    mask[r0:r0 + length, c0:c0 + breadth] = True
    return mask, True


def place_occluders(recipe, base, rng):
    """Occlusion class grid by rejection sampling against each occluder's ``covers`` weights.

    Discs are clipped to coverable sites; rectangles must lie entirely on coverable,
    still unoccluded sites.
    """
    d = recipe.domain
    occlusion = np.zeros_like(base)
    n_sites = base.size
    for name, spec in recipe.occluders.items():
        index = d.class_index("occlusion", name)
        weights = np.zeros(d.n_base)
        for base_name, weight in spec.covers.items():
            weights[d.class_index("base", base_name)] = weight
        weights = weights / weights.max()
        coverable = weights[base] > 0
        placed = 0
        attempts = 0
        while placed < spec.target_fraction * n_sites and attempts < recipe.max_attempts:
            attempts += 1
            center = (int(rng.integers(0, base.shape[0])), int(rng.integers(0, base.shape[1])))
            if rng.random() >= weights[base[center]]:
                continue
            mask, strict = _footprint(spec, rng, center, base.shape)
            free = mask & coverable & (occlusion == 0)
            if strict and (not mask.any() or np.count_nonzero(free) != np.count_nonzero(mask)):
                continue
            occlusion[free] = index
            placed += int(np.count_nonzero(free))
        achieved = placed / n_sites
        if achieved < spec.target_fraction:
            logger.warning(
                "Occluder '%s': target fraction %.3f not reached after %d attempts, achieved %.3f",
                name, spec.target_fraction, attempts, achieved,
            )
    return occlusion


def render_channels(recipe, labeling, rng):
    """Gaussian appearance of the visible class per channel, rounded to 8-bit values."""
    d = recipe.domain
    visible_names = np.array(d.base_classes, dtype=object)[labeling.base]
    occluded = labeling.occlusion != d.occlusion_classes.index(VOID)
    visible_names[occluded] = np.array(d.occlusion_classes, dtype=object)[labeling.occlusion[occluded]]
    channels = {}
    for channel in recipe.channels:
        image = np.zeros(labeling.base.shape)
        for name in np.unique(visible_names):
            mask = visible_names == name
            mean, sigma = recipe.appearance[name][channel]
            image[mask] = rng.normal(mean, sigma, size=int(mask.sum()))
        channels[channel] = np.clip(np.rint(image), 0, 255).astype(np.float32)
    return channels


def render_dsm(recipe, labeling, rng):
    """Smooth terrain plus the height of the base object plus the occluder height."""
    d = recipe.domain
    shape = labeling.base.shape
    terrain = ndimage.gaussian_filter(rng.normal(size=shape), recipe.terrain_smoothing, mode="nearest")
    span = terrain.max() - terrain.min()
    terrain = (terrain - terrain.min()) / span * recipe.terrain_amplitude if span > 0 else np.zeros(shape)
    dsm = terrain.copy()
    for layer, names in (("base", d.base_classes), ("occlusion", d.occlusion_classes)):
        grid = labeling.layer(layer)
        for k, name in enumerate(names):
            if name not in recipe.heights:
                continue
            mask = grid == k
            mean, sigma = recipe.heights[name]
            dsm[mask] += rng.normal(mean, sigma, size=int(mask.sum()))
    return dsm.astype(np.float32)


def generate(recipe, seed=None, scene_id="scene"):
    """One scene and its full two-layer reference.

    Returns:
        tuple: (SceneData, TwoLayerLabeling)
    """
    rng = np.random.default_rng(recipe.seed if seed is None else seed)
    base = paint_base_layout(recipe, rng)
    occlusion = place_occluders(recipe, base, rng)
    labeling = TwoLayerLabeling(base=base, occlusion=occlusion)
    channels = render_channels(recipe, labeling, rng)
    if recipe.heights:
        channels["dsm"] = render_dsm(recipe, labeling, rng)
    return SceneData(scene_id=scene_id, channels=channels, site_size=1), labeling


def occlusion_fractions(labeling, domain):
    """Share of sites covered by each occluder class and in total."""
    n = labeling.n_sites
    counts = np.bincount(labeling.occlusion.ravel(), minlength=domain.n_occlusion)
    fractions = {name: float(counts[k] / n) for k, name in enumerate(domain.occlusion_classes) if name != VOID}
    fractions["total"] = float(1.0 - counts[0] / n)
    return fractions


def generate_suite(recipe, n_scenes, seed=0, fractions=(0.5, 0.083, 0.417), n_jobs=1):
    """``n_scenes`` scenes from derived seeds plus their split plan.

    Returns:
        tuple: (list[LabeledScene], SplitPlan)
    """
    if n_scenes < MIN_SUITE_SIZE:
        raise ConfigError(f"A suite needs at least {MIN_SUITE_SIZE} scenes to fill every split, got {n_scenes}")
    children = np.random.SeedSequence(seed).spawn(n_scenes)
    ids = [f"scene_{k:03d}" for k in range(n_scenes)]
    generated = Parallel(n_jobs=n_jobs)(
        delayed(generate)(recipe, np.random.default_rng(child), scene_id)
        for child, scene_id in zip(children, ids)
    )
    scenes = [LabeledScene(scene=scene, labeling=labeling) for scene, labeling in generated]
    logger.info("Generated %d synthetic scenes (seed %d)", n_scenes, seed)
    return scenes, make_split_plan(ids, fractions, seed)


def write_suite(root, scenes, split, recipe, seed=0):
    """Write scenes in the dataset layout plus a manifest with split and occlusion fractions."""
    for s in scenes:
        write_scene(root, s.scene, s.labeling)
    first = scenes[0].scene
    manifest = {
        "channels": sorted(first.channels),
        "site_size": first.site_size,
        "domain": recipe.domain.to_dict(),
        "scenes": [s.scene_id for s in scenes],
        "split": split.to_dict(),
        "seed": int(seed),
        "occlusion_fractions": {s.scene_id: occlusion_fractions(s.labeling, recipe.domain) for s in scenes},
    }
    write_manifest(root, manifest)
    return root
