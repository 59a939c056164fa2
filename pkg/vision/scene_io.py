"""Scene data and the on-disk dataset layout.

Layout::

    <root>/manifest.yaml
    <root>/scenes/<id>/channels/<name>.png   8/16-bit single-channel images
    <root>/scenes/<id>/channels/dsm.npy      float32 height grid (metres)
    <root>/scenes/<id>/labels/base.png       8-bit class-index map (optional)
    <root>/scenes/<id>/labels/occlusion.png  8-bit class-index map (optional)
"""

import glob
import io
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field

import cv2
import numpy as np
import yaml

from labeling.domain import TwoLayerLabeling
from utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.yaml"
IMAGE_EXTENSIONS = (".png", ".tif", ".tiff")
GRID_EXTENSION = ".npy"


@dataclass
class SceneData:
    """Named scalar channel grids of one scene plus its node (site) size.

    Image channels are float32 in [0, 255] (16-bit inputs are rescaled);
    the ``dsm`` channel keeps its physical unit.
    """

    scene_id: str
    channels: dict
    site_size: int = 1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.channels:
            raise DataError("Scene has no channels", scene_id=self.scene_id)
        if int(self.site_size) < 1:
            raise ConfigError(f"site_size must be >= 1, got {self.site_size}")
        self.site_size = int(self.site_size)
        shapes = {name: np.shape(grid) for name, grid in self.channels.items()}
        if len(set(shapes.values())) != 1:
            raise DataError(f"Channel dimensions differ: {shapes}", scene_id=self.scene_id)
        if len(next(iter(shapes.values()))) != 2:
            raise DataError("Channels must be 2-D grids", scene_id=self.scene_id)
        self.channels = {name: np.asarray(grid, dtype=np.float32) for name, grid in self.channels.items()}

    @property
    def height_px(self):
        return next(iter(self.channels.values())).shape[0]

    @property
    def width_px(self):
        return next(iter(self.channels.values())).shape[1]

    @property
    def node_shape(self):
        """(node_height, node_width) = (⌈H/s⌉, ⌈W/s⌉)."""
        s = self.site_size
        return math.ceil(self.height_px / s), math.ceil(self.width_px / s)

    def node_centers(self):
        """Pixel row/column index of the centre of every node."""
        s = self.site_size
        node_h, node_w = self.node_shape
        rows = np.minimum(np.arange(node_h) * s + s // 2, self.height_px - 1)
        cols = np.minimum(np.arange(node_w) * s + s // 2, self.width_px - 1)
        return rows, cols

    def has(self, name):
        return name in self.channels


@dataclass
class LabeledScene:
    """A scene and its optional node-level two-layer reference."""

    scene: SceneData
    labeling: TwoLayerLabeling = None

    @property
    def scene_id(self):
        return self.scene.scene_id


def node_labels_from_pixels(grid, scene):
    """Sample a pixel-resolution label map at node centres (identity for node-sized maps)."""
    grid = np.asarray(grid)
    if grid.shape == scene.node_shape:
        return grid
    if grid.shape != (scene.height_px, scene.width_px):
        raise DataError(
            f"Label map shape {grid.shape} matches neither the pixel grid "
            f"{(scene.height_px, scene.width_px)} nor the node grid {scene.node_shape}",
            scene_id=scene.scene_id,
        )
    rows, cols = scene.node_centers()
    return grid[rows[:, None], cols[None, :]]


class DatasetReader:
    """Reads scenes from a dataset root laid out as described in the module docstring."""

    def __init__(self, root, domain=None, site_size=None):
        """
        Args:
            root (str): Dataset root directory.
            domain (LabelDomain): Used to validate label values, optional.
            site_size (int): Overrides the manifest's node size when given.
        """
        if not os.path.isdir(root):
            raise DataError(f"Dataset root {root} not found")
        self.root = root
        self.domain = domain
        self.manifest = self._load_manifest(os.path.join(root, MANIFEST_NAME))
        self.site_size = int(site_size or self.manifest.get("site_size", 1))

    def _load_manifest(self, path):
        """Load the dataset manifest; a directory listing stands in when it is absent."""
        if os.path.exists(path):
            with open(path) as f:
                return yaml.safe_load(f) or {}
        logger.warning("Manifest %s not found, listing scene directories instead", path)
        return {}

    def scene_ids(self):
        ids = self.manifest.get("scenes")
        if ids:
            return [str(i) for i in ids]
        scene_root = os.path.join(self.root, "scenes")
        if not os.path.isdir(scene_root):
            raise DataError(f"No scenes/ directory under {self.root}")
        return sorted(d for d in os.listdir(scene_root) if os.path.isdir(os.path.join(scene_root, d)))

    def read_scene(self, scene_id):
        """Read channels and (when present) labels of one scene.

        Returns:
            LabeledScene: ``labeling`` is None for inference-only scenes.
        """
        scene_dir = os.path.join(self.root, "scenes", scene_id)
        if not os.path.isdir(scene_dir):
            raise DataError(f"Scene directory {scene_dir} not found", scene_id=scene_id)

        wanted = self.manifest.get("channels")
        channels = {}
        for path in sorted(glob.glob(os.path.join(scene_dir, "channels", "*"))):
            name, ext = os.path.splitext(os.path.basename(path))
            if wanted and name not in wanted:
                continue
            channels[name] = _read_channel(path, ext.lower(), scene_id)
        missing = [name for name in (wanted or []) if name not in channels]
        if missing:
            raise DataError(f"Missing channel file(s): {missing}", scene_id=scene_id)
        scene = SceneData(scene_id=scene_id, channels=channels, site_size=self.site_size)

        labels_dir = os.path.join(scene_dir, "labels")
        base_path = os.path.join(labels_dir, "base.png")
        occ_path = os.path.join(labels_dir, "occlusion.png")
        if not (os.path.exists(base_path) and os.path.exists(occ_path)):
            return LabeledScene(scene=scene)

        base = node_labels_from_pixels(_read_index_map(base_path, scene_id), scene)
        occ = node_labels_from_pixels(_read_index_map(occ_path, scene_id), scene)
        try:
            labeling = TwoLayerLabeling(base=base, occlusion=occ)
        except DataError as e:
            raise DataError(str(e), scene_id=scene_id)
        if self.domain is not None:
            labeling.validate(self.domain, scene_id=scene_id)
        return LabeledScene(scene=scene, labeling=labeling)


def load_dataset(root, domain=None, scene_ids=None, site_size=None):
    """Load every scene (or the listed ones) of a dataset root.

    Returns:
        list[LabeledScene]
    """
    reader = DatasetReader(root, domain=domain, site_size=site_size)
    ids = scene_ids if scene_ids is not None else reader.scene_ids()
    return [reader.read_scene(scene_id) for scene_id in ids]


def load_manifest(root):
    path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(path):
        return {}
    with open(path) as f:
        return yaml.safe_load(f) or {}


def _read_channel(path, ext, scene_id):
    if ext == GRID_EXTENSION:
        try:
            return np.load(path, allow_pickle=False).astype(np.float32)
        except (OSError, ValueError) as e:
            raise DataError(f"Unreadable grid {path}: {e}", scene_id=scene_id)
    if ext not in IMAGE_EXTENSIONS:
        raise DataError(f"Unsupported channel file {path}", scene_id=scene_id)
    image = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if image is None:
        raise DataError(f"Unreadable image {path}", scene_id=scene_id)
    if image.ndim != 2:
        raise DataError(f"Channel image {path} must be single-channel", scene_id=scene_id)
    if image.dtype == np.uint16:
        return image.astype(np.float32) / 257.0
    if image.dtype != np.uint8:
        raise DataError(f"Channel image {path} must be 8- or 16-bit, got {image.dtype}", scene_id=scene_id)
    return image.astype(np.float32)


def _read_index_map(path, scene_id):
    image = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if image is None or image.ndim != 2 or image.dtype != np.uint8:
        raise DataError(f"Label map {path} must be a single-channel 8-bit image", scene_id=scene_id)
    return image.astype(np.int64)


# --- writers -------------------------------------------------------------------------

def atomic_write_bytes(path, data):
    """Write ``data`` to a temporary sibling and rename it over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=f".{os.path.basename(path)}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp_path, 0o644)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def encode_png(image):
    ok, buffer = cv2.imencode(".png", image)
    if not ok:
        raise DataError("PNG encoding failed")
    return buffer.tobytes()


def encode_grid(grid):
    buffer = io.BytesIO()
    np.save(buffer, np.asarray(grid, dtype=np.float32), allow_pickle=False)
    return buffer.getvalue()


def write_index_map(path, grid):
    grid = np.asarray(grid)
    if grid.size and (grid.min() < 0 or grid.max() > 255):
        raise DataError(f"Label values must fit into 8 bits to be written to {path}")
    atomic_write_bytes(path, encode_png(grid.astype(np.uint8)))


def write_scene(root, scene, labeling=None):
    """Write one scene (and its reference) in the dataset layout."""
    scene_dir = os.path.join(root, "scenes", scene.scene_id)
    for name, grid in sorted(scene.channels.items()):
        if name == "dsm":
            atomic_write_bytes(os.path.join(scene_dir, "channels", "dsm.npy"), encode_grid(grid))
        else:
            image = np.clip(np.rint(grid), 0, 255).astype(np.uint8)
            atomic_write_bytes(os.path.join(scene_dir, "channels", f"{name}.png"), encode_png(image))
    if labeling is not None:
        write_index_map(os.path.join(scene_dir, "labels", "base.png"), labeling.base)
        write_index_map(os.path.join(scene_dir, "labels", "occlusion.png"), labeling.occlusion)
    return scene_dir


def write_manifest(root, manifest):
    text = yaml.safe_dump(manifest, sort_keys=True, default_flow_style=None)
    atomic_write_bytes(os.path.join(root, MANIFEST_NAME), text.encode("utf-8"))
