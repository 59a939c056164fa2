"""Per-pixel feature operators.

Every operator returns a float64 grid with the scene's pixel dimensions. Operators
whose natural output range is [0, 255] (int, sat, ndvi, y) already return values on
that scale; the others keep physical units and are scaled by the feature cube.
All window operations clamp coordinates at the image border (``mode="nearest"``).
"""

import logging

import cv2
import numpy as np
from scipy import ndimage
from skimage.feature import hog

from utils.errors import ConfigError
from utils.validation import check_odd_window

logger = logging.getLogger(__name__)

COLOR_CHANNELS = ("red", "green", "blue")
INFRARED_CHANNEL = "nir"
DSM_CHANNEL = "dsm"

# Distance reported when an image has no edge pixel at all.
NO_EDGE_DISTANCE = float(np.finfo(np.float32).max)


def _require(scene, names, feature):
    missing = [name for name in names if not scene.has(name)]
    if missing:
        raise ConfigError(f"Feature '{feature}' needs channel(s) {missing} missing from scene {scene.scene_id}")


def compute_intensity(scene):
    """Mean of the non-infrared colour channels."""
    planes = [scene.channels[name] for name in COLOR_CHANNELS if scene.has(name)]
    if not planes:
        raise ConfigError(f"Intensity needs at least one of {COLOR_CHANNELS} in scene {scene.scene_id}")
    return np.mean(np.stack(planes).astype(np.float64), axis=0)


def display_channels(scene):
    """Channels forming the displayed colour image (CIR false colour when there is no blue)."""
    if scene.has("blue"):
        order = ("red", "green", "blue")
    else:
        order = (INFRARED_CHANNEL, "red", "green")
    return [name for name in order if scene.has(name)]


def compute_saturation(scene):
    """Saturation of the lightness/hue/saturation transform, scaled to [0, 255]."""
    names = display_channels(scene)
    if len(names) < 2:
        raise ConfigError(f"Saturation needs at least two colour channels in scene {scene.scene_id}")
    planes = [scene.channels[name] / 255.0 for name in names]
    if len(planes) == 2:
        planes.append(np.zeros_like(planes[0]))
    rgb = np.clip(np.stack(planes, axis=-1), 0.0, 1.0).astype(np.float32)
    hls = cv2.cvtColor(rgb, cv2.COLOR_RGB2HLS)
    return hls[..., 2].astype(np.float64) * 255.0


def compute_local_variance(grid, window):
    """Sample variance over a ``window × window`` neighbourhood of every pixel."""
    window = check_odd_window("variance", window)
    grid = np.asarray(grid, dtype=np.float64)
    if window > min(grid.shape):
        raise ConfigError(f"Variance window {window} is larger than the image {grid.shape}")
    mean = ndimage.uniform_filter(grid, size=window, mode="nearest")
    mean_sq = ndimage.uniform_filter(grid * grid, size=window, mode="nearest")
    n = window * window
    return np.clip((mean_sq - mean * mean) * n / (n - 1), 0.0, None)


def gradient_magnitude(grid):
    """Central differences inside, one-sided differences at the border."""
    gy, gx = np.gradient(np.asarray(grid, dtype=np.float64))
    return np.hypot(gx, gy)


def compute_ndvi(scene):
    """(NIR − R)/(NIR + R) mapped from [−1, 1] to [0, 255]; 127.5 where NIR + R = 0."""
    _require(scene, (INFRARED_CHANNEL, "red"), "ndvi")
    nir = scene.channels[INFRARED_CHANNEL].astype(np.float64)
    red = scene.channels["red"].astype(np.float64)
    total = nir + red
    raw = np.divide(nir - red, total, out=np.zeros_like(total), where=total != 0)
    return (raw + 1.0) * 127.5


def compute_dtm(dsm, opening_size, median_size):
    """Terrain model: grey opening of the DSM followed by a median filter."""
    opened = ndimage.grey_opening(np.asarray(dsm, dtype=np.float64), size=(opening_size, opening_size), mode="nearest")
    return ndimage.median_filter(opened, size=median_size, mode="nearest")


def compute_ndsm(scene, opening_size, median_size):
    """Height above terrain, DSM − DTM, clamped at 0."""
    _require(scene, (DSM_CHANNEL,), "ndsm")
    dsm = scene.channels[DSM_CHANNEL].astype(np.float64)
    return np.clip(dsm - compute_dtm(dsm, opening_size, median_size), 0.0, None)


def edge_map(intensity, gradient_threshold):
    return gradient_magnitude(intensity) > gradient_threshold


def distance_to_edges(edges):
    """Euclidean distance of every pixel to its nearest edge pixel."""
    if not edges.any():
        return np.full(edges.shape, NO_EDGE_DISTANCE)
    return ndimage.distance_transform_edt(~edges)


def compute_dist_to_edge(scene, gradient_threshold):
    return distance_to_edges(edge_map(compute_intensity(scene), gradient_threshold))


def edge_threshold_percentile(scenes, percentile=85.0):
    """Percentile of intensity gradient magnitudes pooled over ``scenes``."""
    magnitudes = np.concatenate([gradient_magnitude(compute_intensity(s)).ravel() for s in scenes])
    return float(np.percentile(magnitudes, percentile))


def compute_dsm_gradient(scene):
    _require(scene, (DSM_CHANNEL,), "dsm_grad")
    return gradient_magnitude(scene.channels[DSM_CHANNEL])


def compute_gradient_variance(intensity, window):
    """Local variance of the intensity gradient magnitude."""
    return compute_local_variance(gradient_magnitude(intensity), window)


def hog_planes(intensity, cell=7, block=2, bins=9):
    """Block-normalised, unsigned orientation histograms spread back to pixels.

    Orientations are measured from the vertical image axis. Each cell's value is
    the mean over the blocks that contain it; pixels in the partial border cells
    take the value of the nearest full cell.

    Returns:
        ndarray: shape (bins, height, width)
    """
    intensity = np.asarray(intensity, dtype=np.float64)
    height, width = intensity.shape
    planes = np.zeros((bins, height, width))
    # skimage measures angles from the column axis, so work on the transpose
    image = np.ascontiguousarray(intensity.T)
    n_rows, n_cols = image.shape[0] // cell, image.shape[1] // cell
    if n_rows < block or n_cols < block:
        logger.warning("Image %s too small for %dx%d HOG blocks, HOG features are zero", intensity.shape, block, block)
        return planes

    blocks = hog(
        image,
        orientations=bins,
        pixels_per_cell=(cell, cell),
        cells_per_block=(block, block),
        block_norm="L2",
        feature_vector=False,
    )
    n_block_rows, n_block_cols = blocks.shape[:2]
    sums = np.zeros((n_rows, n_cols, bins))
    counts = np.zeros((n_rows, n_cols, 1))
    for dr in range(block):
        for dc in range(block):
            sums[dr:dr + n_block_rows, dc:dc + n_block_cols] += blocks[:, :, dr, dc]
            counts[dr:dr + n_block_rows, dc:dc + n_block_cols] += 1
    cells = (sums / np.maximum(counts, 1)).transpose(1, 0, 2)

    rows = np.minimum(np.arange(height) // cell, cells.shape[0] - 1)
    cols = np.minimum(np.arange(width) // cell, cells.shape[1] - 1)
    return np.moveaxis(cells[rows[:, None], cols[None, :]], -1, 0)


def compute_hog(scene, cell=7, block=2, bins=9):
    """Nine HOG planes HOG₀..HOG₈ of the intensity image."""
    return hog_planes(compute_intensity(scene), cell=cell, block=block, bins=bins)


def compute_y_coordinate(scene):
    """Node row index scaled linearly to [0, 255], expanded to pixels."""
    node_h, _ = scene.node_shape
    node_rows = np.arange(scene.height_px) // scene.site_size
    scaled = node_rows * 255.0 / (node_h - 1) if node_h > 1 else np.zeros(scene.height_px)
    return np.repeat(scaled[:, None], scene.width_px, axis=1)
