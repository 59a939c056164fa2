"""Palette renderings of label maps."""

import numpy as np

from labeling.domain import VOID


def render_layer(grid, palette):
    """Map a class-index grid to a BGR image using ``palette[index]``."""
    lut = np.asarray(palette, dtype=np.uint8)
    return lut[np.asarray(grid, dtype=np.int64)]


def render_visibility(labeling, domain):
    """What the sensor sees: the occluder colour where occluded, the base colour elsewhere."""
    base = render_layer(labeling.base, domain.base_palette)
    occ = render_layer(labeling.occlusion, domain.occlusion_palette)
    occluded = labeling.occlusion != domain.occlusion_classes.index(VOID)
    return np.where(occluded[..., None], occ, base)


def render_labeling(labeling, domain):
    """Renderings keyed by output name: base, occlusion and visibility."""
    return {
        "base": render_layer(labeling.base, domain.base_palette),
        "occlusion": render_layer(labeling.occlusion, domain.occlusion_palette),
        "visibility": render_visibility(labeling, domain),
    }
