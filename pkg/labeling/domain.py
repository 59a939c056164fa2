"""Class-label universes of the base and occlusion layers and their product set."""

from dataclasses import dataclass, field

import numpy as np

from utils.errors import ConfigError, DomainError

VOID = "void"

# Default display colours (BGR, as cv2 writes them) keyed by class name.
DEFAULT_PALETTE = {
    "asphalt": (128, 128, 128),
    "building": (0, 140, 255),
    "grass": (0, 200, 0),
    "agricultural": (160, 210, 230),
    "tree": (0, 100, 0),
    "car": (0, 0, 255),
    "void": (255, 255, 255),
    "road": (128, 128, 128),
    "sidewalk": (255, 0, 0),
    "store": (0, 200, 255),
    "sky": (255, 255, 0),
    "unknown": (0, 0, 0),
    "pedestrian": (255, 0, 255),
    "bicycle": (0, 255, 255),
}


@dataclass(frozen=True)
class LabelDomain:
    """Base classes Cᵇ, occlusion classes Cᵒ (``void`` first) and palettes.

    Indices are the internal currency; class names are case-sensitive.
    """

    base_classes: tuple
    occlusion_classes: tuple
    base_palette: tuple = field(default=None)
    occlusion_palette: tuple = field(default=None)

    def __post_init__(self):
        base = tuple(self.base_classes)
        occ = tuple(self.occlusion_classes)
        object.__setattr__(self, "base_classes", base)
        object.__setattr__(self, "occlusion_classes", occ)

        if len(base) < 1 or len(occ) < 1:
            raise ConfigError("Both layers need at least one class")
        if len(set(base)) != len(base) or len(set(occ)) != len(occ):
            raise ConfigError("Duplicate class name inside a layer")
        overlap = set(base) & set(occ)
        if overlap:
            raise ConfigError(f"Base and occlusion classes must be disjoint, shared: {sorted(overlap)}")
        if occ.count(VOID) != 1 or occ[0] != VOID:
            raise ConfigError(f"Occlusion classes must contain '{VOID}' exactly once, at index 0")

        object.__setattr__(self, "base_palette", self._palette(base, self.base_palette))
        object.__setattr__(self, "occlusion_palette", self._palette(occ, self.occlusion_palette))

    @staticmethod
    def _palette(names, colours):
        if colours is None:
            colours = [DEFAULT_PALETTE.get(name, (0, 0, 0)) for name in names]
        colours = tuple(tuple(int(v) for v in c) for c in colours)
        if len(colours) != len(names):
            raise ConfigError(f"Palette has {len(colours)} colours for {len(names)} classes")
        return colours

    @property
    def n_base(self):
        return len(self.base_classes)

    @property
    def n_occlusion(self):
        return len(self.occlusion_classes)

    @property
    def n_product(self):
        return self.n_base * self.n_occlusion

    def product_classes(self):
        """Names of Cⁱ in product-index order."""
        return tuple(f"{b}+{o}" for b in self.base_classes for o in self.occlusion_classes)

    def encode_product(self, base_idx, occ_idx):
        """Row-major product index ``base_idx * |Cᵒ| + occ_idx``.

        Works element-wise on integer arrays as well as scalars.
        """
        base_idx = np.asarray(base_idx)
        occ_idx = np.asarray(occ_idx)
        if np.any(base_idx < 0) or np.any(base_idx >= self.n_base):
            raise DomainError(f"Base class index out of range [0, {self.n_base})")
        if np.any(occ_idx < 0) or np.any(occ_idx >= self.n_occlusion):
            raise DomainError(f"Occlusion class index out of range [0, {self.n_occlusion})")
        prod = base_idx.astype(np.int64) * self.n_occlusion + occ_idx
        return int(prod) if prod.ndim == 0 else prod

    def decode_product(self, prod_idx):
        """Inverse of :meth:`encode_product`; returns ``(base_idx, occ_idx)``."""
        prod_idx = np.asarray(prod_idx)
        if np.any(prod_idx < 0) or np.any(prod_idx >= self.n_product):
            raise DomainError(f"Product class index out of range [0, {self.n_product})")
        base, occ = np.divmod(prod_idx.astype(np.int64), self.n_occlusion)
        if base.ndim == 0:
            return int(base), int(occ)
        return base, occ

    def class_index(self, layer, name):
        names = self.base_classes if layer == "base" else self.occlusion_classes
        if name not in names:
            raise ConfigError(f"Unknown {layer} class '{name}', expected one of {list(names)}")
        return names.index(name)

    def to_dict(self):
        return {
            "base_classes": list(self.base_classes),
            "occlusion_classes": list(self.occlusion_classes),
            "base_palette": [list(c) for c in self.base_palette],
            "occlusion_palette": [list(c) for c in self.occlusion_palette],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                base_classes=data["base_classes"],
                occlusion_classes=data["occlusion_classes"],
                base_palette=data.get("base_palette"),
                occlusion_palette=data.get("occlusion_palette"),
            )
        except KeyError as e:
            raise ConfigError(f"Label domain declaration is missing {e}")


def vaihingen_domain():
    """Cᵇ = {asp., bld., grass, agr.}, Cᵒ = {void, tree, car}."""
    return LabelDomain(
        base_classes=("asphalt", "building", "grass", "agricultural"),
        occlusion_classes=(VOID, "tree", "car"),
    )


@dataclass
class TwoLayerLabeling:
    """Base (xᵇ) and occlusion (xᵒ) label grids of identical shape (height, width)."""

    base: np.ndarray
    occlusion: np.ndarray

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=np.int64)
        self.occlusion = np.asarray(self.occlusion, dtype=np.int64)
        if self.base.ndim != 2 or self.base.shape != self.occlusion.shape:
            raise DomainError(
                f"Layer grids must be 2-D with identical shape, got {self.base.shape} and {self.occlusion.shape}"
            )

    @property
    def height(self):
        return self.base.shape[0]

    @property
    def width(self):
        return self.base.shape[1]

    @property
    def n_sites(self):
        return self.base.size

    def validate(self, domain, scene_id=None):
        """Raise DomainError when a label value is outside the domain."""
        for layer, grid, n in (("base", self.base, domain.n_base), ("occlusion", self.occlusion, domain.n_occlusion)):
            if grid.size and (grid.min() < 0 or grid.max() >= n):
                bad = int(grid.max()) if grid.max() >= n else int(grid.min())
                raise DomainError(f"{layer} label value {bad} outside [0, {n})", scene_id=scene_id)
        return self

    def layer(self, name):
        return self.base if name == "base" else self.occlusion

    def product(self, domain):
        return domain.encode_product(self.base, self.occlusion)

    def __eq__(self, other):
        if not isinstance(other, TwoLayerLabeling):
            return NotImplemented
        return np.array_equal(self.base, other.base) and np.array_equal(self.occlusion, other.occlusion)
