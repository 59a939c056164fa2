"""Association, within-level and inter-level potentials, all in the log domain."""

import math
from dataclasses import dataclass

import numpy as np

from forest.random_forest import predict_distribution
from utils.errors import ConfigError, DataError, DomainError

PROBABILITY_FLOOR = 1e-6
LAPLACE_SMOOTHING = 1.0


@dataclass(frozen=True)
class ThetaParams:
    """θ₁..θ₅ exponent weights, θ₆ diagonal boost and θ₇ contrast decay."""

    base_association: float = 1.0
    occlusion_association: float = 1.0
    base_within: float = 1.0
    occlusion_within: float = 1.0
    inter_level: float = 1.0
    diagonal_boost: float = 1.0
    contrast_decay: float = 0.01

    def __post_init__(self):
        weights = self.as_vector()
        if any(not math.isfinite(v) for v in weights):
            raise ConfigError(f"θ must be finite, got {weights}")
        if any(v < 0 for v in weights[:5]):
            raise ConfigError(f"θ1..θ5 must be >= 0, got {weights[:5]}")
        if self.diagonal_boost <= 0:
            raise ConfigError(f"θ6 must be > 0, got {self.diagonal_boost}")
        if self.contrast_decay < 0:
            raise ConfigError(f"θ7 must be >= 0, got {self.contrast_decay}")

    def as_vector(self):
        return (
            float(self.base_association), float(self.occlusion_association), float(self.base_within),
            float(self.occlusion_within), float(self.inter_level), float(self.diagonal_boost),
            float(self.contrast_decay),
        )

    @classmethod
    def from_vector(cls, values):
        values = [float(v) for v in values]
        if len(values) != 7:
            raise ConfigError(f"θ needs 7 components, got {len(values)}")
        return cls(*values)

    def replace(self, **changes):
        data = dict(zip(self.__dataclass_fields__, self.as_vector()))
        data.update(changes)
        return ThetaParams(**data)


def floored_log(p, floor=PROBABILITY_FLOOR):
    return np.log(np.maximum(p, floor))


def association_potential(forest, features, floor=PROBABILITY_FLOOR):
    """log φ: floored log of the forest vote fractions."""
    return floored_log(predict_distribution(forest, features), floor)


def inter_level_potential(product_forest, features, domain, floor=PROBABILITY_FLOOR):
    """log ξ as a (…, |Cᵇ|, |Cᵒ|) table; the product index is row-major over (base, occlusion)."""
    if product_forest.n_classes != domain.n_product:
        raise ConfigError(
            f"Product forest has {product_forest.n_classes} classes, the domain needs {domain.n_product}"
        )
    dist = predict_distribution(product_forest, features)
    table = dist.reshape(dist.shape[:-1] + (domain.n_base, domain.n_occlusion))
    return floored_log(table, floor)


def row_scale(counts):
    """Divide every row by its maximum; all-zero rows stay zero."""
    counts = np.asarray(counts, dtype=np.float64)
    row_max = counts.max(axis=1, keepdims=True)
    return np.divide(counts, row_max, out=np.zeros_like(counts), where=row_max > 0)


@dataclass
class CooccurrenceTable:
    """Raw neighbour co-occurrence counts h′ and the row-scaled histogram h."""

    layer: str
    counts: np.ndarray
    scaled: np.ndarray
    smoothing: float = LAPLACE_SMOOTHING

    @property
    def n_classes(self):
        return self.counts.shape[0]


def count_cooccurrences(grid, n_classes):
    """Ordered 4-neighbour pair counts of one label grid; each neighbour pair counts both ways."""
    grid = np.asarray(grid, dtype=np.int64)
    counts = np.zeros(n_classes * n_classes, dtype=np.int64)
    for a, b in ((grid[:, :-1], grid[:, 1:]), (grid[:-1, :], grid[1:, :])):
        a, b = a.ravel(), b.ravel()
        counts += np.bincount(a * n_classes + b, minlength=counts.size)
        counts += np.bincount(b * n_classes + a, minlength=counts.size)
    return counts.reshape(n_classes, n_classes)


def fit_cooccurrence(labelings, n_classes, layer="base", smoothing=LAPLACE_SMOOTHING):
    """Accumulate h′ over all training grids, add ``smoothing`` to every count, row-scale."""
    labelings = list(labelings)
    if not labelings:
        raise DataError(f"No training labelings to fit the {layer} co-occurrence table")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for grid in labelings:
        grid = np.asarray(grid)
        if grid.size and (grid.min() < 0 or grid.max() >= n_classes):
            raise DomainError(f"{layer} labels outside [0, {n_classes})")
        counts += count_cooccurrences(grid, n_classes)
    return CooccurrenceTable(layer=layer, counts=counts, scaled=row_scale(counts + smoothing), smoothing=smoothing)


def feature_distance(f_i, f_j):
    """Euclidean distance of two byte feature vectors, computed in float."""
    f_i = np.asarray(f_i, dtype=np.float64)
    f_j = np.asarray(f_j, dtype=np.float64)
    if f_i.shape != f_j.shape:
        raise DomainError(f"Feature vectors differ in shape: {f_i.shape} vs {f_j.shape}")
    return float(np.sqrt(np.sum((f_i - f_j) ** 2)))


def neighbour_sq_distances(cube):
    """Squared feature distances d² of horizontal (H, W-1) and vertical (H-1, W) neighbours."""
    values = cube.values.astype(np.float64)
    horizontal = np.sum((values[:, 1:] - values[:, :-1]) ** 2, axis=-1)
    vertical = np.sum((values[1:, :] - values[:-1, :]) ** 2, axis=-1)
    return horizontal, vertical


def within_level_potential(table, c, c2, d_ij, theta6, theta7, floor=PROBABILITY_FLOOR):
    """log ψ(c, c′) for one edge: θ₆·exp(−θ₇·d²)·h(c, c) on the diagonal, h(c, c′) elsewhere."""
    n = table.n_classes
    if not (0 <= c < n and 0 <= c2 < n):
        raise DomainError(f"{table.layer} class pair ({c}, {c2}) outside [0, {n})")
    h = float(table.scaled[c, c2])
    value = theta6 * math.exp(-theta7 * d_ij * d_ij) * h if c == c2 else h
    return math.log(max(value, floor))


def within_level_tables(table, sq_distances, theta6, theta7, floor=PROBABILITY_FLOOR):
    """log ψ tables of many edges at once, shape sq_distances.shape + (C, C)."""
    h = table.scaled
    n = h.shape[0]
    out = np.broadcast_to(floored_log(h, floor), np.shape(sq_distances) + (n, n)).copy()
    diagonal = theta6 * np.exp(-theta7 * np.asarray(sq_distances))[..., None] * np.diag(h)
    out[..., np.arange(n), np.arange(n)] = floored_log(diagonal, floor)
    return out


@dataclass
class NodePotentials:
    """log φᵇ (H, W, |Cᵇ|), log φᵒ (H, W, |Cᵒ|) and log ξ (H, W, |Cᵇ|, |Cᵒ|) or None."""

    base: np.ndarray
    occlusion: np.ndarray
    inter: np.ndarray = None

    def __post_init__(self):
        for name in ("base", "occlusion", "inter"):
            value = getattr(self, name)
            if value is not None and not np.all(np.isfinite(value)):
                raise DomainError(f"Non-finite {name} log-potential")

    @property
    def node_shape(self):
        return self.base.shape[:2]


def compute_node_potentials(cube, base_forest, occlusion_forest, product_forest=None, domain=None,
                            floor=PROBABILITY_FLOOR):
    """Evaluate the association (and inter-level) forests on every node of a cube."""
    values = cube.values
    inter = None
    if product_forest is not None:
        inter = inter_level_potential(product_forest, values, domain, floor)
    return NodePotentials(
        base=association_potential(base_forest, values, floor),
        occlusion=association_potential(occlusion_forest, values, floor),
        inter=inter,
    )
