"""MAP inference on the two-layer grid graph.

Every node of the base layer and every node of the occlusion layer has a unary
log-potential; same-layer 4-neighbours share a pairwise table and the two nodes
of a site share an inter-level table. ``map_lbp`` runs max-sum loopy belief
propagation, ``map_exact`` enumerates all configurations of very small graphs.

Pairwise tables are indexed ``[first, second]`` where ``first`` is the left
(horizontal) or upper (vertical) node, and inter-level tables ``[base, occlusion]``.
"""

import logging
from dataclasses import dataclass

import numpy as np

from crf.potentials import neighbour_sq_distances, within_level_tables
from labeling.domain import TwoLayerLabeling
from utils.errors import ConfigError, DomainError, InferenceError, InferenceRefusedError

logger = logging.getLogger(__name__)

MAX_EXACT_CONFIGURATIONS = 10 ** 8
EXACT_CHUNK = 1 << 15


@dataclass
class TcrfGraph:
    """Weighted log-potentials of one scene.

    Shapes: unary_base (H, W, Cb), unary_occ (H, W, Co), base_horizontal (H, W-1, Cb, Cb),
    base_vertical (H-1, W, Cb, Cb), the occlusion tables likewise with Co, inter (H, W, Cb, Co).
    """

    unary_base: np.ndarray
    unary_occ: np.ndarray
    base_horizontal: np.ndarray
    base_vertical: np.ndarray
    occ_horizontal: np.ndarray
    occ_vertical: np.ndarray
    inter: np.ndarray

    def __post_init__(self):
        h, w, cb = self.unary_base.shape
        co = self.unary_occ.shape[2]
        expected = {
            "unary_occ": (h, w, co),
            "base_horizontal": (h, w - 1, cb, cb),
            "base_vertical": (h - 1, w, cb, cb),
            "occ_horizontal": (h, w - 1, co, co),
            "occ_vertical": (h - 1, w, co, co),
            "inter": (h, w, cb, co),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ConfigError(f"Graph array '{name}' has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def node_shape(self):
        return self.unary_base.shape[:2]

    @property
    def n_base(self):
        return self.unary_base.shape[2]

    @property
    def n_occlusion(self):
        return self.unary_occ.shape[2]

    @property
    def n_sites(self):
        h, w = self.node_shape
        return h * w

    @property
    def n_nodes(self):
        return 2 * self.n_sites

    @property
    def n_within_edges(self):
        h, w = self.node_shape
        return 2 * (w * (h - 1) + h * (w - 1))

    @property
    def n_inter_edges(self):
        return self.n_sites

    def arrays(self):
        return (self.unary_base, self.unary_occ, self.base_horizontal, self.base_vertical,
                self.occ_horizontal, self.occ_vertical, self.inter)

    def check_finite(self):
        for array in self.arrays():
            if not np.all(np.isfinite(array)):
                raise InferenceError("Graph contains a non-finite log-potential")


def build_graph(potentials, base_table, occ_table, cube, theta):
    """Assemble θ-weighted log-potentials of a scene.

    Args:
        potentials: NodePotentials of the scene; ``inter`` None gives an uncoupled graph
        base_table, occ_table: CooccurrenceTable of each layer
        cube: FeatureCube supplying the neighbour feature distances
        theta: ThetaParams

    Returns:
        TcrfGraph
    """
    h, w = potentials.node_shape
    cb, co = potentials.base.shape[2], potentials.occlusion.shape[2]
    if tuple(cube.node_shape) != (h, w):
        raise ConfigError(f"Feature cube {cube.node_shape} does not match the potentials {(h, w)}")
    if base_table.n_classes != cb or occ_table.n_classes != co:
        raise ConfigError(
            f"Co-occurrence tables ({base_table.n_classes}, {occ_table.n_classes}) do not match "
            f"the potentials ({cb}, {co})"
        )

    horizontal_d2, vertical_d2 = neighbour_sq_distances(cube)
    t = theta
    if potentials.inter is None:
        inter = np.zeros((h, w, cb, co))
    else:
        if potentials.inter.shape != (h, w, cb, co):
            raise ConfigError(f"Inter-level potentials have shape {potentials.inter.shape}, expected {(h, w, cb, co)}")
        inter = t.inter_level * potentials.inter

    def pairwise(table, weight, d2):
        return weight * within_level_tables(table, d2, t.diagonal_boost, t.contrast_decay)

    return TcrfGraph(
        unary_base=t.base_association * potentials.base,
        unary_occ=t.occlusion_association * potentials.occlusion,
        base_horizontal=pairwise(base_table, t.base_within, horizontal_d2),
        base_vertical=pairwise(base_table, t.base_within, vertical_d2),
        occ_horizontal=pairwise(occ_table, t.occlusion_within, horizontal_d2),
        occ_vertical=pairwise(occ_table, t.occlusion_within, vertical_d2),
        inter=inter,
    )


@dataclass
class LayerMessages:
    """Messages arriving at each node of one layer from its four grid neighbours."""

    from_left: np.ndarray
    from_right: np.ndarray
    from_above: np.ndarray
    from_below: np.ndarray

    @classmethod
    def zeros(cls, h, w, c):
        return cls(*(np.zeros((h, w, c)) for _ in range(4)))

    def total(self, at=Ellipsis):
        return self.from_left[at] + self.from_right[at] + self.from_above[at] + self.from_below[at]


@dataclass
class MessageState:
    base: LayerMessages
    occlusion: LayerMessages
    base_to_occ: np.ndarray
    occ_to_base: np.ndarray
    iteration: int = 0
    delta: float = np.inf

    @classmethod
    def initial(cls, graph):
        h, w = graph.node_shape
        cb, co = graph.n_base, graph.n_occlusion
        return cls(
            base=LayerMessages.zeros(h, w, cb),
            occlusion=LayerMessages.zeros(h, w, co),
            base_to_occ=np.zeros((h, w, co)),
            occ_to_base=np.zeros((h, w, cb)),
        )

    def base_belief(self, graph):
        return graph.unary_base + self.base.total() + self.occ_to_base

    def occ_belief(self, graph):
        return graph.unary_occ + self.occlusion.total() + self.base_to_occ


def _normalize(message):
    return message - message.max(axis=-1, keepdims=True)


class _Sweeper:
    """Damped, normalized message updates; tracks the largest change of a sweep."""

    def __init__(self, damping):
        self.damping = damping
        self.delta = 0.0

    def update(self, old, new):
        new = _normalize(new)
        if self.damping > 0:
            new = _normalize(self.damping * old + (1.0 - self.damping) * new)
        self.delta = max(self.delta, float(np.max(np.abs(new - old))))
        return new


def _sweep_layer(unary, extra, msgs, horizontal, vertical, sweeper):
    """Right, left, down and up scans; each column (row) is updated for all rows (columns) at once."""
    h, w, _ = unary.shape

    def belief(at):
        return unary[at] + extra[at] + msgs.total(at)

    for j in range(1, w):
        pre = belief((slice(None), j - 1)) - msgs.from_right[:, j - 1]
        new = np.max(pre[:, :, None] + horizontal[:, j - 1], axis=1)
        msgs.from_left[:, j] = sweeper.update(msgs.from_left[:, j], new)
    for j in range(w - 2, -1, -1):
        pre = belief((slice(None), j + 1)) - msgs.from_left[:, j + 1]
        new = np.max(horizontal[:, j] + pre[:, None, :], axis=2)
        msgs.from_right[:, j] = sweeper.update(msgs.from_right[:, j], new)
    for i in range(1, h):
        pre = belief(i - 1) - msgs.from_below[i - 1]
        new = np.max(pre[:, :, None] + vertical[i - 1], axis=1)
        msgs.from_above[i] = sweeper.update(msgs.from_above[i], new)
    for i in range(h - 2, -1, -1):
        pre = belief(i + 1) - msgs.from_above[i + 1]
        new = np.max(vertical[i] + pre[:, None, :], axis=2)
        msgs.from_below[i] = sweeper.update(msgs.from_below[i], new)


def _sweep_inter(graph, state, sweeper):
    pre = state.base_belief(graph) - state.occ_to_base
    new = np.max(pre[..., :, None] + graph.inter, axis=-2)
    state.base_to_occ = sweeper.update(state.base_to_occ, new)
    pre = state.occ_belief(graph) - state.base_to_occ
    new = np.max(graph.inter + pre[..., None, :], axis=-1)
    state.occ_to_base = sweeper.update(state.occ_to_base, new)


def decode_beliefs(graph, state):
    """Per-node argmax of the beliefs; ties go to the lowest class index."""
    return TwoLayerLabeling(
        base=np.argmax(state.base_belief(graph), axis=-1),
        occlusion=np.argmax(state.occ_belief(graph), axis=-1),
    )


def map_lbp(graph, max_iters=100, tol=1e-4, damping=0.5, return_state=False):
    """Max-sum loopy belief propagation.

    One iteration sweeps the base layer (right, left, down, up), the occlusion
    layer in the same order, then the inter-level edges base→occlusion and
    occlusion→base. Stops once the largest message change of an iteration is
    below ``tol`` or after ``max_iters`` iterations.

    Returns:
        TwoLayerLabeling, or (TwoLayerLabeling, MessageState) with ``return_state``
    """
    if not 0.0 <= damping < 1.0:
        raise ConfigError(f"damping must be in [0, 1), got {damping}")
    graph.check_finite()
    state = MessageState.initial(graph)
    for iteration in range(1, max_iters + 1):
        sweeper = _Sweeper(damping)
        _sweep_layer(graph.unary_base, state.occ_to_base, state.base, graph.base_horizontal,
                     graph.base_vertical, sweeper)
        _sweep_layer(graph.unary_occ, state.base_to_occ, state.occlusion, graph.occ_horizontal,
                     graph.occ_vertical, sweeper)
        _sweep_inter(graph, state, sweeper)
        state.iteration, state.delta = iteration, sweeper.delta
        if not np.isfinite(sweeper.delta):
            raise InferenceError(f"Messages became non-finite in iteration {iteration}")
        if sweeper.delta < tol:
            logger.debug("LBP converged after %d iterations (delta %.2e)", iteration, sweeper.delta)
            break
    else:
        logger.warning("LBP stopped after %d iterations without converging (delta %.2e)", max_iters, state.delta)

    labeling = decode_beliefs(graph, state)
    return (labeling, state) if return_state else labeling


def _batch_scores(graph, base, occ):
    """Log-scores of a batch of labelings, base/occ of shape (n, H, W)."""
    h, w = graph.node_shape
    rows = np.arange(h)[None, :, None]
    cols = np.arange(w)[None, None, :]
    total = graph.unary_base[rows, cols, base].sum(axis=(1, 2))
    total += graph.unary_occ[rows, cols, occ].sum(axis=(1, 2))
    total += graph.inter[rows, cols, base, occ].sum(axis=(1, 2))
    for grid, horizontal, vertical in ((base, graph.base_horizontal, graph.base_vertical),
                                       (occ, graph.occ_horizontal, graph.occ_vertical)):
        if w > 1:
            total += horizontal[rows, cols[:, :, :-1], grid[:, :, :-1], grid[:, :, 1:]].sum(axis=(1, 2))
        if h > 1:
            total += vertical[rows[:, :-1], cols, grid[:, :-1, :], grid[:, 1:, :]].sum(axis=(1, 2))
    return total


def score(graph, labeling):
    """Unnormalized log-posterior of a labeling: weighted node plus edge terms."""
    if (labeling.height, labeling.width) != tuple(graph.node_shape):
        raise DomainError(f"Labeling {labeling.base.shape} does not match the graph {graph.node_shape}")
    for grid, n, layer in ((labeling.base, graph.n_base, "base"), (labeling.occlusion, graph.n_occlusion, "occlusion")):
        if grid.min() < 0 or grid.max() >= n:
            raise DomainError(f"{layer} label outside [0, {n})")
    return float(_batch_scores(graph, labeling.base[None], labeling.occlusion[None])[0])


def iter_configurations(graph, chunk=EXACT_CHUNK):
    """Yield (first index, base, occ) batches of all labelings in lexicographic order.

    Site 0 (row-major) is the most significant digit; each digit is a product label.
    """
    h, w = graph.node_shape
    n_product = graph.n_base * graph.n_occlusion
    n_sites = h * w
    total = n_product ** n_sites
    powers = n_product ** np.arange(n_sites - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        index = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (index[:, None] // powers[None, :]) % n_product
        base, occ = np.divmod(digits, graph.n_occlusion)
        yield start, base.reshape(-1, h, w), occ.reshape(-1, h, w)


def all_scores(graph, max_configurations=MAX_EXACT_CONFIGURATIONS):
    """Scores of every configuration in ``iter_configurations`` order."""
    _check_enumerable(graph, max_configurations)
    return np.concatenate([_batch_scores(graph, base, occ) for _, base, occ in iter_configurations(graph)])


def _check_enumerable(graph, max_configurations):
    n_product = graph.n_base * graph.n_occlusion
    if n_product ** graph.n_sites > max_configurations:
        raise InferenceRefusedError(
            f"Exact inference needs {n_product}^{graph.n_sites} configurations, limit is {max_configurations}"
        )


def map_exact(graph, max_configurations=MAX_EXACT_CONFIGURATIONS):
    """Global argmax of ``score`` by enumeration; the first maximal configuration wins."""
    _check_enumerable(graph, max_configurations)
    graph.check_finite()
    best_score, best = -np.inf, None
    for _, base, occ in iter_configurations(graph):
        scores = _batch_scores(graph, base, occ)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score, best = scores[k], (base[k].copy(), occ[k].copy())
    return TwoLayerLabeling(base=best[0], occlusion=best[1])
