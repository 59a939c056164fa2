import numpy as np
import pytest

from crf.inference import (
    TcrfGraph,
    all_scores,
    build_graph,
    iter_configurations,
    map_exact,
    map_lbp,
    score,
)
from crf.potentials import CooccurrenceTable, NodePotentials, ThetaParams, fit_cooccurrence, row_scale
from labeling.domain import TwoLayerLabeling
from utils.errors import ConfigError, DomainError, InferenceError, InferenceRefusedError
from vision.feature_cube import FeatureCube


def random_graph(rng, h, w, cb=3, co=2, weights=(1.0, 1.0, 1.0, 1.0, 1.0)):
    """Random log-tables scaled by (base unary, occlusion unary, base pair, occlusion pair, inter) weights."""
    wb, wo, wpb, wpo, wi = weights
    return TcrfGraph(
        unary_base=wb * rng.normal(size=(h, w, cb)),
        unary_occ=wo * rng.normal(size=(h, w, co)),
        base_horizontal=wpb * rng.normal(size=(h, w - 1, cb, cb)),
        base_vertical=wpb * rng.normal(size=(h - 1, w, cb, cb)),
        occ_horizontal=wpo * rng.normal(size=(h, w - 1, co, co)),
        occ_vertical=wpo * rng.normal(size=(h - 1, w, co, co)),
        inter=wi * rng.normal(size=(h, w, cb, co)),
    )


def attractive_table(rng, n_classes, layer):
    counts = rng.integers(1, 20, (n_classes, n_classes)) + np.diag(rng.integers(50, 100, n_classes))
    return CooccurrenceTable(layer=layer, counts=counts, scaled=row_scale(counts + 1.0))


def attractive_graph(rng):
    """3×3 grid, two classes per layer, diagonal-heavy within-level tables."""
    base = np.log(rng.dirichlet(np.ones(2), size=(3, 3)))
    occ = np.log(rng.dirichlet(np.ones(2), size=(3, 3)))
    inter = np.log(rng.dirichlet(np.ones(4), size=(3, 3))).reshape(3, 3, 2, 2)
    potentials = NodePotentials(base=base, occlusion=occ, inter=inter)
    cube = FeatureCube(rng.integers(0, 256, (3, 3, 4)))
    theta = ThetaParams(
        base_within=rng.uniform(0.5, 1.5),
        occlusion_within=rng.uniform(0.5, 1.5),
        inter_level=rng.uniform(0.5, 1.5),
        diagonal_boost=rng.uniform(1.0, 5.0),
        contrast_decay=rng.uniform(0.0, 1e-5),
    )
    return build_graph(potentials, attractive_table(rng, 2, "base"), attractive_table(rng, 2, "occlusion"), cube, theta)


def independent_argmax(graph):
    return TwoLayerLabeling(base=graph.unary_base.argmax(axis=-1), occlusion=graph.unary_occ.argmax(axis=-1))


def test_lbp_is_exact_on_acyclic_graphs():
    rng = np.random.default_rng(2718)
    for case in range(200):
        weights = list(rng.uniform(0.1, 3.0, 5))
        # dropping one coupling family leaves a forest
        weights[2 + case % 3] = 0.0
        graph = random_graph(rng, 1, int(rng.integers(1, 5)), weights=weights)
        assert map_lbp(graph, damping=0.0, tol=1e-9) == map_exact(graph), f"case {case}"


def test_lbp_damped_is_exact_on_chain():
    rng = np.random.default_rng(1)
    for _ in range(20):
        graph = random_graph(rng, 1, 4, weights=(1.0, 1.0, 1.0, 1.0, 0.0))
        assert map_lbp(graph, tol=1e-9) == map_exact(graph)


def test_lbp_on_vertical_chain():
    rng = np.random.default_rng(4)
    for _ in range(20):
        graph = random_graph(rng, 4, 1, weights=(1.0, 1.0, 2.0, 0.0, 1.0))
        assert map_lbp(graph, damping=0.0, tol=1e-9) == map_exact(graph)


def test_lbp_quality_on_loopy_grids():
    rng = np.random.default_rng(31415)
    not_worse = close = 0
    for _ in range(100):
        graph = attractive_graph(rng)
        lbp = score(graph, map_lbp(graph))
        scores = all_scores(graph)
        best, worst = scores.max(), scores.min()
        not_worse += lbp >= score(graph, independent_argmax(graph)) - 1e-9
        close += best - lbp <= 0.05 * (best - worst)
    assert not_worse >= 95
    assert close >= 90


def test_exact_matches_enumeration():
    rng = np.random.default_rng(8)
    graph = random_graph(rng, 2, 2, cb=2, co=2)
    scores = all_scores(graph)
    exact = map_exact(graph)
    assert score(graph, exact) == pytest.approx(scores.max())
    assert scores.size == 4 ** 4


def test_ties_go_to_the_lowest_index():
    graph = random_graph(np.random.default_rng(0), 2, 3, weights=(0, 0, 0, 0, 0))
    zeros = TwoLayerLabeling(base=np.zeros((2, 3)), occlusion=np.zeros((2, 3)))
    assert map_exact(graph) == zeros
    assert map_lbp(graph) == zeros


def test_configuration_order():
    graph = random_graph(np.random.default_rng(0), 1, 2, cb=2, co=1)
    [(start, base, occ)] = list(iter_configurations(graph))
    assert start == 0
    np.testing.assert_array_equal(base[:, 0], [[0, 0], [0, 1], [1, 0], [1, 1]])
    assert not occ.any()


def test_score_by_hand():
    graph = TcrfGraph(
        unary_base=np.array([[[0.5, 0.0], [0.0, 0.25]]]),
        unary_occ=np.array([[[1.0, 0.0], [0.0, 2.0]]]),
        base_horizontal=np.array([[[[3.0, 0.0], [0.0, 0.0]]]]),
        base_vertical=np.zeros((0, 2, 2, 2)),
        occ_horizontal=np.array([[[[0.0, -1.0], [0.0, 0.0]]]]),
        occ_vertical=np.zeros((0, 2, 2, 2)),
        inter=np.array([[[[0.0, 0.5], [0.0, 0.0]], [[0.0, 0.0], [0.0, 4.0]]]]),
    )
    labeling = TwoLayerLabeling(base=[[0, 1]], occlusion=[[0, 1]])
    # unaries 0.5 + 0.25 + 1 + 2, base pair 0, occlusion pair -1, inter 0 + 4
    assert score(graph, labeling) == pytest.approx(6.75)
    best = map_exact(graph)
    assert best == TwoLayerLabeling(base=[[0, 1]], occlusion=[[1, 1]])
    assert score(graph, best) == pytest.approx(7.25)


def test_score_rejects_bad_labelings():
    graph = random_graph(np.random.default_rng(0), 2, 2)
    with pytest.raises(DomainError):
        score(graph, TwoLayerLabeling(base=np.zeros((3, 2)), occlusion=np.zeros((3, 2))))
    with pytest.raises(DomainError):
        score(graph, TwoLayerLabeling(base=[[0, 3], [0, 0]], occlusion=np.zeros((2, 2))))


def test_exact_refuses_large_graphs():
    graph = random_graph(np.random.default_rng(0), 3, 3, cb=4, co=3)
    with pytest.raises(InferenceRefusedError):
        map_exact(graph)
    with pytest.raises(InferenceRefusedError):
        all_scores(graph, max_configurations=1000)


def test_graph_counts():
    graph = random_graph(np.random.default_rng(0), 3, 4)
    assert (graph.n_sites, graph.n_nodes, graph.n_inter_edges) == (12, 24, 12)
    assert graph.n_within_edges == 34


def test_graph_shape_check():
    rng = np.random.default_rng(0)
    graph = random_graph(rng, 2, 2)
    with pytest.raises(ConfigError):
        TcrfGraph(graph.unary_base, graph.unary_occ, graph.base_horizontal, graph.base_vertical,
                  graph.occ_horizontal, graph.occ_vertical, np.zeros((2, 2, 2, 3)))


def test_non_finite_potentials():
    graph = random_graph(np.random.default_rng(0), 2, 2)
    graph.unary_occ[0, 0, 1] = np.nan
    with pytest.raises(InferenceError):
        map_lbp(graph)


@pytest.mark.parametrize("damping", [-0.1, 1.0])
def test_damping_range(damping):
    with pytest.raises(ConfigError):
        map_lbp(random_graph(np.random.default_rng(0), 1, 2), damping=damping)


def test_state_reports_convergence():
    graph = random_graph(np.random.default_rng(3), 1, 3, weights=(1, 1, 1, 1, 0))
    labeling, state = map_lbp(graph, tol=1e-6, return_state=True)
    assert state.delta < 1e-6
    assert 1 <= state.iteration < 100
    np.testing.assert_array_equal(labeling.base, state.base_belief(graph).argmax(axis=-1))


def test_build_graph_weights_terms():
    rng = np.random.default_rng(6)
    potentials = NodePotentials(
        base=rng.normal(size=(2, 3, 4)), occlusion=rng.normal(size=(2, 3, 3)), inter=rng.normal(size=(2, 3, 4, 3))
    )
    base_table = fit_cooccurrence([rng.integers(0, 4, (5, 5))], 4)
    occ_table = fit_cooccurrence([rng.integers(0, 3, (5, 5))], 3, layer="occlusion")
    cube = FeatureCube(rng.integers(0, 256, (2, 3, 5)))
    theta = ThetaParams(2.0, 0.5, 1.0, 3.0, 0.0)
    graph = build_graph(potentials, base_table, occ_table, cube, theta)
    np.testing.assert_allclose(graph.unary_base, 2.0 * potentials.base)
    np.testing.assert_allclose(graph.unary_occ, 0.5 * potentials.occlusion)
    assert not graph.inter.any()
    assert graph.base_horizontal.shape == (2, 2, 4, 4)
    assert graph.occ_vertical.shape == (1, 3, 3, 3)
    # off-diagonal entries are the weighted log histogram
    assert graph.occ_vertical[0, 1, 0, 2] == pytest.approx(3.0 * np.log(occ_table.scaled[0, 2]))

    uncoupled = build_graph(NodePotentials(potentials.base, potentials.occlusion), base_table, occ_table, cube, theta)
    assert not uncoupled.inter.any()

    with pytest.raises(ConfigError):
        build_graph(potentials, occ_table, occ_table, cube, theta)
    with pytest.raises(ConfigError):
        build_graph(potentials, base_table, occ_table, FeatureCube(np.zeros((3, 3, 5))), theta)
