import numpy as np
import pytest

from forest.random_forest import (
    DecisionForest,
    TrainSet,
    balance_sample,
    grow_tree,
    predict_distribution,
    train_forest,
)
from utils.errors import DataError, DomainError


def gaussian_blobs(n, rng, n_features=8, sigma=10.0):
    """Two classes whose means differ by 2σ in every feature."""
    labels = rng.integers(0, 2, n)
    means = np.where(labels[:, None] == 1, 120.0, 100.0)
    values = rng.normal(means, sigma, (n, n_features))
    return np.clip(np.rint(values), 0, 255).astype(np.uint8), labels


def test_single_threshold_split(rng):
    X = np.concatenate([rng.integers(0, 100, 50), rng.integers(150, 256, 50)])[:, None].astype(np.uint8)
    X[0, 0], X[50, 0] = 99, 150
    y = np.repeat([0, 1], 50)
    tree = grow_tree(X, y, 2, max_depth=5, n_split_features=1, rng=rng)
    assert tree.n_nodes == 3
    assert (tree.feature[0], tree.threshold[0]) == (0, 124)
    queries = np.array([[0], [99], [124], [125], [255]], dtype=np.uint8)
    np.testing.assert_array_equal(tree.predict(queries), [0, 0, 0, 1, 1])


def test_unseen_bytes_split_at_the_midpoint(rng):
    X = np.repeat([99, 150], 50)[:, None].astype(np.uint8)
    y = np.repeat([0, 1], 50)
    tree = grow_tree(X, y, 2, max_depth=5, n_split_features=1, rng=rng)
    np.testing.assert_array_equal(tree.predict(np.array([[110], [120], [124]], dtype=np.uint8)), [0, 0, 0])
    np.testing.assert_array_equal(tree.predict(np.array([[125], [140]], dtype=np.uint8)), [1, 1])


def test_depth_limit(rng):
    X, y = gaussian_blobs(500, rng)
    tree = grow_tree(X, y, 2, max_depth=3, n_split_features=3, rng=rng)
    assert tree.depth() <= 3


def test_distribution_is_vote_fraction(rng):
    X, y = gaussian_blobs(600, rng)
    forest = train_forest(TrainSet(X, y, 2), n_trees=7, max_depth=6, seed=1)
    dist = predict_distribution(forest, X[:50])
    np.testing.assert_allclose(dist.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(dist, forest.votes(X[:50]) / 7)
    single = predict_distribution(forest, X[3])
    np.testing.assert_array_equal(single, dist[3])


def test_grid_input_keeps_leading_shape(rng):
    X, y = gaussian_blobs(300, rng, n_features=3)
    forest = train_forest(TrainSet(X, y, 2), n_trees=3, max_depth=4, seed=0)
    cube = X[:12].reshape(3, 4, 3)
    assert predict_distribution(forest, cube).shape == (3, 4, 2)


def test_feature_count_mismatch(rng):
    X, y = gaussian_blobs(200, rng, n_features=3)
    forest = train_forest(TrainSet(X, y, 2), n_trees=2, max_depth=3, seed=0)
    with pytest.raises(DomainError):
        predict_distribution(forest, np.zeros((4, 5), dtype=np.uint8))


def test_same_seed_same_forest(rng):
    X, y = gaussian_blobs(400, rng)
    data = TrainSet(X, y, 2)
    a = train_forest(data, n_trees=4, max_depth=5, seed=9).to_arrays()
    b = train_forest(data, n_trees=4, max_depth=5, seed=9, n_jobs=2).to_arrays()
    assert a.keys() == b.keys()
    for key in a:
        np.testing.assert_array_equal(a[key], b[key])


def test_array_round_trip_predicts_identically(rng):
    X, y = gaussian_blobs(400, rng)
    forest = train_forest(TrainSet(X, y, 2), n_trees=5, max_depth=6, seed=2)
    restored = DecisionForest.from_arrays(forest.to_arrays())
    assert (restored.n_trees, restored.n_classes, restored.n_features, restored.seed) == (5, 2, 8, 2)
    np.testing.assert_array_equal(restored.votes(X), forest.votes(X))


def test_gaussian_holdout_accuracy():
    rng = np.random.default_rng(2024)
    X, y = gaussian_blobs(10_000, rng)
    X_test, y_test = gaussian_blobs(2_000, rng)
    forest = train_forest(TrainSet(X, y, 2), n_trees=100, max_depth=25, seed=0, n_jobs=-1)
    predicted = predict_distribution(forest, X_test).argmax(axis=1)
    assert (predicted == y_test).mean() >= 0.98


def test_balance_sample_counts(rng):
    labels = np.array([0] * 90 + [1] * 5 + [2] * 30)
    features = np.arange(labels.size, dtype=np.uint8)[:, None]
    data = balance_sample(features, labels, 3, 40, seed=0)
    np.testing.assert_array_equal(data.class_counts, [40, 40, 40])
    # rows keep their labels
    np.testing.assert_array_equal(labels[data.features[:, 0]], data.labels)
    assert len(set(data.features[data.labels == 0, 0])) == 40


def test_balance_sample_missing_class():
    labels = np.array([0, 0, 2, 2])
    features = np.zeros((4, 1), dtype=np.uint8)
    with pytest.raises(DataError, match="car"):
        balance_sample(features, labels, 3, 2, seed=0, class_names=["void", "car", "tree"])
    data = balance_sample(features, labels, 3, 2, seed=0, allow_missing=True)
    np.testing.assert_array_equal(data.class_counts, [2, 0, 2])


def test_single_class_cannot_train():
    with pytest.raises(DataError):
        train_forest(TrainSet(np.zeros((5, 2)), np.zeros(5), 2), n_trees=2)


def test_labels_outside_classes():
    with pytest.raises(DomainError):
        TrainSet(np.zeros((3, 2)), [0, 1, 4], 3)


def test_votes_reject_values_outside_bytes(rng):
    X, y = gaussian_blobs(200, rng, n_features=2)
    forest = train_forest(TrainSet(X, y, 2), n_trees=2, max_depth=3, seed=0)
    for bad in ([[256, 10]], [[-1, 10]], [[10.5, 10]]):
        with pytest.raises(DomainError):
            forest.votes(np.array(bad))
    np.testing.assert_array_equal(forest.votes([[255, 0]]), forest.votes(np.array([[255, 0]], dtype=np.uint8)))
