"""Random Forest over byte-valued features.

Each tree is grown on a bootstrap resample with Gini splits over a random subset of
⌈√N_f⌉ features per node. Features are 8-bit, so a split is ``x <= threshold`` with a
byte threshold and all candidate thresholds of a feature are scored at once from a
256-bin class histogram. A tree votes for the class of the leaf an input reaches and
the forest distribution is the vote fraction N_c / N_T.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from utils.errors import DataError, DomainError

logger = logging.getLogger(__name__)

N_BYTE_VALUES = 256
LEAF = -1


@dataclass
class TrainSet:
    """Feature rows (uint8) with class labels for one classifier."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DomainError(
                f"Features {self.features.shape} and labels {self.labels.shape} do not describe the same samples"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DomainError(f"Labels outside [0, {self.n_classes})")

    @property
    def n_samples(self):
        return self.labels.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


def balance_sample(features, labels, n_classes, n_per_class, seed, class_names=None, allow_missing=False):
    """Draw exactly ``n_per_class`` samples of every class.

    Classes with fewer instances are sampled with replacement, the others without.
    With ``allow_missing`` absent classes are skipped instead of raising.
    """
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels, dtype=np.int64)
    chosen = []
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            name = class_names[c] if class_names is not None else str(c)
            if allow_missing:
                logger.info("Class '%s' has no training samples, skipped", name)
                continue
            raise DataError(f"Class '{name}' is absent from the training data")
        replace = members.size < n_per_class
        chosen.append(rng.choice(members, size=n_per_class, replace=replace))
    if not chosen:
        raise DataError("No class has any training sample")
    index = np.concatenate(chosen)
    return TrainSet(features=np.asarray(features)[index], labels=labels[index], n_classes=n_classes)


@dataclass
class DecisionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf whose vote is ``leaf_class``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray
    max_depth: int

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    def apply(self, X):
        """Index of the leaf every row of ``X`` ends in."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.max_depth + 1):
            f = self.feature[node]
            internal = f != LEAF
            if not internal.any():
                break
            idx = rows[internal]
            cur = node[internal]
            go_left = X[idx, f[internal]] <= self.threshold[cur]
            node[internal] = np.where(go_left, self.left[cur], self.right[cur])
        return node

    def predict(self, X):
        return self.leaf_class[self.apply(X)]

    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())


def _best_split(X, y, features, n_classes):
    """Best (feature, threshold) by Gini over the given features, or None.

    Minimising weighted Gini impurity equals maximising Σ l²/n_l + Σ r²/n_r.
    The threshold is the midpoint of the two adjacent observed bytes that
    separate the sides. Ties keep the first feature in ``features`` and the
    lowest split.
    """
    n = y.shape[0]
    totals = np.bincount(y, minlength=n_classes)
    best = None
    best_score = -np.inf
    for f in features:
        hist = np.bincount(X[:, f].astype(np.int64) * n_classes + y, minlength=N_BYTE_VALUES * n_classes)
        hist = hist.reshape(N_BYTE_VALUES, n_classes)
        left = np.cumsum(hist, axis=0)[:-1]
        n_left = left.sum(axis=1)
        n_right = n - n_left
        valid = (n_left > 0) & (n_right > 0)
        if not valid.any():
            continue
        right = totals - left
        with np.errstate(divide="ignore", invalid="ignore"):
            score = (left * left).sum(axis=1) / n_left + (right * right).sum(axis=1) / n_right
        score = np.where(valid, score, -np.inf)
        t = int(np.argmax(score))
        if score[t] > best_score:
            observed = np.flatnonzero(hist.sum(axis=1))
            lo, hi = observed[observed <= t][-1], observed[observed > t][0]
            best_score = score[t]
            best = (int(f), int(lo + hi) // 2)
    return best


def grow_tree(X, y, n_classes, max_depth, n_split_features, rng, min_samples_split=2):
    """Grow one tree on (X, y) without resampling."""
    feature, threshold, left, right, leaf_class = [], [], [], [], []

    def new_node():
        feature.append(LEAF)
        threshold.append(0)
        left.append(LEAF)
        right.append(LEAF)
        leaf_class.append(LEAF)
        return len(feature) - 1

    n_features = X.shape[1]
    stack = [(np.arange(y.shape[0]), 0, new_node())]
    while stack:
        idx, depth, node = stack.pop()
        labels = y[idx]
        counts = np.bincount(labels, minlength=n_classes)
        if depth >= max_depth or idx.size < min_samples_split or np.count_nonzero(counts) <= 1:
            leaf_class[node] = int(np.argmax(counts))
            continue

        order = rng.permutation(n_features)
        Xn = X[idx]
        split = _best_split(Xn, labels, order[:n_split_features], n_classes)
        if split is None and n_split_features < n_features:
            # every sampled feature is constant here, fall back to the others
            split = _best_split(Xn, labels, order[n_split_features:], n_classes)
        if split is None:
            leaf_class[node] = int(np.argmax(counts))
            continue

        f, t = split
        go_left = Xn[:, f] <= t
        left_node, right_node = new_node(), new_node()
        feature[node], threshold[node] = f, t
        left[node], right[node] = left_node, right_node
        stack.append((idx[~go_left], depth + 1, right_node))
        stack.append((idx[go_left], depth + 1, left_node))

    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.uint8),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        leaf_class=np.asarray(leaf_class, dtype=np.int32),
        max_depth=max_depth,
    )


def _fit_bagged_tree(X, y, n_classes, max_depth, n_split_features, min_samples_split, seed_seq):
    rng = np.random.default_rng(seed_seq)
    sample = rng.integers(0, y.shape[0], size=y.shape[0])
    return grow_tree(X[sample], y[sample], n_classes, max_depth, n_split_features, rng, min_samples_split)


def _as_bytes(X):
    X = np.asarray(X)
    if X.dtype == np.uint8:
        return X
    if X.size and (X.min() < 0 or X.max() > N_BYTE_VALUES - 1 or np.any(X != np.rint(X))):
        raise DomainError("Feature values must be whole bytes in [0, 255]")
    return X.astype(np.uint8)


@dataclass
class DecisionForest:
    trees: list
    n_classes: int
    n_features: int
    seed: int

    def __post_init__(self):
        if not self.trees:
            raise DomainError("A forest needs at least one tree")

    @property
    def n_trees(self):
        return len(self.trees)

    def votes(self, X):
        """Vote counts N_c per row, shape (n, n_classes)."""
        X = _as_bytes(X)
        counts = np.zeros((X.shape[0], self.n_classes), dtype=np.int64)
        offsets = np.arange(X.shape[0]) * self.n_classes
        for tree in self.trees:
            counts += np.bincount(offsets + tree.predict(X), minlength=counts.size).reshape(counts.shape)
        return counts

    def to_arrays(self):
        """Header {n_trees, n_classes, n_features, seed} plus concatenated node arrays."""
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees]).astype(np.int64)
        return {
            "header": np.array([self.n_trees, self.n_classes, self.n_features, self.seed], dtype=np.uint64),
            "max_depth": np.array([t.max_depth for t in self.trees], dtype=np.int32),
            "offsets": offsets,
            "feature": np.concatenate([t.feature for t in self.trees]),
            "threshold": np.concatenate([t.threshold for t in self.trees]),
            "left": np.concatenate([t.left for t in self.trees]),
            "right": np.concatenate([t.right for t in self.trees]),
            "leaf_class": np.concatenate([t.leaf_class for t in self.trees]),
        }

    @classmethod
    def from_arrays(cls, arrays):
        n_trees, n_classes, n_features, seed = (int(v) for v in arrays["header"])
        offsets = arrays["offsets"]
        trees = []
        for k in range(n_trees):
            s = slice(int(offsets[k]), int(offsets[k + 1]))
            trees.append(DecisionTree(
                feature=np.asarray(arrays["feature"][s], dtype=np.int32),
                threshold=np.asarray(arrays["threshold"][s], dtype=np.uint8),
                left=np.asarray(arrays["left"][s], dtype=np.int32),
                right=np.asarray(arrays["right"][s], dtype=np.int32),
                leaf_class=np.asarray(arrays["leaf_class"][s], dtype=np.int32),
                max_depth=int(arrays["max_depth"][k]),
            ))
        return cls(trees=trees, n_classes=n_classes, n_features=n_features, seed=seed)


def train_forest(data, n_trees=100, max_depth=25, seed=0, min_samples_split=2, n_jobs=1):
    """Train ``n_trees`` bagged trees; identical inputs and seed give identical forests."""
    present = np.count_nonzero(data.class_counts)
    if present < 2:
        raise DataError(f"Training data must contain at least two classes, found {present}")
    if n_trees < 1:
        raise DomainError("n_trees must be >= 1")
    n_split_features = max(1, math.ceil(math.sqrt(data.n_features)))
    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    trees = Parallel(n_jobs=n_jobs)(
        delayed(_fit_bagged_tree)(
            data.features, data.labels, data.n_classes, max_depth, n_split_features, min_samples_split, s
        )
        for s in seeds
    )
    logger.info(
        "Trained %d trees on %d samples x %d features (%d classes)",
        n_trees, data.n_samples, data.n_features, data.n_classes,
    )
    return DecisionForest(trees=list(trees), n_classes=data.n_classes, n_features=data.n_features, seed=int(seed))


def predict_distribution(forest, features):
    """Vote fractions N_c / N_T for one feature vector or a batch of rows."""
    features = np.asarray(features)
    single = features.ndim == 1
    X = features[None, :] if single else features.reshape(-1, features.shape[-1])
    if X.shape[1] != forest.n_features:
        raise DomainError(f"Feature vectors have {X.shape[1]} entries, the forest expects {forest.n_features}")
    dist = forest.votes(X) / forest.n_trees
    if single:
        return dist[0]
    return dist.reshape(features.shape[:-1] + (forest.n_classes,))
