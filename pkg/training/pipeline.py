"""Training pipeline: scene split, potential fitting, θ search and scene inference."""

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from crf.inference import build_graph, map_lbp, score
from crf.potentials import ThetaParams, compute_node_potentials, fit_cooccurrence
from evaluation.metrics import ConfusionMatrix, accumulate
from forest.random_forest import balance_sample, train_forest
from training.powell import powell_search
from utils.errors import ConfigError, DataError
from utils.validation import check_fractions
from vision.feature_cube import build_feature_cube
from vision.features import edge_threshold_percentile

logger = logging.getLogger(__name__)

THETA_INTER_INDEX = 4


@dataclass
class SplitPlan:
    """Disjoint scene-id lists for potential training, θ tuning and testing."""

    train: tuple
    tune: tuple
    test: tuple
    seed: int = 0

    def __post_init__(self):
        self.train, self.tune, self.test = (tuple(str(i) for i in ids) for ids in (self.train, self.tune, self.test))
        ids = self.train + self.tune + self.test
        if len(set(ids)) != len(ids):
            raise ConfigError("Split plan assigns a scene to more than one split")

    def all_ids(self):
        return self.train + self.tune + self.test

    def to_dict(self):
        return {"train": list(self.train), "tune": list(self.tune), "test": list(self.test), "seed": self.seed}

    @classmethod
    def from_dict(cls, data):
        return cls(train=data["train"], tune=data["tune"], test=data["test"], seed=int(data.get("seed", 0)))


def make_split_plan(scene_ids, fractions=(0.5, 0.083, 0.417), seed=0):
    """Shuffle ``scene_ids`` with ``seed`` and cut it at the rounded fractions.

    Raises ConfigError when any split would be empty.
    """
    fractions = check_fractions(fractions)
    ids = sorted(str(i) for i in scene_ids)
    if len(set(ids)) != len(ids):
        raise ConfigError("Duplicate scene id")
    n = len(ids)
    n_train = int(round(n * fractions[0]))
    n_tune = int(round(n * fractions[1]))
    n_test = n - n_train - n_tune
    if min(n_train, n_tune, n_test) < 1:
        raise ConfigError(f"{n} scenes cannot fill all three splits at fractions {fractions}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[k] for k in order]
    return SplitPlan(
        train=shuffled[:n_train],
        tune=shuffled[n_train:n_train + n_tune],
        test=shuffled[n_train + n_tune:],
        seed=int(seed),
    )


@dataclass
class TcrfModel:
    """All learned quantities: feature spec, forests, co-occurrence tables and θ.

    ``product_forest`` is None for the independent-layer ("crf") mode.
    """

    domain: object
    spec: object
    base_forest: object
    occlusion_forest: object
    product_forest: object
    base_table: object
    occlusion_table: object
    theta: ThetaParams = field(default_factory=ThetaParams)
    mode: str = "tcrf"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.domain
        checks = [
            ("base forest", self.base_forest.n_classes, d.n_base),
            ("occlusion forest", self.occlusion_forest.n_classes, d.n_occlusion),
            ("base table", self.base_table.n_classes, d.n_base),
            ("occlusion table", self.occlusion_table.n_classes, d.n_occlusion),
        ]
        if self.product_forest is not None:
            checks.append(("product forest", self.product_forest.n_classes, d.n_product))
        elif self.mode == "tcrf":
            raise ConfigError("tcrf mode needs a product forest")
        for what, got, expected in checks:
            if got != expected:
                raise ConfigError(f"{what} has {got} classes, the label domain needs {expected}")
        for forest in (self.base_forest, self.occlusion_forest, self.product_forest):
            if forest is not None and forest.n_features != self.spec.n_features:
                raise ConfigError(f"Forest expects {forest.n_features} features, the feature spec has {self.spec.n_features}")

    def with_theta(self, theta):
        return dataclasses.replace(self, theta=theta)

    def node_potentials(self, cube):
        return compute_node_potentials(
            cube, self.base_forest, self.occlusion_forest,
            product_forest=self.product_forest if self.mode == "tcrf" else None,
            domain=self.domain,
        )

    def graph(self, cube, potentials=None, theta=None):
        potentials = potentials if potentials is not None else self.node_potentials(cube)
        return build_graph(potentials, self.base_table, self.occlusion_table, cube, theta or self.theta)


def _child_seeds(seed, n):
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def calibrate_spec(spec, scenes):
    """Fix the edge-map threshold from the training scenes when ``dist`` is used and none is set."""
    if "dist" not in spec.names or spec.edge_threshold is not None:
        return spec
    threshold = edge_threshold_percentile([s.scene for s in scenes], spec.edge_percentile)
    logger.info("Edge threshold calibrated at the %.0fth percentile: %.4f", spec.edge_percentile, threshold)
    return dataclasses.replace(spec, edge_threshold=threshold)


def build_cubes(scenes, spec, n_jobs=1):
    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(build_feature_cube)(s.scene, spec) for s in scenes)


def fit_potentials(train_scenes, domain, spec, forest, seed=0, mode="tcrf", n_jobs=1):
    """Train the association and inter-level forests and fit both co-occurrence tables.

    Args:
        train_scenes: LabeledScene list, every scene with a reference labeling
        domain: LabelDomain
        spec: FeatureSpec; the edge threshold is calibrated here when unset
        forest: ForestSettings
        mode: "tcrf", or "crf" to skip the product forest

    Returns:
        TcrfModel with the default θ
    """
    if not train_scenes:
        raise DataError("No potential-training scenes")
    unlabeled = [s.scene_id for s in train_scenes if s.labeling is None]
    if unlabeled:
        raise DataError(f"Training scenes without reference labels: {unlabeled}")
    for s in train_scenes:
        s.labeling.validate(domain, scene_id=s.scene_id)

    spec = calibrate_spec(spec, train_scenes)
    cubes = build_cubes(train_scenes, spec, n_jobs)
    X = np.concatenate([cube.flat() for cube in cubes])
    y_base = np.concatenate([s.labeling.base.ravel() for s in train_scenes])
    y_occ = np.concatenate([s.labeling.occlusion.ravel() for s in train_scenes])
    seeds = _child_seeds(seed, 6)

    def fit(labels, n_classes, names, sample_seed, forest_seed, allow_missing=False):
        data = balance_sample(X, labels, n_classes, forest.n_samples, sample_seed,
                              class_names=names, allow_missing=allow_missing)
        return train_forest(data, n_trees=forest.n_trees, max_depth=forest.max_depth, seed=forest_seed,
                            min_samples_split=forest.min_samples_split, n_jobs=n_jobs)

    base_forest = fit(y_base, domain.n_base, domain.base_classes, seeds[0], seeds[1])
    occlusion_forest = fit(y_occ, domain.n_occlusion, domain.occlusion_classes, seeds[2], seeds[3])
    product_forest = None
    if mode == "tcrf":
        y_product = domain.encode_product(y_base, y_occ)
        product_forest = fit(y_product, domain.n_product, domain.product_classes(), seeds[4], seeds[5],
                             allow_missing=True)

    base_table = fit_cooccurrence([s.labeling.base for s in train_scenes], domain.n_base, "base")
    occlusion_table = fit_cooccurrence([s.labeling.occlusion for s in train_scenes], domain.n_occlusion, "occlusion")
    logger.info("Fitted potentials on %d scenes (%d sites)", len(train_scenes), X.shape[0])
    return TcrfModel(
        domain=domain, spec=spec, base_forest=base_forest, occlusion_forest=occlusion_forest,
        product_forest=product_forest, base_table=base_table, occlusion_table=occlusion_table,
        theta=ThetaParams(), mode=mode,
    )


def correct_sites(reference, predicted, layers="both", base_mask=None):
    """Diagonal sum of the confusion matrix: correctly labeled sites of one scene."""
    base_ok = reference.base == predicted.base
    if base_mask is not None:
        base_ok &= base_mask
    total = int(np.count_nonzero(base_ok))
    if layers == "both":
        total += int(np.count_nonzero(reference.occlusion == predicted.occlusion))
    return total


def free_theta_indices(mode):
    """θ components searched by Powell; θ₅ stays 0 without inter-level coupling."""
    return tuple(k for k in range(7) if not (mode == "crf" and k == THETA_INTER_INDEX))


def tune_theta(model, tune_scenes, powell, inference, layers="both", split=None, ignore_base=(), n_jobs=1):
    """Maximise Ω, the number of correctly labeled tuning sites, over θ.

    Returns:
        tuple: (ThetaParams, PowellTrace)
    """
    if not tune_scenes:
        raise DataError("Empty θ-tuning set")
    tune_ids = {s.scene_id for s in tune_scenes}
    forbidden = set()
    if split is not None:
        forbidden |= set(split.train) | set(split.test)
    stored = model.metadata.get("split")
    if stored:
        forbidden |= set(stored.get("train", ())) | set(stored.get("test", ()))
    leaked = sorted(tune_ids & forbidden)
    if leaked:
        raise ConfigError(f"θ-tuning scenes overlap the training or test split: {leaked}")
    if any(s.labeling is None for s in tune_scenes):
        raise DataError("θ-tuning scenes need reference labels")

    cubes = build_cubes(tune_scenes, model.spec, n_jobs)
    potentials = [model.node_potentials(cube) for cube in cubes]
    masks = [base_site_mask(s.labeling, ignore_base) for s in tune_scenes]
    free = free_theta_indices(model.mode)
    full0 = np.array(powell.theta0, dtype=np.float64)
    if model.mode == "crf":
        full0[THETA_INTER_INDEX] = 0.0

    def expand(theta_free):
        full = full0.copy()
        full[list(free)] = theta_free
        return ThetaParams.from_vector(full)

    def scene_omega(k, theta):
        labeling = map_lbp(model.graph(cubes[k], potentials[k], theta), inference.max_iters, inference.tol,
                           inference.damping)
        return correct_sites(tune_scenes[k].labeling, labeling, layers, masks[k])

    def omega(theta_free):
        theta = expand(theta_free)
        counts = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(scene_omega)(k, theta) for k in range(len(tune_scenes))
        )
        return float(sum(counts))

    best, trace = powell_search(
        omega, full0[list(free)], bounds=[powell.bounds[k] for k in free], max_iters=powell.max_iters,
        ftol=powell.ftol, xtol=powell.xtol,
    )
    theta = expand(best)
    logger.info("Tuned θ = %s", ", ".join(f"{v:.4g}" for v in theta.as_vector()))
    return theta, trace


def base_site_mask(labeling, ignore_base=()):
    """Sites whose reference base class is not in ``ignore_base``; None when nothing is ignored."""
    if not ignore_base:
        return None
    return ~np.isin(labeling.base, list(ignore_base))


def dataset_hash(scenes):
    """SHA-256 over scene ids, channel bytes and reference labels, in id order."""
    digest = hashlib.sha256()
    for s in sorted(scenes, key=lambda s: s.scene_id):
        digest.update(s.scene_id.encode("utf-8"))
        for name in sorted(s.scene.channels):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(s.scene.channels[name], dtype=np.float32).tobytes())
        if s.labeling is not None:
            digest.update(s.labeling.base.astype(np.int64).tobytes())
            digest.update(s.labeling.occlusion.astype(np.int64).tobytes())
    return digest.hexdigest()


def train_model(config, scenes, split=None):
    """Split, fit potentials, tune θ.

    Returns:
        tuple: (TcrfModel, PowellTrace, SplitPlan)
    """
    by_id = {s.scene_id: s for s in scenes}
    if split is None:
        split = make_split_plan(by_id, config.split.fractions, config.seed)
    missing = [i for i in split.all_ids() if i not in by_id]
    if missing:
        raise DataError(f"Split plan names unknown scenes: {missing}")
    fit_seed, _ = _child_seeds(config.seed, 2)

    train = [by_id[i] for i in split.train]
    tune = [by_id[i] for i in split.tune]
    model = fit_potentials(train, config.domain, config.features, config.forest, seed=fit_seed,
                           mode=config.mode, n_jobs=config.n_jobs)
    theta, trace = tune_theta(model, tune, config.powell, config.inference, layers=config.objective_layers,
                              split=split, ignore_base=config.ignored_base_indices(), n_jobs=config.n_jobs)
    model = model.with_theta(theta)
    model.metadata = {
        "seed": config.seed,
        "mode": config.mode,
        "dataset_hash": dataset_hash(train + tune),
        "split": split.to_dict(),
        "inference": dataclasses.asdict(config.inference),
        "omega": trace.omegas[-1] if trace.omegas else math.nan,
    }
    return model, trace, split


def infer_scene(model, scene, inference):
    """MAP labeling of one SceneData plus LBP diagnostics (iterations, final delta, score)."""
    missing = model.spec.missing_channels(scene)
    if missing:
        raise ConfigError(f"Scene {scene.scene_id} lacks channels for the model's features: {missing}")
    cube = build_feature_cube(scene, model.spec)
    graph = model.graph(cube)
    labeling, state = map_lbp(graph, inference.max_iters, inference.tol, inference.damping, return_state=True)
    return labeling, {"iterations": state.iteration, "delta": state.delta, "score": score(graph, labeling)}


def infer_scenes(model, scenes, inference, n_jobs=1):
    """Inference over many LabeledScenes, parallel across scenes, results in input order."""
    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(infer_scene)(model, s.scene, inference) for s in scenes)


def evaluate_scenes(model, scenes, inference, ignore_base=(), n_jobs=1):
    """Confusion matrices of the base layer, the occlusion layer and the base layer at occluded sites.

    Returns:
        tuple: (dict layer -> ConfusionMatrix, list of per-scene (labeling, diagnostics))
    """
    labeled = [s for s in scenes if s.labeling is not None]
    if not labeled:
        raise DataError("No labeled scenes to evaluate")
    d = model.domain
    results = infer_scenes(model, labeled, inference, n_jobs)
    cms = {
        "base": ConfusionMatrix("base", d.base_classes),
        "occlusion": ConfusionMatrix("occlusion", d.occlusion_classes),
        "base_occluded": ConfusionMatrix("base_occluded", d.base_classes),
    }
    for s, (predicted, _) in zip(labeled, results):
        mask = base_site_mask(s.labeling, ignore_base)
        occluded = s.labeling.occlusion != 0
        cms["base"] = accumulate(cms["base"], s.labeling.base, predicted.base, mask)
        cms["occlusion"] = accumulate(cms["occlusion"], s.labeling.occlusion, predicted.occlusion)
        cms["base_occluded"] = accumulate(cms["base_occluded"], s.labeling.base, predicted.base,
                                          occluded if mask is None else occluded & mask)
    return cms, results
