"""Experiment configuration: YAML file, ``.env`` default path, CLI overrides."""

import logging
import os
from dataclasses import dataclass, field

import yaml
from dotenv import load_dotenv

from labeling.domain import LabelDomain, vaihingen_domain
from vision.feature_cube import FeatureSpec, parse_feature_list
from utils.errors import ConfigError
from utils.validation import (
    DEFAULT_THETA_BOUNDS,
    check_fractions,
    check_interval,
    check_odd_window,
    check_range,
    check_theta,
    load_feature_ranges,
)

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "TCRF_CONFIG_PATH"
DEFAULT_CONFIG_PATH = os.path.abspath(os.path.join(os.path.dirname(__file__), "../config/experiment.yaml"))
MODES = ("tcrf", "crf")
OBJECTIVE_LAYERS = ("both", "base")
DEFAULT_THETA0 = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.01)


@dataclass
class ForestSettings:
    n_trees: int = 100
    max_depth: int = 25
    n_samples: int = 100_000
    min_samples_split: int = 2

    def __post_init__(self):
        check_range("forest.n_trees", self.n_trees, low=1)
        check_range("forest.max_depth", self.max_depth, low=1)
        check_range("forest.n_samples", self.n_samples, low=1)
        check_range("forest.min_samples_split", self.min_samples_split, low=2)


@dataclass
class InferenceSettings:
    max_iters: int = 100
    tol: float = 1e-4
    damping: float = 0.5

    def __post_init__(self):
        check_range("inference.max_iters", self.max_iters, low=1)
        check_range("inference.tol", self.tol, low=0.0, low_open=True)
        check_range("inference.damping", self.damping, low=0.0, high=1.0, high_open=True)


@dataclass
class PowellSettings:
    theta0: tuple = DEFAULT_THETA0
    bounds: tuple = DEFAULT_THETA_BOUNDS
    ftol: float = 1e-4
    xtol: float = 1e-4
    max_iters: int = 20

    def __post_init__(self):
        self.bounds = tuple(check_interval(f"powell.bounds[{k}]", b) for k, b in enumerate(self.bounds))
        if len(self.bounds) != 7:
            raise ConfigError(f"powell.bounds needs 7 intervals, got {len(self.bounds)}")
        if self.bounds[5][0] <= 0:
            raise ConfigError("θ6 lower bound must be > 0")
        if any(low < 0 for low, _ in self.bounds):
            raise ConfigError("θ bounds must be non-negative")
        self.theta0 = check_theta(tuple(self.theta0), self.bounds)
        check_range("powell.ftol", self.ftol, low=0.0, low_open=True)
        check_range("powell.xtol", self.xtol, low=0.0, low_open=True)
        check_range("powell.max_iters", self.max_iters, low=1)


@dataclass
class SplitSettings:
    fractions: tuple = (0.5, 0.083, 0.417)

    def __post_init__(self):
        self.fractions = check_fractions(self.fractions)


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, validated on construction."""

    dataset_root: str = None
    domain: LabelDomain = field(default_factory=vaihingen_domain)
    features: FeatureSpec = None
    forest: ForestSettings = field(default_factory=ForestSettings)
    inference: InferenceSettings = field(default_factory=InferenceSettings)
    powell: PowellSettings = field(default_factory=PowellSettings)
    split: SplitSettings = field(default_factory=SplitSettings)
    mode: str = "tcrf"
    seed: int = 0
    n_jobs: int = 1
    objective_layers: str = "both"
    ignore_base_classes: tuple = ()
    output_dir: str = "runs"
    source: str = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.objective_layers not in OBJECTIVE_LAYERS:
            raise ConfigError(f"objective_layers must be one of {OBJECTIVE_LAYERS}, got '{self.objective_layers}'")
        if int(self.seed) < 0 or int(self.seed) >= 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        self.seed = int(self.seed)
        self.n_jobs = int(self.n_jobs)
        if self.n_jobs == 0 or self.n_jobs < -1:
            raise ConfigError(f"n_jobs must be -1 (all cores) or a positive worker count, got {self.n_jobs}")
        for name in self.ignore_base_classes:
            self.domain.class_index("base", name)
        self.ignore_base_classes = tuple(self.ignore_base_classes)
        if self.features is None:
            self.features = FeatureSpec(features=parse_feature_list(("int", "sat", "ndvi", "ndsm"), (1, 2, 3)))
        if self.mode == "crf" and self.powell.theta0[4] != 0.0:
            self.powell.theta0 = self.powell.theta0[:4] + (0.0,) + self.powell.theta0[5:]

    def ignored_base_indices(self):
        return tuple(self.domain.class_index("base", name) for name in self.ignore_base_classes)


def _section(raw, name):
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"Config section '{name}' must be a mapping")
    return value


def _build(cls, section, name):
    try:
        return cls(**section)
    except TypeError as e:
        raise ConfigError(f"Bad key in config section '{name}': {e}")


def _feature_spec(section, config_dir):
    section = dict(section)
    names = section.pop("names", ("int", "sat", "ndvi", "ndsm"))
    scales = section.pop("scales", (1, 2, 3))
    ranges_file = section.pop("ranges_file", None)
    ranges = load_feature_ranges(os.path.join(config_dir, ranges_file) if ranges_file else None)
    ranges.update(section.pop("ranges", None) or {})
    windows = section.get("variance_windows")
    if windows:
        section["variance_windows"] = {k: check_odd_window(k, w) for k, w in windows.items()}
    for key in ("opening_size", "median_size"):
        if key in section:
            check_range(f"features.{key}", section[key], low=1)
    return _build(FeatureSpec, dict(section, features=parse_feature_list(names, scales), ranges=ranges), "features")


def _domain(section):
    if not section:
        return vaihingen_domain()
    return LabelDomain.from_dict(section)


def resolve_config_path(path=None):
    """Explicit path, else ``$TCRF_CONFIG_PATH`` (``.env`` honoured), else the bundled default."""
    load_dotenv()
    return path or os.getenv(CONFIG_ENV_VAR, DEFAULT_CONFIG_PATH)


def load_config(path=None, seed=None, mode=None, dataset_root=None, output_dir=None):
    """Load and validate an experiment configuration.

    Args:
        path (str): YAML file; see ``resolve_config_path`` for the fallbacks.
        seed, mode, dataset_root, output_dir: CLI overrides of the YAML values.

    Returns:
        ExperimentConfig
    """
    path = resolve_config_path(path)
    if not os.path.exists(path):
        raise ConfigError(f"Config file {path} not found")
    with open(path) as f:
        try:
            raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Config file {path} is not valid YAML: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"Config file {path} must contain a mapping")
    config_dir = os.path.dirname(os.path.abspath(path))

    dataset = _section(raw, "dataset")
    root = dataset_root or dataset.get("root")
    if root and not os.path.isabs(root):
        root = os.path.normpath(os.path.join(config_dir, root))
    features = _section(raw, "features")
    if dataset.get("site_size") and "site_size" not in features:
        features = dict(features, site_size=dataset["site_size"])

    evaluation = _section(raw, "evaluation")
    config = ExperimentConfig(
        dataset_root=root,
        domain=_domain(_section(raw, "domain")),
        features=_feature_spec(features, config_dir),
        forest=_build(ForestSettings, _section(raw, "forest"), "forest"),
        inference=_build(InferenceSettings, _section(raw, "inference"), "inference"),
        powell=_build(PowellSettings, _section(raw, "powell"), "powell"),
        split=_build(SplitSettings, _section(raw, "split"), "split"),
        mode=mode or raw.get("mode", "tcrf"),
        seed=raw.get("seed", 0) if seed is None else seed,
        n_jobs=int(raw.get("n_jobs", 1)),
        objective_layers=raw.get("objective_layers", "both"),
        ignore_base_classes=tuple(evaluation.get("ignore_base_classes", ())),
        output_dir=output_dir or raw.get("output_dir", "runs"),
        source=path,
    )
    logger.info("Loaded config %s (mode=%s, seed=%d)", path, config.mode, config.seed)
    return config
