import os

import numpy as np
import pytest
import yaml

from labeling.domain import vaihingen_domain
from synthetic.generator import DEFAULT_RECIPE_PATH, SceneRecipe, generate_suite
from training.pipeline import train_model
from utils.config import ExperimentConfig, ForestSettings, InferenceSettings, PowellSettings
from vision.feature_cube import FeatureSpec, parse_feature_list

TINY_FEATURES = ("int", "sat", "ndvi", "ndsm")


def tiny_recipe_dict():
    with open(DEFAULT_RECIPE_PATH) as f:
        data = yaml.safe_load(f)
    data.update(height=40, width=40, building_size=[6, 12], road_width=[3, 5], max_attempts=2000)
    data["occluders"]["tree"]["size"] = [2, 4]
    data["occluders"]["car"]["size"] = [2, 4]
    return data


@pytest.fixture
def domain():
    return vaihingen_domain()


@pytest.fixture(scope="session")
def tiny_recipe():
    return SceneRecipe.from_dict(tiny_recipe_dict())


def tiny_config(**overrides):
    settings = dict(
        features=FeatureSpec(features=parse_feature_list(TINY_FEATURES, (1, 2)), opening_size=9, median_size=9),
        forest=ForestSettings(n_trees=5, max_depth=8, n_samples=200),
        inference=InferenceSettings(max_iters=5, tol=1e-3),
        powell=PowellSettings(max_iters=1, ftol=1e-2, xtol=0.5),
        seed=3,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


@pytest.fixture(scope="session")
def tiny_suite(tiny_recipe):
    return generate_suite(tiny_recipe, 12, seed=11)


@pytest.fixture(scope="session")
def trained(tiny_suite):
    """(model, trace, split, scenes) of a small tcrf run shared by several test modules."""
    scenes, split = tiny_suite
    model, trace, split = train_model(tiny_config(), scenes, split)
    return model, trace, split, scenes


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_yaml(path, data):
    os.makedirs(os.path.dirname(str(path)), exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(data, f)
    return str(path)
