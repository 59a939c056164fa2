import os

import pytest

from conftest import write_yaml
from utils.config import (
    CONFIG_ENV_VAR,
    DEFAULT_CONFIG_PATH,
    ExperimentConfig,
    InferenceSettings,
    PowellSettings,
    SplitSettings,
    load_config,
    resolve_config_path,
)
from utils.errors import ConfigError

CONFIG_DIR = os.path.dirname(DEFAULT_CONFIG_PATH)


def test_default_experiment():
    config = load_config(DEFAULT_CONFIG_PATH)
    assert config.mode == "tcrf"
    assert config.features.n_features == 27
    assert config.features.opening_size == 31
    assert config.forest.n_trees == 100
    assert config.powell.theta0 == (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.01)
    assert config.powell.bounds[5] == (1e-6, 100.0)
    assert config.split.fractions == (0.5, 0.083, 0.417)
    assert config.dataset_root == os.path.normpath(os.path.join(CONFIG_DIR, "../data/vaihingen"))
    assert config.source == DEFAULT_CONFIG_PATH


def test_streetscenes_experiment():
    config = load_config(os.path.join(CONFIG_DIR, "streetscenes_experiment.yaml"))
    assert config.features.site_size == 5
    assert "hog8" in config.features.names
    assert config.features.names[:6] == ("int", "sat", "var_int", "var_sat", "var_grad", "y")
    assert config.domain.n_occlusion == 4
    assert config.ignored_base_indices() == (config.domain.class_index("base", "unknown"),)


def test_synthetic_experiment():
    config = load_config(os.path.join(CONFIG_DIR, "synthetic_experiment.yaml"))
    assert config.dataset_root.endswith("synthetic_data")
    assert config.seed == 7
    assert config.powell.max_iters == 3


def test_cli_overrides():
    config = load_config(DEFAULT_CONFIG_PATH, seed=5, mode="crf", dataset_root="/data/x", output_dir="out")
    assert (config.seed, config.mode, config.dataset_root, config.output_dir) == (5, "crf", "/data/x", "out")
    assert config.powell.theta0[4] == 0.0


def test_environment_path(tmp_path, monkeypatch):
    path = write_yaml(tmp_path / "env.yaml", {"seed": 17})
    monkeypatch.setenv(CONFIG_ENV_VAR, path)
    assert resolve_config_path() == path
    assert load_config().seed == 17
    assert resolve_config_path("explicit.yaml") == "explicit.yaml"


def test_missing_sections_take_defaults(tmp_path):
    config = load_config(write_yaml(tmp_path / "c.yaml", {"mode": "crf"}))
    assert config.inference == InferenceSettings()
    assert config.features.names == ("int", "sat", "ndvi", "ndsm")
    assert config.dataset_root is None


@pytest.mark.parametrize("data", [
    {"mode": "three-layer"},
    {"objective_layers": "occlusion"},
    {"seed": -1},
    {"forest": {"n_trees": 0}},
    {"forest": {"trees": 10}},
    {"inference": {"damping": 1.0}},
    {"powell": {"theta0": [1, 1, 1, 1, 1, 0, 0]}},
    {"powell": {"bounds": [[0, 10]] * 7}},
    {"split": {"fractions": [0.5, 0.5, 0.5]}},
    {"features": {"names": ["int", "colour"]}},
    {"features": {"names": "urban"}},
    {"features": {"variance_windows": {"var_int": 4}}},
    {"features": {"ranges": {"int": [10, 0]}}},
    {"evaluation": {"ignore_base_classes": ["ocean"]}},
    {"domain": {"base_classes": ["a"], "occlusion_classes": ["tree"]}},
    {"dataset": "not a mapping"},
    {"n_jobs": 0},
    {"n_jobs": -2},
])
def test_invalid_configs(tmp_path, data):
    with pytest.raises(ConfigError):
        load_config(write_yaml(tmp_path / "bad.yaml", data))


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))
    broken = tmp_path / "broken.yaml"
    broken.write_text("mode: [tcrf\n")
    with pytest.raises(ConfigError):
        load_config(str(broken))
    listing = tmp_path / "list.yaml"
    listing.write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        load_config(str(listing))


def test_settings_defaults():
    assert PowellSettings().max_iters == 20
    assert SplitSettings().fractions == (0.5, 0.083, 0.417)
    assert ExperimentConfig(mode="crf").powell.theta0[4] == 0.0
    assert ExperimentConfig(n_jobs=-1).n_jobs == -1
