"""Range checks for experiment parameters and the feature scaling table."""

import json
import logging
import math
import os

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

FEATURE_RANGES_PATH = os.path.join(os.path.dirname(__file__), "../config/feature_ranges.json")

THETA_NAMES = ("theta1", "theta2", "theta3", "theta4", "theta5", "theta6", "theta7")

# θ₁..θ₅ exponent weights, θ₆ diagonal boost (strictly positive), θ₇ contrast decay.
DEFAULT_THETA_BOUNDS = ((0.0, 10.0),) * 5 + ((1e-6, 100.0), (0.0, 1.0))


def load_feature_ranges(path=None):
    """Load the fixed physical scaling range of every feature.

    Returns:
        dict: feature name -> (low, high)
    """
    path = path or FEATURE_RANGES_PATH
    if not os.path.exists(path):
        raise ConfigError(f"Feature ranges file {path} not found.")
    with open(path) as f:
        raw = json.load(f)
    ranges = {}
    for name, bounds in raw.items():
        ranges[name] = check_interval(f"range of feature '{name}'", bounds)
    logger.debug("Loaded %d feature ranges from %s", len(ranges), path)
    return ranges


def check_interval(what, bounds):
    """Validate a ``[low, high]`` pair with ``low < high``."""
    if not isinstance(bounds, (list, tuple)) or len(bounds) != 2:
        raise ConfigError(f"{what} must be a [low, high] pair, got {bounds!r}")
    low, high = float(bounds[0]), float(bounds[1])
    if not (math.isfinite(low) and math.isfinite(high)) or low >= high:
        raise ConfigError(f"{what} must satisfy low < high, got ({low}, {high})")
    return low, high


def check_range(name, value, low=None, high=None, low_open=False, high_open=False):
    """Ensure ``value`` lies within the documented range; returns the value."""
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        raise ConfigError(f"Parameter '{name}' must be a finite number, got {value!r}")
    if low is not None and (value < low or (low_open and value == low)):
        raise ConfigError(f"Parameter '{name}'={value} is below its limit {low}")
    if high is not None and (value > high or (high_open and value == high)):
        raise ConfigError(f"Parameter '{name}'={value} is above its limit {high}")
    return value


def check_fractions(fractions, tolerance=1e-6):
    """Split fractions must be non-negative and sum to 1."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigError(f"Expected 3 split fractions (train, tune, test), got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ConfigError(f"Split fractions must be non-negative, got {fractions}")
    if abs(sum(fractions) - 1.0) > tolerance:
        raise ConfigError(f"Split fractions must sum to 1, got {sum(fractions):.6f}")
    return fractions


def check_theta(theta, bounds=DEFAULT_THETA_BOUNDS):
    """Ensure every θ component is inside its bounds."""
    if len(theta) != len(THETA_NAMES):
        raise ConfigError(f"θ needs {len(THETA_NAMES)} components, got {len(theta)}")
    for name, value, (low, high) in zip(THETA_NAMES, theta, bounds):
        if not (low <= value <= high):
            raise ConfigError(f"{name}={value} is outside its bounds ({low}, {high})")
    return tuple(float(v) for v in theta)


def check_odd_window(name, window, minimum=3):
    window = int(window)
    if window < minimum or window % 2 == 0:
        raise ConfigError(f"Window '{name}' must be odd and >= {minimum}, got {window}")
    return window
