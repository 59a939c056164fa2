"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class TcrfError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class ConfigError(TcrfError, ValueError):
    """Invalid configuration, CLI usage or unsatisfiable feature request."""

    exit_code = 1


class DataError(TcrfError):
    """Problem with dataset content (missing files, bad label values, shapes)."""

    exit_code = 2

    def __init__(self, message, scene_id=None):
        if scene_id is not None:
            message = f"[scene {scene_id}] {message}"
        super().__init__(message)
        self.scene_id = scene_id


class DomainError(DataError, ValueError):
    """Index out of range or dimension mismatch."""


class InferenceRefusedError(ConfigError):
    """Exact enumeration refused because the configuration space is too large."""


class InferenceError(TcrfError):
    """Non-finite potentials reached the message passing."""


class OptimizationError(TcrfError):
    """The θ objective produced a non-finite value."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


def exit_code_for(exc):
    """Map an exception to the CLI exit code (0 is never returned here)."""
    if isinstance(exc, TcrfError):
        return exc.exit_code
    return 3
