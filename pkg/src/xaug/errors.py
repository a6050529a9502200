"""Exception types shared across the package.

The CLI maps these onto process exit codes (see cli.py): configuration and
usage problems exit 2, data/shape/consistency problems exit 3, numerical
failures exit 4.
"""


class XaugError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(XaugError):
    """Invalid or inconsistent configuration (bad sizes, unknown tags, ...)."""


class UsageError(XaugError):
    """An operation was called in a way that can never be meaningful."""


class ShapeError(XaugError):
    """Tensor shapes do not line up."""


class ConsistencyError(XaugError):
    """Two objects that must belong together do not (e.g. stale trace)."""


class DataError(XaugError):
    """A dataset violates a structural requirement."""


class NumericError(XaugError):
    """Non-finite values appeared during computation."""

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


class DegenerateImportanceError(XaugError):
    """Importance scores collapsed to all-zero; callers fall back to uniform."""
