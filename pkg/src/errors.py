"""Exception types raised across the toolkit."""

from typing import Sequence


class AmflowError(Exception):
    """Base class for all toolkit errors (mapped to CLI exit code 2)."""


class FormatError(AmflowError):
    """A file or directory does not follow the expected on-disk layout."""


class ShapeError(AmflowError):
    """Rasters that must share dimensions do not."""


class ParameterError(AmflowError):
    """An argument lies outside its valid range."""


class EmptyEvaluation(AmflowError):
    """No level carries ground-truth pixels, so no score can be formed."""


class SceneError(AmflowError):
    """A scene description is invalid or names degenerate geometry."""


class StratifyError(AmflowError):
    """An occlusion cycle could not be resolved.

    Attributes:
        cycle: Instance ids along the unresolved cycle
    """

    def __init__(self, cycle: Sequence[int]):
        self.cycle = list(cycle)
        super().__init__(f"Unresolved occlusion cycle: {' -> '.join(map(str, self.cycle))}")
