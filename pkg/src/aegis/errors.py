"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`AegisError`
and carries the CLI exit code it maps to.
"""

from __future__ import annotations


class AegisError(Exception):
    exit_code = 5


class ConfigError(AegisError):
    exit_code = 2


class InputFormatError(AegisError):
    exit_code = 3


class UnsupportedFormatError(InputFormatError):
    pass


class FrameTruncationError(InputFormatError):
    def __init__(self, message: str, frame_index: int):
        super().__init__(message)
        self.frame_index = frame_index


class DimensionError(InputFormatError):
    pass


class ModelError(AegisError):
    exit_code = 4


class ModelFormatError(ModelError):
    pass


class ModelTruncationError(ModelFormatError):
    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class ModelValidationError(ModelError):
    def __init__(self, message: str, layer_index: int | None = None):
        super().__init__(message)
        self.layer_index = layer_index


class CompileError(ModelValidationError):
    pass


class ParameterError(AegisError, ValueError):
    exit_code = 2


class ShapeError(AegisError, ValueError):
    pass


class NumericError(AegisError, ArithmeticError):
    pass


class BoundsError(AegisError, IndexError):
    pass


class CropError(AegisError, ValueError):
    pass


class NotReadyError(AegisError):
    pass


class StageError(AegisError):
    """A failure inside the running pipeline, tagged with where it happened."""

    def __init__(self, message: str, frame_index: int | None, stage: str,
                 exit_code: int = 5):
        super().__init__(message)
        self.frame_index = frame_index
        self.stage = stage
        self.exit_code = exit_code

    def __str__(self) -> str:
        where = "?" if self.frame_index is None else str(self.frame_index)
        return f"stage {self.stage} failed at frame {where}: {self.args[0]}"
