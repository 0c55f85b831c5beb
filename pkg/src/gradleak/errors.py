from __future__ import annotations

from typing import Optional


class GradleakError(RuntimeError):
    pass


class ShapeError(GradleakError, ValueError):
    pass


class IncompatibleShapes(ShapeError):
    pass


class ShapeMismatch(ShapeError):
    pass


class TraceMismatch(ShapeError):
    pass


class DimensionMismatch(ShapeError):
    pass


class LengthMismatch(ShapeError):
    pass


class DataError(GradleakError, ValueError):
    pass


class EmptyInput(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class SingleClass(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonBinaryProperty(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, *, row: Optional[int] = None, column: Optional[str] = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


class MissingPropertyValue(DataError):
    pass


class BadFractions(DataError):
    pass


class TooManyClients(DataError):
    pass


class ConstantVector(DataError):
    pass


class AllSamplesDegenerate(DataError):
    pass


class DegenerateProfile(DataError):
    pass


class NotParameterizedLayer(DataError):
    pass


class SnapshotOrderError(DataError):
    pass


class ConfigError(GradleakError, ValueError):
    pass


class InvalidConfig(ConfigError):
    pass


class UnknownPreset(ConfigError):
    pass


class ContainerFormatError(ConfigError):
    """A snapshot or dataset file is not a valid gradleak container."""


class StageError(GradleakError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
