"""
Taxonomía de errores del laboratorio.

Cada error lleva el código de salida que usa la CLI: 2 para configuración,
3 para datos y 4 para violaciones de invariantes internos.
"""
from typing import Optional


class DefectLabError(Exception):
    """Error base con código de salida asociado"""

    exit_code = 4
    kind = "InternalError"

    def __init__(self, detail: str, line: Optional[int] = None):
        self.detail = detail
        self.line = line
        message = f"línea {line}: {detail}" if line is not None else detail
        super().__init__(message)


# Errores de configuración (exit 2)
class ConfigError(DefectLabError):
    exit_code = 2
    kind = "ConfigError"


class ConfigFileError(ConfigError):
    kind = "ConfigFileError"


class UnknownModelError(ConfigError):
    kind = "UnknownModel"


class UnknownPipelineNameError(ConfigError):
    kind = "UnknownPipelineName"


# Errores de datos (exit 3)
class DataError(DefectLabError):
    exit_code = 3
    kind = "DataError"


class MalformedHeaderError(DataError):
    kind = "MalformedHeader"


class ArityMismatchError(DataError):
    kind = "ArityMismatch"


class NonNumericFeatureError(DataError):
    kind = "NonNumericFeature"


class UnknownLabelValueError(DataError):
    kind = "UnknownLabelValue"


class MissingValueError(DataError):
    kind = "MissingValue"


class EmptyDatasetError(DataError):
    kind = "EmptyDataset"


class SingleClassDatasetError(DataError):
    kind = "SingleClassDataset"


class TooFewInstancesForFoldsError(DataError):
    kind = "TooFewInstancesForFolds"


class FoldTooSmallError(DataError):
    kind = "FoldTooSmall"


class KTooLargeError(DataError):
    kind = "KTooLarge"


class SingleClassActualsError(DataError):
    kind = "SingleClassActuals"


class SchemaMismatchError(DataError):
    kind = "SchemaMismatch"


class ReportMismatchError(DataError):
    kind = "ReportMismatch"


class ChecksumMismatchError(DataError):
    kind = "ChecksumMismatch"


class DatasetNotFoundError(DataError):
    kind = "DatasetNotFound"


# Invariantes internos (exit 4)
class InvariantViolationError(DefectLabError):
    exit_code = 4
    kind = "InvariantViolation"
