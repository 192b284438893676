from __future__ import annotations

from typing import Any, Optional


class TwinError(RuntimeError):
    kind = "twin"


class SchemaError(TwinError):
    kind = "schema"


class DataError(TwinError):
    kind = "data"

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ConfigurationError(TwinError):
    kind = "configuration"


class InsufficientDataError(TwinError):
    kind = "insufficient-data"


class DegenerateChannelError(TwinError):
    kind = "degenerate-channel"


class DimensionError(TwinError, ValueError):
    kind = "dimension"


class TrainingError(TwinError):
    kind = "training"


class ModelFormatError(TwinError):
    kind = "model-format"


class ModelVersionError(ModelFormatError):
    kind = "model-version"


class ModelChecksumError(ModelFormatError):
    kind = "model-checksum"


class CalibrationError(TwinError):
    kind = "calibration"


class StreamError(TwinError):
    kind = "stream"

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ProbabilityError(TwinError):
    kind = "undefined-probability"


class UnsupportedModelError(TwinError):
    kind = "unsupported"


class ScenarioError(TwinError):
    kind = "scenario"


class ArtifactError(TwinError):
    kind = "usage"


class DeliveryError(TwinError):
    kind = "delivery"

    def __init__(self, message: str, report: Any = None) -> None:
        super().__init__(message)
        self.report = report
