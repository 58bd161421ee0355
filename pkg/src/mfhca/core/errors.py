"""Error handling for mfhca."""

import sys
from typing import NoReturn


class MfhcaError(Exception):
    """Base exception for mfhca errors."""

    exit_code = 1


class UsageError(MfhcaError):
    """Invalid command-line usage."""

    exit_code = 1


class GraphError(MfhcaError, RuntimeError):
    """Misuse of the autodiff graph (non-scalar backward, double backward)."""

    exit_code = 1


class DataError(MfhcaError):
    """Invalid input data or validation failure."""

    exit_code = 2


class ShapeError(DataError, ValueError):
    """Tensor dimensions do not conform."""


class ConfigError(DataError):
    """Invalid configuration value or file."""


class AudioError(DataError):
    """Unreadable or unsupported audio file."""


class FeatureFileError(DataError):
    """Invalid MFH1 feature file."""


class BadMagicError(FeatureFileError):
    """File does not start with the expected magic bytes."""


class TruncatedPayloadError(FeatureFileError):
    """Payload length disagrees with the header."""


class EmptyFeatureError(FeatureFileError):
    """Feature matrix has zero rows."""


class ManifestError(DataError):
    """Invalid dataset manifest."""


class CheckpointError(DataError):
    """Invalid or incompatible checkpoint."""


class MissingParameterError(CheckpointError):
    """Checkpoint lacks a parameter the model expects."""


class ParameterShapeError(CheckpointError):
    """Checkpoint tensor shape disagrees with the model configuration."""


class NumericalError(MfhcaError):
    """NaN/Inf encountered during computation."""

    exit_code = 3


def handle_error(message: str, exit_code: int = 1) -> NoReturn:
    """Print error message and exit with given code."""
    print(f"Error: {message}", file=sys.stderr)
    sys.exit(exit_code)
