"""
Domain exceptions for the region-mining workbench
Provides one error hierarchy and a consistent error record format

This file defines:
1. MinerError, the root of every domain error, carrying a process exit code
2. One subclass family per failure class (config, data, training, numeric)
3. error_record(), which renders any exception in the JSON envelope
   written next to failed command outputs
"""

import logging

# Get logger for this module
logger = logging.getLogger(__name__)


class MinerError(Exception):
    """
    Base class for all domain errors

    Every subclass carries the exit code used by the management
    commands, so a failing stage maps to a stable process status.

    Attributes:
        exit_code (int): Process exit code for this failure class
        details (dict): Optional machine-readable context
    """

    exit_code = 1

    def __init__(self, message, details=None):
        super().__init__(message)
        self.message = message
        self.details = dict(details or {})


# Configuration errors (exit 2)


class ConfigurationError(MinerError):
    """
    Raised when a configuration value cannot be used

    This can happen due to:
    - RunConfig failing validation (unknown keys, bad ranges)
    - Layer hyper-parameters that give a non-integer output size
    - More categories requested than there are shape families
    """

    exit_code = 2


# Data errors (exit 3)


class DataError(MinerError):
    """Raised when input artifacts are missing, corrupt or inconsistent"""

    exit_code = 3


class MissingArtifactError(DataError):
    """
    Raised when a stage input does not exist

    Usage:
        raise MissingArtifactError("missing artifact: pools/", {"path": "..."})
    """


class ChecksumError(DataError):
    """Raised when a stored blob does not match its recorded SHA-256"""


class FormatVersionError(DataError):
    """Raised when a manifest was written by an incompatible format version"""


class SceneGenerationError(DataError):
    """
    Raised when a synthetic scene cannot be generated

    This can happen due to:
    - Object placement failing after the rejection-sampling budget
      (the dataset spec is too crowded for the image size)
    """


class LabelError(DataError):
    """Raised when classification targets are not binary"""


# Training errors (exit 4)


class TrainingError(MinerError):
    """Raised when a training procedure cannot continue"""

    exit_code = 4


class PretrainingFailedError(TrainingError):
    """
    Raised when the pretrained classifier misses the macro-F1 gate

    The details dict contains the final metrics so the failed run is
    still diagnosable from error.json.
    """


class MissingGradientError(TrainingError):
    """Raised when an optimizer step finds a trainable parameter without gradient"""


class MergeError(TrainingError):
    """Raised when an empty region map pool is merged"""


class PoolClosedError(TrainingError):
    """
    Raised when a region map pool is modified against its invariants

    This can happen due to:
    - Appending to a pool that is already stopped
    - Appending a map whose step does not exceed the last stored step
    """


class InsufficientDataError(TrainingError):
    """
    Raised when there is not enough data to compute a statistic

    Usage:
        raise InsufficientDataError("need at least 20 (area, steps) pairs")
    """


# Numeric errors (exit 5)


class NumericError(MinerError):
    """Raised when tensor math fails"""

    exit_code = 5


class NonFiniteError(NumericError):
    """Raised when a forward or backward pass produces NaN or Inf"""


class DimensionError(NumericError):
    """Raised when operand shapes are incompatible"""


class DivergenceError(NumericError):
    """Raised when minimax training produces a NaN loss"""


def error_record(exc):
    """
    Render an exception as the standard error envelope

    Args:
        exc (Exception): The exception that stopped a command

    Returns:
        dict: Error record in the format
            {
                "error": true,
                "message": "Human-readable error message",
                "exit_code": 3,
                "error_type": "MissingArtifactError",
                "details": {...}
            }
    """

    if isinstance(exc, MinerError):
        record = {
            "error": True,
            "message": exc.message,
            "exit_code": exc.exit_code,
            "error_type": type(exc).__name__,
            "details": exc.details,
        }
        logger.error(f"{type(exc).__name__}: {exc.message} | exit {exc.exit_code}")
    else:
        # Unexpected error, keep the generic failure code
        record = {
            "error": True,
            "message": str(exc),
            "exit_code": MinerError.exit_code,
            "error_type": type(exc).__name__,
            "details": {},
        }
        logger.exception(f"Unhandled exception: {exc}")

    return record
