"""Magnetometer-aided gyroscope calibration."""

from .errors import CalibrationError, DivergenceError, ExcitationError, InputError, LogFormatError
from .gyrocal import (
    CalibrationOptions,
    FilterState,
    GyroCalibration,
    NoiseConfig,
    recover_parameters,
    run_calibration,
)
from .logio import RawLog, parse_log, write_log
from .magcal import MagCalReport, MagIntrinsics

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "CalibrationOptions",
    "DivergenceError",
    "ExcitationError",
    "FilterState",
    "GyroCalibration",
    "InputError",
    "LogFormatError",
    "MagCalReport",
    "MagIntrinsics",
    "NoiseConfig",
    "RawLog",
    "parse_log",
    "recover_parameters",
    "run_calibration",
    "write_log",
]
