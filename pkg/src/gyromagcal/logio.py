"""
RawLog container and the CSV log format.

The log is a plain CSV file with the exact header ``t,gx,gy,gz,mx,my,mz``:
time in seconds, gyroscope in rad/s, magnetometer in raw sensor units. One row
per synchronized sample, timestamps strictly increasing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import LogFormatError

HEADER = ["t", "gx", "gy", "gz", "mx", "my", "mz"]


@dataclass
class RawLog:
    t: NDArray[np.float64]
    gyro: NDArray[np.float64]
    mag: NDArray[np.float64]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        self.mag = np.asarray(self.mag, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.gyro) == len(self.mag)):
            raise ValueError("t, gyro and mag must have the same number of samples")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def sample_rate(self) -> float | None:
        if len(self.t) < 2:
            return None
        return float(1.0 / np.median(np.diff(self.t)))

    def slice(self, start: int, stop: int) -> "RawLog":
        return RawLog(self.t[start:stop], self.gyro[start:stop], self.mag[start:stop], dict(self.metadata))


def parse_log(path) -> RawLog:
    """
    Read and validate a CSV log.

    Raises
    ------
    LogFormatError
        On a missing/malformed header, empty file, wrong column count,
        non-numeric or non-finite values, or non-increasing timestamps. The
        message carries the file line number.
    """
    path = Path(path)
    if not path.exists():
        raise LogFormatError("file not found", path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogFormatError("empty file", path) from None
        header = [h.strip() for h in header]
        if header != HEADER:
            raise LogFormatError(
                f"malformed header {','.join(header)!r}, expected {','.join(HEADER)!r}", path, 1
            )
        rows = []
        prev_t = -math.inf
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HEADER):
                raise LogFormatError(
                    f"expected {len(HEADER)} columns, got {len(row)}", path, line_no
                )
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise LogFormatError("non-numeric value", path, line_no) from None
            if not all(math.isfinite(v) for v in values):
                raise LogFormatError("non-finite value", path, line_no)
            if values[0] <= prev_t:
                raise LogFormatError(
                    f"timestamp {values[0]!r} is not strictly increasing", path, line_no
                )
            prev_t = values[0]
            rows.append(values)
    if not rows:
        raise LogFormatError("empty file: no data rows", path)
    data = np.array(rows)
    return RawLog(data[:, 0], data[:, 1:4], data[:, 4:7], {"source": str(path)})


def write_log(log: RawLog, path) -> Path:
    """Write `log` as CSV with 17 significant digits (lossless float64 round trip)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([log.t, log.gyro, log.mag])
    with path.open("w", newline="") as fh:
        fh.write(",".join(HEADER) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return path
