"""
Calibration quality measures: parameter errors against a known truth, attitude
error traces, and the same-pose dead-reckoning drift check for field logs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import InputError
from .gyrocal import interval_mean_rates
from .rotations import dcm_to_euler, rotation_angle, so3_exp

DEG = np.pi / 180.0


@dataclass
class DriftReport:
    """
    Attitude drift of a dead-reckoned run whose true start and end poses coincide.
    """

    duration: float
    start_attitude: NDArray[np.float64]
    end_attitude: NDArray[np.float64]
    drift_angle_deg: float
    euler_drift_deg: NDArray[np.float64]
    endpoints_stationary: bool | None = None

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration,
            "start_attitude": self.start_attitude.tolist(),
            "end_attitude": self.end_attitude.tolist(),
            "drift_angle_deg": self.drift_angle_deg,
            "euler_drift_deg": self.euler_drift_deg.tolist(),
            "endpoints_stationary": self.endpoints_stationary,
        }


def rotation_increments(
    t: NDArray[np.float64], rates: NDArray[np.float64]
) -> NDArray[np.float64]:
    """
    Rotation vectors between consecutive samples of a sampled body rate: cubic
    interval mean plus the two-sample coning term.
    """
    dt = np.diff(t)
    phi = interval_mean_rates(t, rates) * dt[:, None]
    phi += (dt[:, None] ** 2 / 12.0) * np.cross(rates[:-1], rates[1:])
    return phi


def dead_reckon(
    t: ArrayLike,
    gyro: ArrayLike,
    cal=None,
    stationary_threshold: float | None = None,
) -> tuple[NDArray[np.float64], DriftReport]:
    """
    Integrate calibrated gyro rates ``K_g y + eps_b`` from the identity attitude.

    Parameters
    ----------
    t : array-like, shape (N,)
    gyro : array-like, shape (N, 3)
        Raw gyroscope samples, rad/s.
    cal : GyroCalibration, optional
        Calibration to apply; ``None`` integrates the raw rates.
    stationary_threshold : float, optional
        If given, the report records whether the first and last samples have
        calibrated rate magnitude below this value.

    Returns
    -------
    attitude : numpy.ndarray, shape (N, 3, 3)
        Body-to-reference attitude at each sample.
    DriftReport
    """
    t = np.asarray(t, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    if len(t) == 0:
        raise InputError("empty series")
    rates = gyro if cal is None else cal.apply(gyro)
    C = np.empty((len(t), 3, 3))
    C[0] = np.eye(3)
    for k, phi in enumerate(rotation_increments(t, rates)):
        C[k + 1] = C[k] @ so3_exp(phi)
    rel = C[0].T @ C[-1]
    try:
        euler = dcm_to_euler(rel) / DEG
    except ValueError:
        euler = np.full(3, np.nan)
    stationary = None
    if stationary_threshold is not None:
        mags = np.linalg.norm(rates[[0, -1]], axis=1)
        stationary = bool(np.all(mags < stationary_threshold))
    report = DriftReport(
        duration=float(t[-1] - t[0]),
        start_attitude=C[0].copy(),
        end_attitude=C[-1].copy(),
        drift_angle_deg=float(np.degrees(rotation_angle(rel))),
        euler_drift_deg=euler,
        endpoints_stationary=stationary,
    )
    return C, report


def compare_params(estimate, truth) -> dict:
    """
    Absolute parameter errors of a calibration against the simulation truth.

    Scale factor in ppm of the true diagonal, non-orthogonality in degrees
    (off-diagonal ``K_g`` entries read as small angles, keys ``"01"``, ``"02"``,
    ``"12"``), bias in deg/s, misalignment per Euler angle and as a total angle
    in degrees.
    """
    dK = estimate.K_g - truth.K_g
    scale_ppm = np.abs(np.diag(dK)) / np.abs(np.diag(truth.K_g)) * 1e6
    nonorth = {f"{i}{j}": float(np.degrees(abs(dK[i, j]))) for i, j in ((0, 1), (0, 2), (1, 2))}
    bias = np.abs(estimate.eps_b - truth.eps_b) / DEG
    eul_est = dcm_to_euler(estimate.C_b_m)
    eul_true = dcm_to_euler(truth.C_b_m)
    eul_err = np.abs(np.angle(np.exp(1j * (eul_est - eul_true)))) / DEG
    return {
        "scale_factor_ppm": scale_ppm.tolist(),
        "nonorthogonality_deg": nonorth,
        "bias_deg_s": bias.tolist(),
        "misalignment_euler_deg": eul_err.tolist(),
        "misalignment_angle_deg": float(
            np.degrees(rotation_angle(estimate.C_b_m @ truth.C_b_m.T))
        ),
    }


def attitude_error_trace(
    t_est: ArrayLike,
    C_est: ArrayLike,
    t_true: ArrayLike,
    C_true: ArrayLike,
    time_tol: float = 1e-9,
) -> NDArray[np.float64]:
    """
    Per-sample angle (deg) of ``C_est' C_true``.

    Raises
    ------
    InputError
        If the two series are not sampled at the same times.
    """
    t_est = np.asarray(t_est, dtype=float)
    t_true = np.asarray(t_true, dtype=float)
    C_est = np.asarray(C_est, dtype=float)
    C_true = np.asarray(C_true, dtype=float)
    if t_est.shape != t_true.shape or np.any(np.abs(t_est - t_true) > time_tol):
        raise InputError("attitude series are not time-aligned")
    rel = np.einsum("nji,njk->nik", C_est, C_true)
    w = 0.5 * np.stack(
        [rel[:, 2, 1] - rel[:, 1, 2], rel[:, 0, 2] - rel[:, 2, 0], rel[:, 1, 0] - rel[:, 0, 1]],
        axis=1,
    )
    c = 0.5 * (np.trace(rel, axis1=1, axis2=2) - 1.0)
    return np.degrees(np.arctan2(np.linalg.norm(w, axis=1), c))


def convergence_index(attitude_cov_trace: ArrayLike, factor: float = 10.0) -> int:
    """
    First sample, at or after the peak, where the attitude covariance trace is
    below `factor` times its final (asymptotic) value.
    """
    tr = np.asarray(attitude_cov_trace, dtype=float)
    asymptote = tr[-1]
    peak = int(np.argmax(tr))
    below = np.nonzero(tr[peak:] < factor * asymptote)[0]
    return peak + int(below[0]) if len(below) else len(tr) - 1
