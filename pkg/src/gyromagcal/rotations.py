"""
Rotation and small-matrix primitives.

Conventions used throughout the package:

* ``C_a_b`` is a direction cosine matrix mapping vectors expressed in frame
  ``a`` into frame ``b`` (``v_b = C_a_b @ v_a``).
* Euler angles are ``(roll, pitch, yaw)`` in radians with the ZYX (yaw-pitch-roll)
  sequence, i.e. ``C = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
* ``vec`` stacks matrix columns (Fortran order).
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

_SMALL_ANGLE = 1e-8
_EYE3 = np.eye(3)
_EYE3.flags.writeable = False


class GimbalLockError(ValueError):
    """Raised when Euler angles are requested at (or too near) pitch = +/-90 deg."""


class ImproperRotationError(ValueError):
    """Raised when a sign-normalized QR factor turns out to be a reflection."""


def skew(v: ArrayLike) -> NDArray[np.float64]:
    """
    Skew-symmetric cross-product matrix, ``skew(v) @ w == np.cross(v, w)``.
    """
    x, y, z = np.asarray(v, dtype=float)
    return np.array(
        [
            [0.0, -z, y],
            [z, 0.0, -x],
            [-y, x, 0.0],
        ]
    )


def so3_exp(phi: ArrayLike) -> NDArray[np.float64]:
    """
    Rotation matrix of the rotation vector `phi` (Rodrigues formula).

    Parameters
    ----------
    phi : array-like, shape (3,)
        Rotation vector in radians.

    Returns
    -------
    numpy.ndarray, shape (3, 3)
        Proper rotation matrix.
    """
    phi = np.asarray(phi, dtype=float)
    angle = np.sqrt(phi @ phi)
    S = skew(phi)
    if angle < _SMALL_ANGLE:
        return _EYE3 + S + 0.5 * (S @ S)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / angle**2
    return _EYE3 + a * S + b * (S @ S)


def so3_log(C: ArrayLike) -> NDArray[np.float64]:
    """
    Rotation vector of the rotation matrix `C`, inverse of :func:`so3_exp`.

    Raises
    ------
    ValueError
        If the rotation angle is within 1e-6 rad of pi, where the axis is ambiguous.
    """
    C = np.asarray(C, dtype=float)
    w = 0.5 * np.array([C[2, 1] - C[1, 2], C[0, 2] - C[2, 0], C[1, 0] - C[0, 1]])
    cos_angle = np.clip(0.5 * (np.trace(C) - 1.0), -1.0, 1.0)
    sin_angle = np.sqrt(w @ w)
    angle = np.arctan2(sin_angle, cos_angle)
    if angle > np.pi - 1e-6:
        raise ValueError("rotation angle too close to pi; axis is ambiguous")
    if angle < _SMALL_ANGLE:
        # sin(x)/x ~ 1 - x^2/6
        return w * (1.0 + angle**2 / 6.0)
    return w * (angle / sin_angle)


def rotation_angle(C: ArrayLike) -> float:
    """Total rotation angle (rad) of `C`, valid over the full range [0, pi]."""
    C = np.asarray(C, dtype=float)
    w = 0.5 * np.array([C[2, 1] - C[1, 2], C[0, 2] - C[2, 0], C[1, 0] - C[0, 1]])
    return float(np.arctan2(np.sqrt(w @ w), 0.5 * (np.trace(C) - 1.0)))


def attitude_error_deg(C_est: ArrayLike, C_true: ArrayLike) -> float:
    """Angle in degrees of ``C_est.T @ C_true``."""
    return float(np.degrees(rotation_angle(np.asarray(C_est).T @ np.asarray(C_true))))


def euler_to_dcm(euler: ArrayLike) -> NDArray[np.float64]:
    """
    Direction cosine matrix from ZYX Euler angles ``(roll, pitch, yaw)`` [rad].

    The returned matrix maps body-frame vectors to the reference frame.
    """
    roll, pitch, yaw = np.asarray(euler, dtype=float)
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def dcm_to_euler(C: ArrayLike) -> NDArray[np.float64]:
    """
    ZYX Euler angles ``(roll, pitch, yaw)`` [rad] of the direction cosine matrix `C`.

    Raises
    ------
    GimbalLockError
        If ``|C[2, 0]| >= 1 - 1e-9`` (pitch at +/-90 deg).
    """
    C = np.asarray(C, dtype=float)
    if abs(C[2, 0]) >= 1.0 - 1e-9:
        raise GimbalLockError("pitch is at +/-90 deg; roll and yaw are not separable")
    roll = np.arctan2(C[2, 1], C[2, 2])
    pitch = -np.arcsin(C[2, 0])
    yaw = np.arctan2(C[1, 0], C[0, 0])
    return np.array([roll, pitch, yaw])


def vec(M: ArrayLike) -> NDArray[np.float64]:
    """Stack the columns of `M` into a vector."""
    return np.asarray(M, dtype=float).reshape(-1, order="F")


def unvec(v: ArrayLike, rows: int = 3) -> NDArray[np.float64]:
    """Inverse of :func:`vec` for a matrix with `rows` rows."""
    return np.asarray(v, dtype=float).reshape(rows, -1, order="F")


def kron(A: ArrayLike, B: ArrayLike) -> NDArray[np.float64]:
    """
    Kronecker product. A 1-D `A` is treated as a row vector, so
    ``kron(y, S)`` with ``y.shape == (3,)`` has shape (3, 9).
    """
    return np.kron(np.atleast_2d(np.asarray(A, dtype=float)), np.asarray(B, dtype=float))


def orthonormalize(C: ArrayLike) -> NDArray[np.float64]:
    """Nearest rotation matrix to `C` in the Frobenius sense (via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(C, dtype=float))
    R = U @ Vt
    if np.linalg.det(R) < 0.0:
        U[:, -1] *= -1.0
        R = U @ Vt
    return R


def qr_posdiag(K: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    QR decomposition ``K = Q @ R`` with a proper rotation ``Q`` and an upper
    triangular ``R`` having a strictly positive diagonal.

    Parameters
    ----------
    K : array-like, shape (3, 3)
        Nonsingular matrix.

    Returns
    -------
    Q : numpy.ndarray, shape (3, 3)
        Rotation matrix, ``det(Q) = +1``.
    R : numpy.ndarray, shape (3, 3)
        Upper triangular matrix with positive diagonal.

    Raises
    ------
    numpy.linalg.LinAlgError
        If `K` is singular (``|det K| <= 1e-12``).
    ImproperRotationError
        If ``det K < 0``; no proper rotation with a positive-diagonal factor exists.
    """
    K = np.asarray(K, dtype=float)
    det = np.linalg.det(K)
    if abs(det) <= 1e-12:
        raise np.linalg.LinAlgError(f"matrix is singular (det = {det:.3e})")
    Q, R = np.linalg.qr(K)
    signs = np.sign(np.diag(R))
    Q = Q * signs
    R = signs[:, None] * R
    if np.linalg.det(Q) < 0.0:
        raise ImproperRotationError(
            "sign-normalized orthogonal factor is a reflection (det K < 0)"
        )
    return Q, np.triu(R)
