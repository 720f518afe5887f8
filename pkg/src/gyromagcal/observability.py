"""
Excitation diagnostics for magnetometer-aided gyroscope calibration.

The calibrated field seen in the magnetometer frame obeys

    d/dt m = m x (K y + eps) = M(y, m) @ [vec(K); eps],
    M(y, m) = [y' kron skew(m), skew(m)]          (3 x 12)

so the twelve gyro parameters are identifiable once the excitation Gramian
``int M'M dt`` is nonsingular (with the initial magnetometer frame taken as the
inertial frame).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ExcitationError, InputError
from .rotations import kron, skew

RANK_RTOL = 1e-10
WARN_CONDITION = 1e6


def build_M(y_g: ArrayLike, m_hat: ArrayLike) -> NDArray[np.float64]:
    """The 3x12 matrix ``[y_g' kron skew(m_hat), skew(m_hat)]``."""
    S = skew(m_hat)
    return np.hstack([kron(np.asarray(y_g, dtype=float), S), S])


def skew_batch(v: NDArray[np.float64]) -> NDArray[np.float64]:
    S = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    S[..., 0, 1], S[..., 0, 2] = -z, y
    S[..., 1, 0], S[..., 1, 2] = z, -x
    S[..., 2, 0], S[..., 2, 1] = -y, x
    return S


def build_M_batch(gyro: NDArray[np.float64], mag: NDArray[np.float64]) -> NDArray[np.float64]:
    """Vectorized :func:`build_M` over (N, 3) series; returns shape (N, 3, 12)."""
    S = skew_batch(mag)
    M = np.empty((len(gyro), 3, 12))
    for j in range(3):
        M[:, :, 3 * j : 3 * j + 3] = gyro[:, j, None, None] * S
    M[:, :, 9:12] = S
    return M


def _check_series(t, mag, gyro):
    t = np.asarray(t, dtype=float)
    mag = np.asarray(mag, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    if len(t) == 0:
        raise InputError("empty series")
    if mag.shape != (len(t), 3) or gyro.shape != (len(t), 3):
        raise InputError("time, magnetometer and gyroscope series must be aligned (N, 3)")
    return t, mag, gyro


def _trapz_weights(t: NDArray[np.float64]) -> NDArray[np.float64]:
    w = np.zeros(len(t))
    if len(t) > 1:
        dt = np.diff(t)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
    return w


@dataclass
class ExcitationReport:
    """
    Attributes
    ----------
    gramian : numpy.ndarray, shape (12, 12)
        Trapezoidal ``int M'M dt``.
    rank : int
        Numerical rank, singular values above ``1e-10 * sigma_max``.
    condition_number : float
        ``sigma_max / sigma_min`` (inf when singular).
    smallest_singular_value : float
    axes_excited : numpy.ndarray, shape (3,)
        Integrated absolute body rate per axis (rad).
    """

    gramian: NDArray[np.float64]
    rank: int
    condition_number: float
    smallest_singular_value: float
    axes_excited: NDArray[np.float64]

    @property
    def sufficient(self) -> bool:
        return self.rank == 12

    @property
    def warning(self) -> str | None:
        if not self.sufficient:
            return "insufficient excitation: Gramian is rank deficient"
        if self.condition_number > WARN_CONDITION:
            return (
                f"weak excitation: Gramian condition number {self.condition_number:.3g} "
                f"exceeds {WARN_CONDITION:.0e}"
            )
        return None

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "condition_number": _finite_or_none(self.condition_number),
            "smallest_singular_value": self.smallest_singular_value,
            "axes_excited_rad": self.axes_excited.tolist(),
            "warning": self.warning,
            "gramian": self.gramian.tolist(),
        }


def _finite_or_none(x: float):
    return float(x) if np.isfinite(x) else None


def gramian(
    t: ArrayLike,
    mag: ArrayLike,
    gyro: ArrayLike,
    K: ArrayLike | None = None,
    eps: ArrayLike | None = None,
) -> ExcitationReport:
    """
    Excitation Gramian and rank diagnostics of a calibrated-magnetometer and raw
    gyroscope series.

    Parameters
    ----------
    t : array-like, shape (N,)
        Sample times in seconds.
    mag : array-like, shape (N, 3)
        Calibrated magnetometer samples.
    gyro : array-like, shape (N, 3)
        Raw gyroscope samples (rad/s).
    K, eps : array-like, optional
        Gyro model used to form body rates for ``axes_excited``; identity and zero
        by default.
    """
    t, mag, gyro = _check_series(t, mag, gyro)
    M = build_M_batch(gyro, mag)
    w = _trapz_weights(t)
    G = np.einsum("n,nki,nkj->ij", w, M, M)
    G = 0.5 * (G + G.T)
    s = np.linalg.svd(G, compute_uv=False)
    smax = s[0]
    rank = int(np.sum(s > RANK_RTOL * smax)) if smax > 0 else 0
    cond = smax / s[-1] if s[-1] > 0 else np.inf

    K = np.eye(3) if K is None else np.asarray(K, dtype=float)
    eps = np.zeros(3) if eps is None else np.asarray(eps, dtype=float)
    rates = gyro @ K.T + eps
    axes = w @ np.abs(rates)
    return ExcitationReport(G, rank, float(cond), float(s[-1]), axes)


def solve_closed_form(
    t: ArrayLike, mag: ArrayLike, gyro: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Gramian-weighted solution ``(int M'M)^-1 int M' dm/dt``.

    The field derivative is taken by central differences, which makes this solver
    unsuitable for noisy data; it is kept as a reference for noise-free checks.

    Returns
    -------
    vec_K : numpy.ndarray, shape (9,)
    eps : numpy.ndarray, shape (3,)

    Raises
    ------
    ExcitationError
        If the Gramian is singular.
    """
    t, mag, gyro = _check_series(t, mag, gyro)
    if len(t) < 3:
        raise InputError("need at least 3 samples for differentiation")
    M = build_M_batch(gyro, mag)
    dm = np.gradient(mag, t, axis=0, edge_order=2)
    w = _trapz_weights(t)
    G = np.einsum("n,nki,nkj->ij", w, M, M)
    b = np.einsum("n,nki,nk->i", w, M, dm)
    s = np.linalg.svd(G, compute_uv=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise ExcitationError("insufficient excitation: Gramian is singular")
    x = np.linalg.solve(G, b)
    return x[:9], x[9:]
