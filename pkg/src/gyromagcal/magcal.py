"""
Intrinsic magnetometer calibration.

The calibrated field is ``m = R @ (y - h)`` with ``R`` upper triangular and the
local field normalized to unit norm. ``R`` and ``h`` are found from raw samples
alone by requiring ``||R (y_k - h)|| = 1`` for every sample: a linear quadric fit
gives the starting point and a damped Gauss-Newton iteration refines it.

The rotation part of the soft-iron distortion cannot be seen through norms and
is left for the gyroscope/magnetometer misalignment to absorb.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DivergenceError, ExcitationError, InputError

_TRIU = np.triu_indices(3)


@dataclass(frozen=True)
class MagIntrinsics:
    """
    Magnetometer intrinsic parameters.

    Attributes
    ----------
    R : numpy.ndarray, shape (3, 3)
        Upper triangular shape matrix with positive diagonal.
    h : numpy.ndarray, shape (3,)
        Hard-iron offset in raw sensor units.
    """

    R: NDArray[np.float64]
    h: NDArray[np.float64]

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        h = np.asarray(self.h, dtype=float)
        if R.shape != (3, 3) or h.shape != (3,):
            raise ValueError("R must be 3x3 and h a 3-vector")
        if np.any(np.tril(R, -1) != 0.0):
            raise ValueError("R must be upper triangular")
        if np.any(np.diag(R) <= 0.0):
            raise ValueError("R must have a strictly positive diagonal")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "MagIntrinsics":
        return cls(np.eye(3), np.zeros(3))

    def to_dict(self) -> dict:
        return {"R": self.R.tolist(), "h": self.h.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MagIntrinsics":
        return cls(np.array(d["R"], dtype=float), np.array(d["h"], dtype=float))


@dataclass(frozen=True)
class MagCalReport:
    intrinsics: MagIntrinsics
    norm_residual_rms: float
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.to_dict(),
            "norm_residual_rms": self.norm_residual_rms,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def apply(intrinsics: MagIntrinsics, y_m: ArrayLike) -> NDArray[np.float64]:
    """
    Calibrated magnetometer measurement(s) ``R @ (y_m - h)``.

    Accepts a single sample of shape (3,) or a batch of shape (N, 3). No
    normalization is applied.
    """
    y_m = np.asarray(y_m, dtype=float)
    return (y_m - intrinsics.h) @ intrinsics.R.T


def norm_residuals(intrinsics: MagIntrinsics, samples: ArrayLike) -> NDArray[np.float64]:
    """``||R (y_k - h)|| - 1`` for every sample."""
    return np.linalg.norm(apply(intrinsics, samples), axis=1) - 1.0


def _as_samples(samples: ArrayLike) -> NDArray[np.float64]:
    y = np.asarray(samples, dtype=float)
    if y.ndim != 2 or y.shape[1] != 3:
        raise InputError(f"expected an (N, 3) array of samples, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InputError("magnetometer samples contain non-finite values")
    return y


def fit_initial(samples: ArrayLike) -> MagIntrinsics:
    """
    Closed-form ellipsoid fit.

    Fits the general quadric ``x'Ax + 2b'x + c = 0`` by total least squares (the
    right singular vector of the smallest singular value), recenters it and
    Cholesky-factors the normalized shape matrix into ``R' R``.

    Parameters
    ----------
    samples : array-like, shape (N, 3)
        Raw magnetometer readings, N >= 9.

    Returns
    -------
    MagIntrinsics

    Raises
    ------
    InputError
        If fewer than 9 samples are given.
    ExcitationError
        If the fitted quadric is not an ellipsoid (insufficient attitude coverage).
    """
    y = _as_samples(samples)
    if len(y) < 9:
        raise InputError(f"ellipsoid fit needs at least 9 samples, got {len(y)}")

    # Condition the design matrix: work around the centroid, in units of the spread.
    center0 = y.mean(axis=0)
    scale0 = np.sqrt(np.mean(np.sum((y - center0) ** 2, axis=1)))
    if scale0 == 0.0:
        raise ExcitationError("insufficient attitude coverage: all samples identical")
    x = (y - center0) / scale0

    X, Y, Z = x.T
    D = np.column_stack(
        [X * X, Y * Y, Z * Z, 2 * X * Y, 2 * X * Z, 2 * Y * Z, 2 * X, 2 * Y, 2 * Z, np.ones(len(x))]
    )
    _, s, Vt = np.linalg.svd(D, full_matrices=False)
    v = Vt[-1]
    A = np.array(
        [
            [v[0], v[3], v[4]],
            [v[3], v[1], v[5]],
            [v[4], v[5], v[2]],
        ]
    )
    b = v[6:9]
    c = v[9]
    if np.trace(A) < 0:
        A, b, c = -A, -b, -c
    try:
        center = -np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ExcitationError("insufficient attitude coverage: degenerate quadric") from exc
    # (x - center)' A (x - center) = center' A center - c
    k = center @ A @ center - c
    if k <= 0:
        raise ExcitationError("insufficient attitude coverage: fitted quadric is not an ellipsoid")
    A = A / k
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise ExcitationError(
            "insufficient attitude coverage: fitted quadric is not positive definite"
        ) from exc
    R = np.triu(L.T) / scale0
    h = center0 + scale0 * center
    return MagIntrinsics(R, h)


def _pack(intr: MagIntrinsics) -> NDArray[np.float64]:
    return np.concatenate([intr.R[_TRIU], intr.h])


def _unpack(p: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    R = np.zeros((3, 3))
    R[_TRIU] = p[:6]
    return R, p[6:9]


def _residual_and_jacobian(p, y):
    R, h = _unpack(p)
    u = y - h
    v = u @ R.T
    r = np.sum(v * v, axis=1) - 1.0
    J = np.empty((len(y), 9))
    # d r / d R_ij = 2 v_i u_j for the upper-triangular entries
    for col, (i, j) in enumerate(zip(*_TRIU)):
        J[:, col] = 2.0 * v[:, i] * u[:, j]
    J[:, 6:9] = -2.0 * v @ R
    return r, J


def _cost(p, y) -> float:
    R, h = _unpack(p)
    v = (y - h) @ R.T
    r = np.sum(v * v, axis=1) - 1.0
    return float(r @ r)


def refine(
    samples: ArrayLike,
    init: MagIntrinsics,
    max_iterations: int = 50,
    step_tol: float = 1e-10,
) -> MagCalReport:
    """
    Gauss-Newton refinement of the intrinsics.

    Minimizes ``sum_k (||R (y_k - h)||^2 - 1)^2`` over the six upper-triangular
    entries of ``R`` and the three entries of ``h``. A step that increases the cost
    is halved up to 8 times.

    Raises
    ------
    DivergenceError
        If 5 consecutive steps increase the cost even after damping.
    """
    y = _as_samples(samples)
    if np.linalg.det(init.R) == 0.0:
        raise InputError("initial R is singular")
    p = _pack(init)
    cost = _cost(p, y)
    converged = False
    failures = 0
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        r, J = _residual_and_jacobian(p, y)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        if np.linalg.norm(step) < step_tol:
            converged = True
            break
        for _ in range(9):
            p_try = p + step
            cost_try = _cost(p_try, y)
            if cost_try <= cost * (1.0 + 1e-12):
                break
            step = 0.5 * step
        if cost_try > cost * (1.0 + 1e-12):
            failures += 1
            if failures >= 5:
                raise DivergenceError("refine diverged: cost kept increasing after damping")
        else:
            failures = 0
        p, cost = p_try, cost_try
        if np.linalg.norm(step) < step_tol:
            converged = True
            break

    R, h = _unpack(p)
    # Row signs of R do not change ||R u||; keep the diagonal positive.
    R = np.sign(np.diag(R))[:, None] * R
    intr = MagIntrinsics(np.triu(R), h)
    rms = float(np.sqrt(np.mean(norm_residuals(intr, y) ** 2)))
    return MagCalReport(intr, rms, iterations, converged)


def calibrate(samples: ArrayLike) -> MagCalReport:
    """Initial fit followed by Gauss-Newton refinement."""
    return refine(samples, fit_initial(samples))
