"""
Magnetometer-aided gyroscope calibration.

State-space model, with ``m`` the (calibrated, equivalent) magnetometer frame and
``i`` the inertial frame fixed to the initial magnetometer frame::

    d/dt C_m_i = C_m_i skew(K y_g + eps + n)
    d/dt K = 0,  d/dt eps = 0,  d/dt m_i ~ 0
    m_hat = C_m_i' m_i + n_m

``K = C_b_m K_g`` and ``eps = C_b_m eps_b``, so the gyro-frame scale/non-orthogonality
matrix ``K_g``, bias ``eps_b`` and misalignment ``C_b_m`` follow from a QR
decomposition of ``K``.

Error-state convention (used by every Jacobian and by the feedback step):

* attitude: ``C_true = C_est @ so3_exp(dphi)`` (right-multiplicative, m-frame error),
* ``vec(K)``, ``eps``, ``m_i``: additive,
* ordering ``[dphi(3), dvecK(9), deps(3), dm_i(3)]``.

Linearized continuous-time error dynamics::

    d/dt dphi = -skew(w) dphi + (y' kron I3) dvecK + deps + n,   w = K y + eps

and the measurement Jacobian is ``H = [skew(C' m_i), 0, 0, C']``. No covariance
reset is applied after feedback (the attitude correction is small).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import magcal
from .errors import ExcitationError, InputError
from .observability import build_M_batch
from .rotations import orthonormalize, qr_posdiag, skew, so3_exp, unvec, vec

STATE_DIM = 18
ATT, VK, EPS, MI = slice(0, 3), slice(3, 12), slice(12, 15), slice(15, 18)
STATE_LABELS = (
    ["att_x", "att_y", "att_z"]
    + [f"K{r}{c}" for c in range(3) for r in range(3)]
    + ["eps_x", "eps_y", "eps_z", "mi_x", "mi_y", "mi_z"]
)

DEG = np.pi / 180.0

_I3 = np.eye(3)
_I18 = np.eye(STATE_DIM)
_I3_ROWS = np.arange(3)
_KRON_ROWS = np.tile(_I3_ROWS, 3)
_KRON_COLS = np.arange(3, 12)


@dataclass
class NoiseConfig:
    """
    Filter noise model and tuning.

    Attributes
    ----------
    gyro_noise_density : float
        Gyroscope white-noise density, rad/s/sqrt(Hz).
    mag_noise_std : float
        Calibrated magnetometer noise standard deviation (unitless).
    init_std_attitude, init_std_K, init_std_eps, init_std_mi : float
        Initial standard deviations of each error block (rad, -, rad/s, -).
    q_K, q_eps, q_mi : float
        Random-walk spectral densities (variance per second) for the parameter blocks.
    """

    gyro_noise_density: float = 0.02 * DEG
    mag_noise_std: float = 0.01
    init_std_attitude: float = 0.0
    init_std_K: float = 0.02
    init_std_eps: float = 0.5 * DEG
    init_std_mi: float = 0.03
    q_K: float = 0.0
    q_eps: float = 0.0
    q_mi: float = 1e-12

    def __post_init__(self):
        for name, value in vars(self).items():
            if not np.isfinite(value) or value < 0:
                raise InputError(f"noise parameter {name} must be finite and nonnegative")
        if self.mag_noise_std <= 0:
            raise InputError("mag_noise_std must be positive")

    def initial_covariance(self) -> NDArray[np.float64]:
        d = np.concatenate(
            [
                np.full(3, self.init_std_attitude**2),
                np.full(9, self.init_std_K**2),
                np.full(3, self.init_std_eps**2),
                np.full(3, self.init_std_mi**2),
            ]
        )
        return np.diag(d)

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class CalibrationOptions:
    init_interval: float = 1.0
    trim_stationary: bool = True
    stationary_threshold: float = 0.02
    stationary_min_duration: float = 1.0
    gate: tuple[float, float] = (0.5, 1.5)
    reorthonormalize_every: int = 100
    # Fixes the gauge C_i_m(0) = Q (identity by default).
    initial_rotation: NDArray[np.float64] | None = None
    record_trace: bool = True

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d["gate"] = list(self.gate)
        if self.initial_rotation is not None:
            d["initial_rotation"] = np.asarray(self.initial_rotation).tolist()
        return d


@dataclass(frozen=True)
class FilterState:
    C_m_i: NDArray[np.float64]
    K: NDArray[np.float64]
    eps: NDArray[np.float64]
    m_i: NDArray[np.float64]
    P: NDArray[np.float64]


@dataclass
class GyroCalibration:
    """
    Recovered calibration. Rates are in rad/s; calibrated rate is ``K_g @ y + eps_b``.
    """

    K_g: NDArray[np.float64]
    eps_b: NDArray[np.float64]
    C_b_m: NDArray[np.float64]
    m_i: NDArray[np.float64]
    final_covariance_diag: NDArray[np.float64]
    K: NDArray[np.float64] | None = None
    eps: NDArray[np.float64] | None = None
    diagnostics: dict = field(default_factory=dict)

    def apply(self, y_g: ArrayLike) -> NDArray[np.float64]:
        """Calibrated gyro-frame body rate(s) for raw sample(s) `y_g`."""
        return np.asarray(y_g, dtype=float) @ self.K_g.T + self.eps_b

    @classmethod
    def identity(cls) -> "GyroCalibration":
        return cls(np.eye(3), np.zeros(3), np.eye(3), np.zeros(3), np.zeros(STATE_DIM))

    def to_dict(self) -> dict:
        d = {
            "K_g": self.K_g.tolist(),
            "eps_b": self.eps_b.tolist(),
            "C_b_m": self.C_b_m.tolist(),
            "m_i": self.m_i.tolist(),
            "final_covariance_diag": self.final_covariance_diag.tolist(),
        }
        if self.K is not None:
            d["K"] = self.K.tolist()
            d["eps"] = self.eps.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GyroCalibration":
        arr = lambda key: np.array(d[key], dtype=float)  # noqa: E731
        return cls(
            arr("K_g"),
            arr("eps_b"),
            arr("C_b_m"),
            arr("m_i"),
            arr("final_covariance_diag"),
            arr("K") if "K" in d else None,
            arr("eps") if "eps" in d else None,
        )


@dataclass
class CalibrationTrace:
    """Per-sample filter history (after each measurement update)."""

    t: NDArray[np.float64]
    C_m_i: NDArray[np.float64]
    K: NDArray[np.float64]
    eps: NDArray[np.float64]
    m_i: NDArray[np.float64]
    P_diag: NDArray[np.float64]

    @property
    def attitude_trace(self) -> NDArray[np.float64]:
        """Trace of the attitude block of the covariance."""
        return self.P_diag[:, ATT].sum(axis=1)


# --------------------------------------------------------------------------- #
# Initialization
# --------------------------------------------------------------------------- #


def interval_equations(
    t: ArrayLike, mag: ArrayLike, gyro: ArrayLike, interval: float = 1.0
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Stack ``m(t_{k+1}) - m(t_k) = (int M dt) [vec(K); eps]`` over consecutive
    intervals of length `interval`, with trapezoidal quadrature of ``M``.

    Returns
    -------
    A : numpy.ndarray, shape (3 * n_intervals, 12)
    b : numpy.ndarray, shape (3 * n_intervals,)
    """
    t = np.asarray(t, dtype=float)
    mag = np.asarray(mag, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    if interval <= 0:
        raise InputError("init interval must be positive")
    edges = np.arange(t[0], t[-1] + 0.5 * interval, interval)
    idx = np.unique(np.clip(np.searchsorted(t, edges - 1e-9 * interval), 0, len(t) - 1))
    M = build_M_batch(gyro, mag)
    dt = np.diff(t)
    # cumulative trapezoid of M so each interval integral is a difference
    cum = np.zeros_like(M)
    cum[1:] = np.cumsum(0.5 * dt[:, None, None] * (M[1:] + M[:-1]), axis=0)
    lo, hi = idx[:-1], idx[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    A = (cum[hi] - cum[lo]).reshape(-1, 12)
    b = (mag[hi] - mag[lo]).reshape(-1)
    return A, b


def init_least_squares(
    t: ArrayLike, mag: ArrayLike, gyro: ArrayLike, interval: float = 1.0
) -> tuple[NDArray[np.float64], NDArray[np.float64], float]:
    """
    Least-squares estimate of ``K`` and ``eps`` from integrated field kinematics.

    Parameters
    ----------
    t : array-like, shape (N,)
        Sample times (s).
    mag : array-like, shape (N, 3)
        Calibrated magnetometer samples.
    gyro : array-like, shape (N, 3)
        Raw gyroscope samples (rad/s).
    interval : float
        Integration interval length (s).

    Returns
    -------
    K0 : numpy.ndarray, shape (3, 3)
    eps0 : numpy.ndarray, shape (3,)
    residual : float
        RMS of the stacked equation errors.

    Raises
    ------
    ExcitationError
        If fewer than 12 intervals are available or the stacked system is rank
        deficient (condition number above 1e8).
    """
    A, b = interval_equations(t, mag, gyro, interval)
    n_intervals = len(A) // 3
    if n_intervals < 12:
        raise ExcitationError(
            f"insufficient excitation for initialization: {n_intervals} intervals, need 12"
        )
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > 1e8:
        raise ExcitationError(
            "insufficient excitation for initialization: stacked system is rank deficient"
        )
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    residual = float(np.sqrt(np.mean((A @ x - b) ** 2)))
    return unvec(x[:9]), x[9:], residual


# --------------------------------------------------------------------------- #
# Error-state Jacobians
# --------------------------------------------------------------------------- #


def error_dynamics_jacobian(state: FilterState, y_g: ArrayLike) -> NDArray[np.float64]:
    """Continuous-time error-state matrix F (18x18)."""
    F = np.zeros((STATE_DIM, STATE_DIM))
    F[ATT] = _attitude_rows(state.K, state.eps, np.asarray(y_g, dtype=float))
    return F


def _attitude_rows(K, eps, y_g):
    # [-skew(K y + eps), y' kron I3, I3, 0]
    w = K @ y_g + eps
    rows = np.zeros((3, STATE_DIM))
    rows[0, 1], rows[0, 2] = w[2], -w[1]
    rows[1, 0], rows[1, 2] = -w[2], w[0]
    rows[2, 0], rows[2, 1] = w[1], -w[0]
    rows[_KRON_ROWS, _KRON_COLS] = np.repeat(y_g, 3)
    rows[_I3_ROWS, _I3_ROWS + 12] = 1.0
    return rows


def noise_jacobian() -> NDArray[np.float64]:
    """Gyro-noise input matrix G (18x3); noise enters the attitude error rate."""
    G = np.zeros((STATE_DIM, 3))
    G[ATT] = np.eye(3)
    return G


def measurement_jacobian(state: FilterState) -> NDArray[np.float64]:
    """Measurement matrix H (3x18) of ``m_hat = C_m_i' m_i``."""
    H = np.zeros((3, STATE_DIM))
    H[:, ATT] = skew(state.C_m_i.T @ state.m_i)
    H[:, MI] = state.C_m_i.T
    return H


def predict_measurement(state: FilterState) -> NDArray[np.float64]:
    return state.C_m_i.T @ state.m_i


# --------------------------------------------------------------------------- #
# Filter steps
# --------------------------------------------------------------------------- #


def ekf_propagate(
    state: FilterState,
    y_g: ArrayLike,
    dt: float,
    noise: NoiseConfig,
    endpoints: tuple[ArrayLike, ArrayLike] | None = None,
) -> FilterState:
    """
    Propagate the filter over one gyro interval.

    The mean attitude is advanced by ``so3_exp((K y_g + eps) dt)``. When
    `endpoints` ``(y_start, y_end)`` are given, `y_g` is read as the interval-mean
    measurement and the second-order coning term ``dt^2/12 w_start x w_end`` is
    added to the rotation increment.

    Covariance is propagated to first order, ``P <- F P F' + G Qc G' dt`` with
    ``F = I + Fc dt`` and ``Qc = sigma_g^2 K K'`` (gyro noise mapped through ``K``),
    plus the parameter random-walk floors.
    """
    if not dt > 0:
        raise InputError(f"propagation step must be positive, got {dt}")
    y_g = np.asarray(y_g, dtype=float)
    K, eps = state.K, state.eps
    w = K @ y_g + eps
    phi = w * dt
    if endpoints is not None:
        w0 = K @ endpoints[0] + eps
        w1 = K @ endpoints[1] + eps
        phi = phi + (dt * dt / 12.0) * _cross(w0, w1)
    C = state.C_m_i @ so3_exp(phi)

    # Phi = I + Fc dt differs from the identity in the attitude rows only.
    A = _attitude_rows(K, eps, y_g) * dt
    A[:, ATT] += _I3
    P = state.P.copy()
    P[ATT] = A @ state.P
    P[:, ATT] = P @ A.T
    P[ATT, ATT] += (noise.gyro_noise_density**2 * dt) * (K @ K.T)
    if noise.q_K:
        P[VK, VK] += noise.q_K * dt * np.eye(9)
    if noise.q_eps:
        P[EPS, EPS] += noise.q_eps * dt * _I3
    if noise.q_mi:
        P[MI, MI] += noise.q_mi * dt * _I3
    P = 0.5 * (P + P.T)
    return replace(state, C_m_i=C, P=P)


def _cross(a, b):
    return np.array(
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    )


def gate_ok(m_hat: ArrayLike, gate: tuple[float, float] = (0.5, 1.5)) -> bool:
    n = float(np.linalg.norm(m_hat))
    return gate[0] < n < gate[1]


def ekf_update(
    state: FilterState,
    m_hat: ArrayLike,
    noise: NoiseConfig,
    gate: tuple[float, float] = (0.5, 1.5),
) -> FilterState:
    """
    Magnetometer measurement update (Joseph form).

    Samples whose norm falls outside `gate` are skipped and the input state is
    returned unchanged.
    """
    m_hat = np.asarray(m_hat, dtype=float)
    if not gate_ok(m_hat, gate):
        return state
    H = measurement_jacobian(state)
    P = state.P
    r2 = noise.mag_noise_std**2
    PHt = P @ H.T
    S = H @ PHt
    S[_I3_ROWS, _I3_ROWS] += r2
    gain = np.linalg.solve(S, PHt.T).T
    dx = gain @ (m_hat - predict_measurement(state))

    A = _I18 - gain @ H
    P = A @ P @ A.T + r2 * (gain @ gain.T)
    P = 0.5 * (P + P.T)
    return FilterState(
        C_m_i=state.C_m_i @ so3_exp(dx[ATT]),
        K=state.K + unvec(dx[VK]),
        eps=state.eps + dx[EPS],
        m_i=state.m_i + dx[MI],
        P=P,
    )


def recover_parameters(
    K: ArrayLike, eps: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """
    Split the combined gyro model into gyro-frame parameters.

    Returns
    -------
    K_g : numpy.ndarray
        Upper triangular scale/non-orthogonality matrix (positive diagonal).
    eps_b : numpy.ndarray
        Gyro-frame bias.
    C_b_m : numpy.ndarray
        Gyro-to-magnetometer misalignment.
    """
    C_b_m, K_g = qr_posdiag(K)
    return K_g, C_b_m.T @ np.asarray(eps, dtype=float), C_b_m


# --------------------------------------------------------------------------- #
# Batch driver
# --------------------------------------------------------------------------- #


def interval_mean_rates(t: ArrayLike, y: ArrayLike) -> NDArray[np.float64]:
    """
    Mean of a sampled signal over each interval ``[t_k, t_{k+1}]``.

    Uses the four-point cubic rule ``(-y_{k-1} + 13 y_k + 13 y_{k+1} - y_{k+2}) / 24``
    where the neighbouring steps are equal, and the trapezoid rule elsewhere.
    Returns shape (N - 1, 3).
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    mean = 0.5 * (y[:-1] + y[1:])
    n = len(t)
    if n < 4:
        return mean
    dt = np.diff(t)
    k = np.arange(1, n - 2)
    uniform = (np.abs(dt[k - 1] - dt[k]) <= 1e-9 * dt[k]) & (
        np.abs(dt[k + 1] - dt[k]) <= 1e-9 * dt[k]
    )
    k = k[uniform]
    mean[k] = (-y[k - 1] + 13.0 * y[k] + 13.0 * y[k + 1] - y[k + 2]) / 24.0
    return mean


def stationary_bounds(
    t: ArrayLike, gyro: ArrayLike, threshold: float = 0.02, min_duration: float = 1.0
) -> tuple[int, int]:
    """
    Index range ``[start, stop)`` left after dropping leading and trailing
    segments where the gyro magnitude stays below `threshold` for at least
    `min_duration` seconds.
    """
    t = np.asarray(t, dtype=float)
    moving = np.linalg.norm(np.asarray(gyro, dtype=float), axis=1) >= threshold
    if not moving.any():
        return 0, len(t)
    first = int(np.argmax(moving))
    last = len(t) - 1 - int(np.argmax(moving[::-1]))
    start, stop = 0, len(t)
    if first > 0 and t[first] - t[0] >= min_duration:
        start = first
    if last < len(t) - 1 and t[-1] - t[last] >= min_duration:
        stop = last + 1
    return start, stop


def initial_state(
    m_hat0: ArrayLike,
    K0: ArrayLike,
    eps0: ArrayLike,
    noise: NoiseConfig,
    initial_rotation: ArrayLike | None = None,
) -> FilterState:
    """
    Filter state at the first sample: attitude fixed by the gauge ``C_i_m(0) = Q``
    (identity by default) and the field set from the first calibrated sample.
    """
    Q = np.eye(3) if initial_rotation is None else np.asarray(initial_rotation, dtype=float)
    m_hat0 = np.asarray(m_hat0, dtype=float)
    return FilterState(
        C_m_i=Q.T.copy(),
        K=np.array(K0, dtype=float),
        eps=np.array(eps0, dtype=float),
        m_i=Q.T @ m_hat0,
        P=noise.initial_covariance(),
    )


def run_calibration(
    log,
    mag_intrinsics: magcal.MagIntrinsics | None = None,
    noise: NoiseConfig | None = None,
    options: CalibrationOptions | None = None,
) -> tuple[GyroCalibration, CalibrationTrace | None]:
    """
    Calibrate the gyroscope of a synchronized gyro/magnetometer log.

    Parameters
    ----------
    log : RawLog
        Time-ordered samples; gyro in rad/s, magnetometer raw.
    mag_intrinsics : MagIntrinsics, optional
        Magnetometer calibration; identity (already calibrated data) by default.
    noise : NoiseConfig, optional
    options : CalibrationOptions, optional

    Returns
    -------
    GyroCalibration
    CalibrationTrace or None
        Filter history, when ``options.record_trace`` is set.
    """
    noise = NoiseConfig() if noise is None else noise
    options = CalibrationOptions() if options is None else options
    mag_intrinsics = magcal.MagIntrinsics.identity() if mag_intrinsics is None else mag_intrinsics

    t = np.asarray(log.t, dtype=float)
    if len(t) == 0:
        raise InputError("empty log")
    if np.any(np.diff(t) <= 0):
        raise InputError("log timestamps must be strictly increasing")
    gyro = np.asarray(log.gyro, dtype=float)
    mag = magcal.apply(mag_intrinsics, log.mag)

    start, stop = 0, len(t)
    if options.trim_stationary:
        start, stop = stationary_bounds(
            t, gyro, options.stationary_threshold, options.stationary_min_duration
        )
    t, gyro, mag = t[start:stop], gyro[start:stop], mag[start:stop]
    if len(t) < 2:
        raise ExcitationError("insufficient excitation: no motion in log")

    K0, eps0, init_residual = init_least_squares(t, mag, gyro, options.init_interval)

    state = initial_state(mag[0], K0, eps0, noise, options.initial_rotation)
    ybar = interval_mean_rates(t, gyro)
    dts = np.diff(t)
    n = len(t)
    n_gated = 0

    trace = None
    if options.record_trace:
        trace = CalibrationTrace(
            t=t.copy(),
            C_m_i=np.empty((n, 3, 3)),
            K=np.empty((n, 9)),
            eps=np.empty((n, 3)),
            m_i=np.empty((n, 3)),
            P_diag=np.empty((n, STATE_DIM)),
        )
        _record(trace, 0, state)

    for k in range(n - 1):
        state = ekf_propagate(state, ybar[k], dts[k], noise, endpoints=(gyro[k], gyro[k + 1]))
        if gate_ok(mag[k + 1], options.gate):
            state = ekf_update(state, mag[k + 1], noise, options.gate)
        else:
            n_gated += 1
        if options.reorthonormalize_every and (k + 1) % options.reorthonormalize_every == 0:
            state = replace(state, C_m_i=orthonormalize(state.C_m_i))
        if trace is not None:
            _record(trace, k + 1, state)

    K_g, eps_b, C_b_m = recover_parameters(state.K, state.eps)
    cal = GyroCalibration(
        K_g=K_g,
        eps_b=eps_b,
        C_b_m=C_b_m,
        m_i=state.m_i.copy(),
        final_covariance_diag=np.diag(state.P).copy(),
        K=state.K.copy(),
        eps=state.eps.copy(),
        diagnostics={
            "samples_used": int(n),
            "trim_start_index": int(start),
            "trim_stop_index": int(stop),
            "updates_gated": int(n_gated),
            "init_K": K0.tolist(),
            "init_eps": eps0.tolist(),
            "init_residual_rms": init_residual,
        },
    )
    return cal, trace


def _record(trace: CalibrationTrace, k: int, state: FilterState) -> None:
    trace.C_m_i[k] = state.C_m_i
    trace.K[k] = vec(state.K)
    trace.eps[k] = state.eps
    trace.m_i[k] = state.m_i
    trace.P_diag[k] = np.diag(state.P)
