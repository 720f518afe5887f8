"""
Synthetic gyroscope/magnetometer data and Monte Carlo batches.

Sensor models::

    y_g = inv(K_g) (w_ib_b - eps_b) + n_g
    y_m = inv(R) Q' C_e_m* m_e + h,        C_e_m* m_e = Q C_b_m C_e_b m_e

with ``m_e`` a unit field vector. By default magnetometer noise is added to the
calibrated field ``C_b_m C_e_b m_e`` before the raw-domain distortion.

Body rates come from a :class:`TrajectoryProfile` (rates relative to the Earth
frame). With ``include_earth_rotation`` the gyro additionally senses the Earth
rate, while the field stays fixed in the Earth frame.
"""

from __future__ import annotations

import concurrent.futures
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import evaluation, gyrocal, magcal
from .errors import CalibrationError
from .logio import RawLog
from .observability import skew_batch
from .rotations import dcm_to_euler, euler_to_dcm

logger = logging.getLogger(__name__)

DEG = np.pi / 180.0
EARTH_RATE = 7.292e-5


def _field_from_dip(dip_deg: float, azimuth_deg: float) -> NDArray[np.float64]:
    # ENU: horizontal component toward azimuth (from north), pointing down by dip.
    dip, az = np.radians(dip_deg), np.radians(azimuth_deg)
    return np.array([np.cos(dip) * np.sin(az), np.cos(dip) * np.cos(az), -np.sin(dip)])


@dataclass
class TruthConfig:
    """
    Ground truth for a simulation. Angular rates in rad/s.
    """

    K_g: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    eps_b: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    C_b_m: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    mag_R: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    mag_h: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    soft_iron_Q: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    m_e: NDArray[np.float64] = field(default_factory=lambda: _field_from_dip(50.0, 30.0))
    gyro_noise_density: float = 0.02 * DEG
    mag_noise_std: float = 0.01
    sample_rate: float = 100.0
    duration: float = 100.0
    include_earth_rotation: bool = False
    latitude_deg: float = 31.0
    mag_noise_domain: str = "calibrated"

    def __post_init__(self):
        for name in ("K_g", "eps_b", "C_b_m", "mag_R", "mag_h", "soft_iron_Q", "m_e"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        if abs(np.linalg.norm(self.m_e) - 1.0) > 1e-9:
            raise ValueError("m_e must be a unit vector")
        if self.sample_rate <= 0 or self.duration <= 0:
            raise ValueError("sample_rate and duration must be positive")
        if self.mag_noise_domain not in ("calibrated", "raw"):
            raise ValueError("mag_noise_domain must be 'calibrated' or 'raw'")

    @classmethod
    def reference(cls, **overrides) -> "TruthConfig":
        """Parameters of the reference Monte Carlo scenario."""
        params = dict(
            K_g=np.array([[1.1, 0.1, 0.15], [0.0, 1.2, 0.2], [0.0, 0.0, 1.3]]),
            eps_b=np.array([1.0, 3.0, 2.0]) * DEG,
            C_b_m=euler_to_dcm(np.array([10.0, 20.0, 15.0]) * DEG),
        )
        params.update(overrides)
        return cls(**params)

    @property
    def mag_intrinsics(self) -> magcal.MagIntrinsics:
        return magcal.MagIntrinsics(self.mag_R, self.mag_h)

    @property
    def earth_rate_vector(self) -> NDArray[np.float64]:
        lat = np.radians(self.latitude_deg)
        return EARTH_RATE * np.array([0.0, np.cos(lat), np.sin(lat)])

    def to_dict(self) -> dict:
        d = {}
        for k, v in asdict(self).items():
            d[k] = v.tolist() if isinstance(v, np.ndarray) else v
        d["eps_b_deg_s"] = (self.eps_b / DEG).tolist()
        d["misalignment_euler_deg"] = (dcm_to_euler(self.C_b_m) / DEG).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TruthConfig":
        """
        Build from a mapping. Besides the field names, accepts ``eps_b_deg_s``,
        ``misalignment_euler_deg`` (roll, pitch, yaw of ``C_b_m``),
        ``gyro_noise_density_deg`` (deg/s/sqrt(Hz)) and ``preset: reference``.
        """
        d = dict(d)
        preset = d.pop("preset", None)
        kwargs = {}
        if "eps_b_deg_s" in d:
            eps = d.pop("eps_b_deg_s")
            if "eps_b" not in d:
                kwargs["eps_b"] = np.array(eps, dtype=float) * DEG
        if "misalignment_euler_deg" in d:
            eul = d.pop("misalignment_euler_deg")
            if "C_b_m" not in d:
                kwargs["C_b_m"] = euler_to_dcm(np.array(eul, dtype=float) * DEG)
        if "gyro_noise_density_deg" in d:
            kwargs["gyro_noise_density"] = float(d.pop("gyro_noise_density_deg")) * DEG
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown truth config keys: {sorted(unknown)}")
        kwargs.update(d)
        if preset == "reference":
            return cls.reference(**kwargs)
        if preset not in (None, "default"):
            raise ValueError(f"unknown preset {preset!r}")
        return cls(**kwargs)


@dataclass
class Segment:
    """
    One angular-rate primitive.

    ``kind`` is ``"sine"`` (``amplitude * sin(2 pi frequency (t - t0) + phase)``),
    ``"constant"`` (``amplitude``) or ``"rest"`` (forces all axes to zero inside its
    window). Sine/constant segments are raised-cosine tapered over ``ramp`` seconds
    at both window ends. Amplitudes in rad/s.
    """

    kind: str
    t0: float
    t1: float
    axis: int = 0
    amplitude: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0
    ramp: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sine", "constant", "rest"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.t1 < self.t0:
            raise ValueError("segment window must satisfy t0 <= t1")
        if self.axis not in (0, 1, 2):
            raise ValueError("segment axis must be 0, 1 or 2")


@dataclass
class TrajectoryProfile:
    """
    Body angular rate (relative to the Earth frame) as a sum of segments.

    With ``closed_loop`` the segments describe the first half of the run and the
    second half replays it backwards with negated rates, ``w(t) = -w(T - t)``, so
    the body ends in exactly its starting pose.
    """

    segments: list[Segment] = field(default_factory=list)
    closed_loop: bool = True
    max_rate: float = 5.0

    def rate(self, t: ArrayLike, duration: float) -> NDArray[np.float64]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not self.closed_loop:
            return self._base_rate(t)
        half = 0.5 * duration
        first = t <= half
        w = np.empty((len(t), 3))
        w[first] = self._base_rate(t[first])
        w[~first] = -self._base_rate(duration - t[~first])
        return w

    def _base_rate(self, t: NDArray[np.float64]) -> NDArray[np.float64]:
        w = np.zeros((len(t), 3))
        rest = np.zeros(len(t), dtype=bool)
        for s in self.segments:
            inside = (t >= s.t0) & (t <= s.t1)
            if s.kind == "rest":
                rest |= inside
                continue
            if s.kind == "sine":
                val = s.amplitude * np.sin(2 * np.pi * s.frequency * (t - s.t0) + s.phase)
            else:
                val = np.full(len(t), s.amplitude)
            w[:, s.axis] += np.where(inside, val * _taper(t, s.t0, s.t1, s.ramp), 0.0)
        w[rest] = 0.0
        return w

    def to_dict(self) -> dict:
        return {
            "closed_loop": self.closed_loop,
            "max_rate": self.max_rate,
            "segments": [asdict(s) for s in self.segments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryProfile":
        return cls(
            segments=[Segment(**s) for s in d.get("segments", [])],
            closed_loop=d.get("closed_loop", True),
            max_rate=d.get("max_rate", 5.0),
        )


def _taper(t, t0, t1, ramp):
    if ramp <= 0:
        return np.ones_like(t)
    up = np.clip((t - t0) / ramp, 0.0, 1.0)
    down = np.clip((t1 - t) / ramp, 0.0, 1.0)
    return 0.25 * (1 - np.cos(np.pi * up)) * (1 - np.cos(np.pi * down))


def default_profile(duration: float = 100.0, closed_loop: bool = True) -> TrajectoryProfile:
    """
    Multi-axis excitation: phase-shifted sinusoids of 30-60 deg/s with periods of
    5-20 s on each axis, a 2 s rest at both ends of the run.
    """
    span = 0.5 * duration if closed_loop else duration
    t0, t1 = 2.0, span - (0.0 if closed_loop else 2.0)
    ramp = 1.0
    spec = [
        # axis, amplitude (deg/s), period (s), phase (rad)
        (0, 45.0, 7.0, 0.0),
        (0, 20.0, 19.0, 1.3),
        (1, 60.0, 11.0, 1.0),
        (1, 15.0, 5.0, 0.4),
        (2, 30.0, 5.0, 2.0),
        (2, 40.0, 17.0, 0.7),
    ]
    segments = [
        Segment("sine", t0, t1, axis=a, amplitude=amp * DEG, frequency=1.0 / per, phase=ph, ramp=ramp)
        for a, amp, per, ph in spec
    ]
    return TrajectoryProfile(segments, closed_loop=closed_loop)


def single_axis_profile(
    duration: float, axis_rate: ArrayLike, period: float = 8.0, closed_loop: bool = True
) -> TrajectoryProfile:
    """
    Rotation about one fixed body axis: ``axis_rate * sin(2 pi t / period)``,
    where `axis_rate` is a 3-vector (rad/s) giving direction and amplitude.

    Implemented as three in-phase sines, one per body axis.
    """
    axis_rate = np.asarray(axis_rate, dtype=float)
    span = 0.5 * duration if closed_loop else duration
    segments = [
        Segment("sine", 1.0, span, axis=a, amplitude=float(axis_rate[a]), frequency=1.0 / period, ramp=1.0)
        for a in range(3)
        if axis_rate[a] != 0.0
    ]
    return TrajectoryProfile(segments, closed_loop=closed_loop)


@dataclass
class Trajectory:
    """
    Truth trajectory at the sensor sample times.

    Attributes
    ----------
    t : (N,) sample times
    omega_eb : (N, 3) body rate relative to the Earth frame
    omega_ib : (N, 3) body rate relative to the inertial frame (what a gyro senses)
    C_b_e : (N, 3, 3) body-to-Earth attitude
    C_b_i : (N, 3, 3) body-to-inertial attitude
    """

    t: NDArray[np.float64]
    omega_eb: NDArray[np.float64]
    omega_ib: NDArray[np.float64]
    C_b_e: NDArray[np.float64]
    C_b_i: NDArray[np.float64]

    def mag_attitude(self, C_b_m: ArrayLike, start: int = 0) -> NDArray[np.float64]:
        """
        True magnetometer-frame attitude in the gauge used by the filter: the
        inertial frame is the magnetometer frame at sample `start`.
        """
        C_m_b = np.asarray(C_b_m, dtype=float).T
        C_m_e = self.C_b_i @ C_m_b
        return np.einsum("ji,njk->nik", C_m_e[start], C_m_e[start:])


def _exp_batch(phi: NDArray[np.float64]) -> NDArray[np.float64]:
    angle = np.linalg.norm(phi, axis=1)
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    a = np.where(small, 1.0 - angle**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - angle**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    S = skew_batch(phi)
    return np.eye(3) + a[:, None, None] * S + b[:, None, None] * (S @ S)


def generate_trajectory(
    profile: TrajectoryProfile, config: TruthConfig, oversample: int = 10
) -> Trajectory:
    """
    Integrate the truth attitude at `oversample` times the sample rate.

    Each fine step uses two Simpson-integrated half-step angle increments and the
    two-sample coning correction, ``phi = d1 + d2 + 2/3 d1 x d2``.
    """
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    n = int(round(config.duration * config.sample_rate)) + 1
    t = np.arange(n) / config.sample_rate
    duration = t[-1]
    n_fine = (n - 1) * oversample
    h = duration / n_fine if n_fine else 0.0

    # rates on a quarter-step grid
    tq = np.linspace(0.0, duration, 4 * n_fine + 1)
    wq = profile.rate(tq, duration)
    if np.max(np.abs(wq)) > profile.max_rate:
        raise ValueError("trajectory exceeds the profile's max_rate")
    d1 = (h / 12.0) * (wq[0:-1:4] + 4.0 * wq[1::4] + wq[2::4])
    d2 = (h / 12.0) * (wq[2::4] + 4.0 * wq[3::4] + wq[4::4])
    phi = d1 + d2 + (2.0 / 3.0) * np.cross(d1, d2)
    steps = _exp_batch(phi)

    C_b_e = np.empty((n, 3, 3))
    C = np.eye(3)
    C_b_e[0] = C
    for j in range(n_fine):
        C = C @ steps[j]
        if (j + 1) % oversample == 0:
            C_b_e[(j + 1) // oversample] = C

    omega_eb = wq[:: 4 * oversample]
    if config.include_earth_rotation:
        w_ie = config.earth_rate_vector
        omega_ib = omega_eb + np.einsum("nji,j->ni", C_b_e, w_ie)
        C_e_i = _exp_batch(t[:, None] * w_ie[None, :])
        C_b_i = C_e_i @ C_b_e
    else:
        omega_ib = omega_eb.copy()
        C_b_i = C_b_e.copy()
    return Trajectory(t, omega_eb, omega_ib, C_b_e, C_b_i)


def true_measurements(traj: Trajectory, config: TruthConfig) -> tuple[NDArray, NDArray]:
    """Noise-free raw gyro samples and calibrated field samples ``m_m``."""
    y_g = (traj.omega_ib - config.eps_b) @ np.linalg.inv(config.K_g).T
    m_b = np.einsum("nji,j->ni", traj.C_b_e, config.m_e)
    m_m = m_b @ config.C_b_m.T
    return y_g, m_m


def synthesize(traj: Trajectory, config: TruthConfig, seed: int | ArrayLike | None = 0) -> RawLog:
    """
    Raw sensor log for `traj`. Deterministic for a fixed `seed` (an int or a
    sequence of ints).
    """
    rng = np.random.default_rng(seed)
    y_g, m_m = true_measurements(traj, config)
    n = len(traj.t)
    gyro_std = config.gyro_noise_density * np.sqrt(config.sample_rate)
    y_g = y_g + gyro_std * rng.standard_normal((n, 3))

    R_inv = np.linalg.inv(config.mag_R)
    Q = config.soft_iron_Q
    mag_noise = config.mag_noise_std * rng.standard_normal((n, 3))
    if config.mag_noise_domain == "calibrated":
        m_m = m_m + mag_noise
    m_star = m_m @ Q.T
    y_m = (m_star @ Q) @ R_inv.T + config.mag_h
    if config.mag_noise_domain == "raw":
        y_m = y_m + mag_noise
    return RawLog(traj.t.copy(), y_g, y_m, {"source": "simulator"})


# --------------------------------------------------------------------------- #
# Monte Carlo
# --------------------------------------------------------------------------- #


@dataclass
class RunResult:
    index: int
    calibration: gyrocal.GyroCalibration | None
    errors: dict | None = None
    attitude_error_max_deg: float | None = None
    error: str | None = None


@dataclass
class MonteCarloResult:
    runs: list[RunResult]
    summary: dict

    @property
    def failures(self) -> list[RunResult]:
        return [r for r in self.runs if r.calibration is None]

    def to_dict(self) -> dict:
        return {
            "summary": self.summary,
            "runs": [
                {
                    "index": r.index,
                    "error": r.error,
                    "calibration": None if r.calibration is None else r.calibration.to_dict(),
                    "errors": r.errors,
                    "attitude_error_max_deg": r.attitude_error_max_deg,
                }
                for r in self.runs
            ],
        }


def run_seed(base_seed: int, index: int) -> list[int]:
    """RNG seed for run `index`; depends on nothing but ``(base_seed, index)``."""
    return [int(base_seed), int(index)]


def _single_run(args) -> RunResult:
    index, base_seed, traj, config, noise, options, use_magcal = args
    log = synthesize(traj, config, run_seed(base_seed, index))
    try:
        if use_magcal:
            intr = magcal.calibrate(log.mag).intrinsics
        else:
            intr = config.mag_intrinsics
        cal, trace = gyrocal.run_calibration(log, intr, noise, options)
    except CalibrationError as exc:
        logger.warning("run %d failed: %s", index, exc)
        return RunResult(index, None, error=f"{exc.category}: {exc}")
    att_max = None
    if trace is not None:
        start = cal.diagnostics["trim_start_index"]
        stop = cal.diagnostics["trim_stop_index"]
        truth_att = traj.mag_attitude(config.C_b_m, start)[: stop - start]
        err = evaluation.attitude_error_trace(trace.t, trace.C_m_i, traj.t[start:stop], truth_att)
        k0 = evaluation.convergence_index(trace.attitude_trace)
        att_max = float(np.max(err[k0:]))
    return RunResult(index, cal, evaluation.compare_params(cal, config), att_max)


def summarize(cals: list[gyrocal.GyroCalibration]) -> dict:
    """Elementwise mean and sample std of ``K_g``, ``eps_b`` (deg/s) and Euler(``C_b_m``) (deg)."""
    if not cals:
        return {"n": 0}
    K = np.array([c.K_g for c in cals])
    eps = np.array([c.eps_b for c in cals]) / DEG
    eul = np.array([dcm_to_euler(c.C_b_m) for c in cals]) / DEG
    out = {"n": len(cals)}
    for name, arr in (("K_g", K), ("eps_b_deg_s", eps), ("misalignment_euler_deg", eul)):
        out[name] = {
            "mean": arr.mean(axis=0).tolist(),
            "std": arr.std(axis=0, ddof=1).tolist() if len(cals) > 1 else None,
        }
    return out


def monte_carlo(
    config: TruthConfig,
    profile: TrajectoryProfile | None = None,
    n_runs: int = 50,
    base_seed: int = 0,
    noise: gyrocal.NoiseConfig | None = None,
    options: gyrocal.CalibrationOptions | None = None,
    use_magcal: bool = False,
    workers: int = 1,
) -> MonteCarloResult:
    """
    Repeat synthesize + calibrate over independent noise realizations.

    The trajectory is shared by all runs; run ``i`` draws its noise from
    ``run_seed(base_seed, i)``. By default the magnetometer is calibrated with the
    true intrinsics (``use_magcal=False``). Failed runs are kept in the result
    with their error message and excluded from the summary.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    profile = default_profile(config.duration) if profile is None else profile
    if noise is None:
        noise = gyrocal.NoiseConfig(
            gyro_noise_density=config.gyro_noise_density,
            mag_noise_std=max(config.mag_noise_std, 1e-3),
        )
    options = gyrocal.CalibrationOptions() if options is None else options
    traj = generate_trajectory(profile, config)
    jobs = [(i, base_seed, traj, config, noise, options, use_magcal) for i in range(n_runs)]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_single_run, jobs))
    else:
        runs = [_single_run(job) for job in jobs]
    ok = [r.calibration for r in runs if r.calibration is not None]
    summary = summarize(ok)
    summary["failed_runs"] = [r.index for r in runs if r.calibration is None]
    return MonteCarloResult(runs, summary)

