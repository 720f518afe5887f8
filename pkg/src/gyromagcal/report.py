"""
Run configuration and report files.

Machine-readable reports are JSON with sorted keys; the only field that changes
between identical runs is ``generated_at``. Plot data are CSV files with a header
row and one series per column.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import InputError
from .gyrocal import STATE_LABELS, CalibrationOptions, CalibrationTrace, GyroCalibration, NoiseConfig
from .rotations import dcm_to_euler
from .simulator import TrajectoryProfile, TruthConfig, default_profile

DEG = np.pi / 180.0


@dataclass
class RunConfig:
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    truth: TruthConfig = field(default_factory=TruthConfig.reference)
    profile: TrajectoryProfile | None = None
    options: CalibrationOptions = field(default_factory=CalibrationOptions)
    magcal: str = "fit"
    log: str | None = None
    seed: int = 0
    runs: int = 50
    workers: int = 1

    def __post_init__(self):
        if self.magcal not in ("fit", "none", "truth"):
            raise InputError("magcal must be one of 'fit', 'none', 'truth'")
        if self.runs < 1:
            raise InputError("runs must be >= 1")

    @property
    def effective_profile(self) -> TrajectoryProfile:
        return self.profile if self.profile is not None else default_profile(self.truth.duration)

    def to_dict(self) -> dict:
        return {
            "noise": self.noise.to_dict(),
            "truth": self.truth.to_dict(),
            "profile": self.effective_profile.to_dict(),
            "calibration": self.options.to_dict(),
            "magcal": self.magcal,
            "log": self.log,
            "seed": self.seed,
            "runs": self.runs,
        }

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("seed")
        d.pop("runs")
        return hashlib.sha256(_dumps(d).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        known = {"noise", "truth", "profile", "calibration", "magcal", "log", "seed", "runs", "workers"}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        try:
            noise = _noise_from_dict(d.get("noise", {}))
            truth = TruthConfig.from_dict(d.get("truth", {"preset": "reference"}))
            profile = TrajectoryProfile.from_dict(d["profile"]) if d.get("profile") else None
            cal = dict(d.get("calibration", {}))
            if "gate" in cal:
                cal["gate"] = tuple(cal["gate"])
            if cal.get("initial_rotation") is not None:
                cal["initial_rotation"] = np.array(cal["initial_rotation"], dtype=float)
            options = CalibrationOptions(**cal)
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid config: {exc}") from exc
        return cls(
            noise=noise,
            truth=truth,
            profile=profile,
            options=options,
            magcal=d.get("magcal", "fit"),
            log=d.get("log"),
            seed=int(d.get("seed", 0)),
            runs=int(d.get("runs", 50)),
            workers=int(d.get("workers", 1)),
        )


def _noise_from_dict(d: dict) -> NoiseConfig:
    d = dict(d)
    # degree-based conveniences
    for key, target in (
        ("gyro_noise_density_deg", "gyro_noise_density"),
        ("init_std_eps_deg", "init_std_eps"),
        ("init_std_attitude_deg", "init_std_attitude"),
    ):
        if key in d:
            d[target] = float(d.pop(key)) * DEG
    return NoiseConfig(**d)


def load_config(path) -> RunConfig:
    """Read a JSON or YAML run configuration."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise InputError(f"cannot parse config {path}: {exc}") from exc
    return RunConfig.from_dict(data)


# --------------------------------------------------------------------------- #
# Serialization helpers
# --------------------------------------------------------------------------- #


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if dataclasses.is_dataclass(obj) and hasattr(obj, "to_dict"):
        return _clean(obj.to_dict())
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2)


def write_json(obj, path, timestamp: bool = True) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        obj = dict(obj)
        if timestamp:
            obj["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        path.write_text(_dumps(obj) + "\n")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc


def write_csv(path, header: list[str], columns: list[np.ndarray], fmt: str = "%.10g") -> Path:
    path = Path(path)
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=fmt)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc
    return path


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------- #
# Calibration report
# --------------------------------------------------------------------------- #


def calibration_summary(cal: GyroCalibration) -> dict:
    """Parameters in report units (deg/s, deg) with 1-sigma uncertainties from P."""
    std = np.sqrt(np.clip(cal.final_covariance_diag, 0.0, None))
    iu = np.triu_indices(3)
    return {
        "K_g": cal.K_g.tolist(),
        "K_g_upper": cal.K_g[iu].tolist(),
        "eps_b_deg_s": (cal.eps_b / DEG).tolist(),
        "misalignment_euler_deg": (dcm_to_euler(cal.C_b_m) / DEG).tolist(),
        "C_b_m": cal.C_b_m.tolist(),
        "K": None if cal.K is None else cal.K.tolist(),
        "eps_deg_s": None if cal.eps is None else (cal.eps / DEG).tolist(),
        "m_i": cal.m_i.tolist(),
        "covariance_diag": cal.final_covariance_diag.tolist(),
        "std": dict(zip(STATE_LABELS, std.tolist())),
    }


def format_calibration_text(cal: GyroCalibration, excitation=None, magrep=None) -> str:
    K = cal.K_g
    lines = ["Gyroscope calibration", "", "K_g (scale factor / non-orthogonality):"]
    lines.append(f"  {K[0, 0]:10.6f} {K[0, 1]:10.6f} {K[0, 2]:10.6f}")
    lines.append(f"  {'':10s} {K[1, 1]:10.6f} {K[1, 2]:10.6f}")
    lines.append(f"  {'':10s} {'':10s} {K[2, 2]:10.6f}")
    eps = cal.eps_b / DEG
    lines.append("")
    lines.append("bias eps_b (deg/s): " + "  ".join(f"{v:.4f}" for v in eps))
    eul = dcm_to_euler(cal.C_b_m) / DEG
    lines.append(
        "gyro-to-magnetometer misalignment, ZYX Euler roll/pitch/yaw (deg): "
        + "  ".join(f"{v:.4f}" for v in eul)
    )
    if magrep is not None:
        lines += [
            "",
            f"magnetometer norm residual RMS: {magrep.norm_residual_rms:.5f} "
            f"({magrep.iterations} iterations, converged={magrep.converged})",
        ]
    if excitation is not None:
        lines += [
            "",
            f"excitation Gramian rank: {excitation.rank}/12, "
            f"condition number: {excitation.condition_number:.3g}",
        ]
        if excitation.warning:
            lines.append(f"WARNING: {excitation.warning}")
    return "\n".join(lines) + "\n"


def write_trace_csv(trace: CalibrationTrace, path) -> Path:
    std = np.sqrt(np.clip(trace.P_diag, 0.0, None))
    header = ["t"]
    cols = [trace.t]
    K = trace.K.reshape(-1, 3, 3, order="F")
    for r in range(3):
        for c in range(3):
            header.append(f"K_{r}{c}")
            cols.append(K[:, r, c])
    for i, ax in enumerate("xyz"):
        header.append(f"eps_{ax}_deg_s")
        cols.append(trace.eps[:, i] / DEG)
    for i, ax in enumerate("xyz"):
        header.append(f"m_i_{ax}")
        cols.append(trace.m_i[:, i])
    header.append("attitude_std_deg")
    cols.append(np.degrees(np.sqrt(trace.attitude_trace)))
    for label, s in zip(STATE_LABELS, std.T):
        header.append(f"std_{label}")
        cols.append(s)
    return write_csv(path, header, cols)


def provenance(config: RunConfig, log_path=None) -> dict:
    d = {
        "package_version": __version__,
        "config_hash": config.hash(),
        "seed": config.seed,
    }
    if log_path is not None:
        d["log_sha256"] = file_sha256(log_path)
    return d
