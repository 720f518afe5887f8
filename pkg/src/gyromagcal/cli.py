"""
Command line interface.

Every failure ends the process with a nonzero exit status and one line on
stderr of the form ``error: <category> [<stage>]: <message>``.
"""

from __future__ import annotations

import contextlib
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import evaluation, gyrocal, magcal, observability, report, simulator
from .errors import CalibrationError, ExcitationError, InputError
from .logio import parse_log, write_log
from .report import RunConfig

logger = logging.getLogger("gyromagcal")

DEG = np.pi / 180.0


@contextlib.contextmanager
def _stage(name: str):
    """Tag errors raised inside the block with the pipeline stage."""
    try:
        yield
    except CalibrationError as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
        raise


def _fail(category: str, stage: str | None, message: str, code: int):
    where = f" [{stage}]" if stage else ""
    message = " ".join(str(message).split())
    click.echo(f"error: {category}{where}: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Run a command body, mapping exceptions to categorized exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CalibrationError as exc:
            _fail(exc.category, getattr(exc, "stage", None), exc, exc.exit_code)
        except (OSError, ValueError) as exc:
            _fail("input-error", None, exc, InputError.exit_code)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _load(config_path, seed, runs=None) -> RunConfig:
    cfg = report.load_config(config_path) if config_path else RunConfig()
    if seed is not None:
        cfg.seed = seed
    if runs is not None:
        if runs < 1:
            raise InputError("--runs must be >= 1")
        cfg.runs = runs
    return cfg


def _resolve_log(cfg: RunConfig, log: str | None, outdir: Path) -> Path:
    if log:
        return Path(log)
    if cfg.log:
        return Path(cfg.log)
    return outdir / "log.csv"


def _load_truth(path: Path | None):
    """Read a truth sidecar; returns ``(TruthConfig, TrajectoryProfile, seed)`` or None."""
    if path is None or not path.exists():
        return None
    d = report.read_json(path)
    try:
        truth = simulator.TruthConfig.from_dict(d["truth"])
        profile = simulator.TrajectoryProfile.from_dict(d["profile"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid truth sidecar {path}: {exc}") from exc
    return truth, profile, d.get("seed")


# --------------------------------------------------------------------------- #
# Command bodies (usable without click)
# --------------------------------------------------------------------------- #


def do_simulate(cfg: RunConfig, outdir: Path) -> Path:
    with _stage("simulator"):
        profile = cfg.effective_profile
        traj = simulator.generate_trajectory(profile, cfg.truth)
        log = simulator.synthesize(traj, cfg.truth, cfg.seed)
    log_path = write_log(log, outdir / "log.csv")
    report.write_json(
        {"truth": cfg.truth.to_dict(), "profile": profile.to_dict(), "seed": cfg.seed},
        outdir / "truth.json",
        timestamp=False,
    )
    logger.info("wrote %s (%d samples)", log_path, len(log))
    return log_path


def do_calibrate(cfg: RunConfig, log_path: Path, outdir: Path, truth_path: Path | None = None) -> dict:
    with _stage("logio"):
        log = parse_log(log_path)
    truth = _load_truth(truth_path if truth_path else log_path.parent / "truth.json")

    magrep = None
    with _stage("magcal"):
        if cfg.magcal == "fit":
            magrep = magcal.calibrate(log.mag)
            intr = magrep.intrinsics
        elif cfg.magcal == "truth":
            if truth is None:
                raise InputError("magcal mode 'truth' needs a truth sidecar")
            intr = truth[0].mag_intrinsics
        else:
            intr = magcal.MagIntrinsics.identity()
        mag = magcal.apply(intr, log.mag)

    with _stage("observability"):
        exc_rep = observability.gramian(log.t, mag, log.gyro)
        if not exc_rep.sufficient:
            raise ExcitationError(
                f"insufficient excitation: Gramian rank {exc_rep.rank}/12 "
                "(rotate about at least two axes not aligned with the field)"
            )
        if exc_rep.warning:
            logger.warning(exc_rep.warning)
            click.echo(f"warning: {exc_rep.warning}", err=True)

    with _stage("gyrocal"):
        cal, trace = gyrocal.run_calibration(log, intr, cfg.noise, cfg.options)

    doc = {
        "provenance": report.provenance(cfg, log_path),
        "magnetometer": {
            "mode": cfg.magcal,
            "intrinsics": intr.to_dict(),
            "report": None if magrep is None else magrep.to_dict(),
        },
        "gyroscope": report.calibration_summary(cal),
        "diagnostics": cal.diagnostics,
        "excitation": exc_rep.to_dict(),
    }

    if trace is not None:
        report.write_trace_csv(trace, outdir / "trace_parameters.csv")
        if truth is not None:
            tcfg, profile, _ = truth
            traj = simulator.generate_trajectory(profile, tcfg)
            start = cal.diagnostics["trim_start_index"]
            stop = cal.diagnostics["trim_stop_index"]
            if len(traj.t) == len(log.t):
                true_att = traj.mag_attitude(tcfg.C_b_m, start)[: stop - start]
                err = evaluation.attitude_error_trace(
                    trace.t, trace.C_m_i, traj.t[start:stop], true_att, time_tol=1e-6
                )
                k0 = evaluation.convergence_index(trace.attitude_trace)
                report.write_csv(
                    outdir / "attitude_error.csv", ["t", "attitude_error_deg"], [trace.t, err]
                )
                doc["attitude_error"] = {
                    "convergence_time_s": float(trace.t[k0]),
                    "max_after_convergence_deg": float(err[k0:].max()),
                }
    if truth is not None:
        doc["errors_vs_truth"] = evaluation.compare_params(cal, truth[0])

    report.write_json(doc, outdir / "report.json")
    (outdir / "report.txt").write_text(report.format_calibration_text(cal, exc_rep, magrep))
    report.write_json(
        {"gyroscope": cal.to_dict(), "magnetometer": intr.to_dict()},
        outdir / "calibration.json",
        timestamp=False,
    )
    return doc


def do_evaluate(
    cfg: RunConfig,
    log_path: Path,
    outdir: Path,
    calibration_path: Path | None = None,
    truth_path: Path | None = None,
) -> dict:
    calibration_path = calibration_path or outdir / "calibration.json"
    if not calibration_path.exists():
        raise InputError(f"no calibration artifact at {calibration_path}; run 'calibrate' first")
    with _stage("evaluation"):
        stored = report.read_json(calibration_path)
        try:
            cal = gyrocal.GyroCalibration.from_dict(stored["gyroscope"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid calibration artifact {calibration_path}: {exc}") from exc
    with _stage("logio"):
        log = parse_log(log_path)
    truth = _load_truth(truth_path if truth_path else log_path.parent / "truth.json")

    with _stage("evaluation"):
        thr = cfg.options.stationary_threshold
        C_cal, drift_cal = evaluation.dead_reckon(log.t, log.gyro, cal, thr)
        C_raw, drift_raw = evaluation.dead_reckon(log.t, log.gyro, None, thr)
    ang_cal = evaluation.attitude_error_trace(log.t, C_cal[:1].repeat(len(log.t), 0), log.t, C_cal)
    ang_raw = evaluation.attitude_error_trace(log.t, C_raw[:1].repeat(len(log.t), 0), log.t, C_raw)
    report.write_csv(
        outdir / "dead_reckoning.csv",
        ["t", "calibrated_angle_from_start_deg", "uncalibrated_angle_from_start_deg"],
        [log.t, ang_cal, ang_raw],
    )
    doc = {
        "provenance": report.provenance(cfg, log_path),
        "drift_calibrated": drift_cal.to_dict(),
        "drift_uncalibrated": drift_raw.to_dict(),
        "drift_ratio": (
            drift_cal.drift_angle_deg / drift_raw.drift_angle_deg
            if drift_raw.drift_angle_deg > 0
            else None
        ),
    }
    if truth is not None:
        doc["errors_vs_truth"] = evaluation.compare_params(cal, truth[0])
    report.write_json(doc, outdir / "evaluation.json")
    lines = [
        "Dead-reckoning drift (same-pose endpoints assumed)",
        f"  duration: {drift_cal.duration:.2f} s",
        f"  calibrated drift:   {drift_cal.drift_angle_deg:.4f} deg",
        f"  uncalibrated drift: {drift_raw.drift_angle_deg:.4f} deg",
    ]
    if drift_cal.endpoints_stationary is False:
        lines.append("  note: log does not start and end at rest")
    if truth is not None:
        e = doc["errors_vs_truth"]
        lines += [
            "",
            "Errors against truth",
            "  scale factor (ppm): " + "  ".join(f"{v:.1f}" for v in e["scale_factor_ppm"]),
            "  non-orthogonality (deg): "
            + "  ".join(f"{k}={v:.4f}" for k, v in e["nonorthogonality_deg"].items()),
            "  bias (deg/s): " + "  ".join(f"{v:.4f}" for v in e["bias_deg_s"]),
            f"  misalignment (deg): {e['misalignment_angle_deg']:.4f}",
        ]
    (outdir / "evaluation.txt").write_text("\n".join(lines) + "\n")
    return doc


def do_montecarlo(cfg: RunConfig, outdir: Path) -> dict:
    with _stage("simulator"):
        res = simulator.monte_carlo(
            cfg.truth,
            cfg.effective_profile,
            n_runs=cfg.runs,
            base_seed=cfg.seed,
            noise=cfg.noise,
            options=cfg.options,
            use_magcal=cfg.magcal == "fit",
            workers=cfg.workers,
        )
    doc = {"provenance": report.provenance(cfg), "truth": cfg.truth.to_dict(), **res.to_dict()}
    report.write_json(doc, outdir / "montecarlo.json")
    s = res.summary
    lines = [f"Monte Carlo: {s['n']} successful runs, failed: {s['failed_runs']}"]
    for name in ("K_g", "eps_b_deg_s", "misalignment_euler_deg"):
        if name in s:
            lines.append(f"{name} mean: {np.array2string(np.asarray(s[name]['mean']), precision=5)}")
            if s[name]["std"] is not None:
                lines.append(
                    f"{name} std:  {np.array2string(np.asarray(s[name]['std']), precision=5)}"
                )
    (outdir / "montecarlo.txt").write_text("\n".join(lines) + "\n")
    return doc


# --------------------------------------------------------------------------- #
# click wiring
# --------------------------------------------------------------------------- #

_config_opt = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), help="JSON or YAML run config."
)
_seed_opt = click.option("--seed", type=int, default=None, help="Override the config seed.")
_output_opt = click.option(
    "--output", "output", type=click.Path(file_okay=False), default=".", show_default=True
)
_log_opt = click.option("--log", "log", type=click.Path(dir_okay=False), default=None)
_truth_opt = click.option(
    "--truth", "truth", type=click.Path(dir_okay=False), default=None, help="Truth sidecar JSON."
)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Magnetometer-aided gyroscope calibration."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _outdir(output) -> Path:
    p = Path(output)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {p}: {exc}") from exc
    return p


@main.command()
@_config_opt
@_seed_opt
@_output_opt
@_guarded
def simulate(config_path, seed, output):
    """Write a synthetic log.csv and its truth.json sidecar."""
    cfg = _load(config_path, seed)
    path = do_simulate(cfg, _outdir(output))
    click.echo(f"wrote {path}")


@main.command()
@_config_opt
@_seed_opt
@_output_opt
@_log_opt
@_truth_opt
@_guarded
def calibrate(config_path, seed, output, log, truth):
    """Calibrate magnetometer and gyroscope from a log."""
    cfg = _load(config_path, seed)
    out = _outdir(output)
    do_calibrate(cfg, _resolve_log(cfg, log, out), out, Path(truth) if truth else None)
    click.echo((out / "report.txt").read_text(), nl=False)


@main.command()
@_config_opt
@_seed_opt
@_output_opt
@_log_opt
@_truth_opt
@click.option("--calibration", type=click.Path(dir_okay=False), default=None)
@_guarded
def evaluate(config_path, seed, output, log, truth, calibration):
    """Dead-reckoning drift check (and truth comparison when available)."""
    cfg = _load(config_path, seed)
    out = _outdir(output)
    do_evaluate(
        cfg,
        _resolve_log(cfg, log, out),
        out,
        Path(calibration) if calibration else None,
        Path(truth) if truth else None,
    )
    click.echo((out / "evaluation.txt").read_text(), nl=False)


@main.command()
@_config_opt
@_seed_opt
@_output_opt
@_guarded
def pipeline(config_path, seed, output):
    """Simulate, calibrate and evaluate in one output directory."""
    cfg = _load(config_path, seed)
    out = _outdir(output)
    log_path = do_simulate(cfg, out)
    do_calibrate(cfg, log_path, out)
    do_evaluate(cfg, log_path, out)
    click.echo((out / "report.txt").read_text(), nl=False)
    click.echo((out / "evaluation.txt").read_text(), nl=False)


@main.command()
@_config_opt
@_seed_opt
@click.option("--runs", type=int, default=None, help="Number of runs (default 50).")
@click.option("--workers", type=int, default=None, help="Parallel worker processes.")
@_output_opt
@_guarded
def montecarlo(config_path, seed, runs, workers, output):
    """Repeat simulate + calibrate over independent noise seeds."""
    cfg = _load(config_path, seed, runs)
    if workers is not None:
        cfg.workers = workers
    do_montecarlo(cfg, _outdir(output))
    click.echo((Path(output) / "montecarlo.txt").read_text(), nl=False)


if __name__ == "__main__":
    main()
