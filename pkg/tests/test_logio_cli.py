import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from gyromagcal import simulator
from gyromagcal.cli import main
from gyromagcal.errors import LogFormatError
from gyromagcal.logio import HEADER, RawLog, parse_log, write_log
from gyromagcal.report import RunConfig, load_config

GOOD = "t,gx,gy,gz,mx,my,mz\n0,0,0,0,1,0,0\n0.01,0.1,0,0,1,0,0\n0.02,0.1,0,0,1,0,0\n"


def _write(tmp_path, text, name="log.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestParseLog:
    def test_well_formed(self, tmp_path):
        log = parse_log(_write(tmp_path, GOOD))
        assert len(log) == 3
        assert np.allclose(log.gyro[1], [0.1, 0, 0])
        assert np.isclose(log.sample_rate, 100.0)

    def test_duplicate_timestamp_names_row(self, tmp_path):
        text = GOOD + "0.02,0,0,0,1,0,0\n"
        with pytest.raises(LogFormatError, match=r"log\.csv:5: timestamp") as exc:
            parse_log(_write(tmp_path, text))
        assert exc.value.row == 5

    def test_missing_mag_columns(self, tmp_path):
        with pytest.raises(LogFormatError, match="header") as exc:
            parse_log(_write(tmp_path, "t,gx,gy,gz\n0,0,0,0\n"))
        assert exc.value.row == 1

    @pytest.mark.parametrize(
        "text, match",
        [
            ("", "empty"),
            ("t,gx,gy,gz,mx,my,mz\n", "empty"),
            ("t,gx,gy,gz,mx,my,mz\n0,0,0,0,1,0\n", "columns"),
            ("t,gx,gy,gz,mx,my,mz\n0,0,a,0,1,0,0\n", "non-numeric"),
            ("t,gx,gy,gz,mx,my,mz\n0,0,nan,0,1,0,0\n", "non-finite"),
            ("t,gx,gy,gz,mx,my,mz\n0,0,0,0,1,0,0\n1,0,0,0,inf,0,0\n", "non-finite"),
        ],
    )
    def test_rejections(self, tmp_path, text, match):
        with pytest.raises(LogFormatError, match=match):
            parse_log(_write(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(LogFormatError, match="not found"):
            parse_log(tmp_path / "nope.csv")

    def test_roundtrip_is_exact(self, tmp_path, rng):
        n = 50
        log = RawLog(np.cumsum(rng.uniform(0.001, 0.02, n)), rng.normal(size=(n, 3)), rng.normal(size=(n, 3)))
        back = parse_log(write_log(log, tmp_path / "x.csv"))
        assert np.array_equal(back.t, log.t)
        assert np.array_equal(back.gyro, log.gyro) and np.array_equal(back.mag, log.mag)
        assert (tmp_path / "x.csv").read_text().splitlines()[0] == ",".join(HEADER)


class TestConfig:
    def test_yaml(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"truth": {"preset": "reference", "duration": 20}, "seed": 4, "magcal": "truth"}))
        cfg = load_config(p)
        assert cfg.truth.duration == 20 and cfg.seed == 4 and cfg.magcal == "truth"

    def test_hash_ignores_seed(self):
        a, b = RunConfig(seed=1), RunConfig(seed=2)
        assert a.hash() == b.hash()
        assert a.hash() != RunConfig(magcal="none").hash()

    @pytest.mark.parametrize(
        "data", [{"bogus": 1}, {"magcal": "maybe"}, {"noise": {"mag_noise_std": 0}}, {"runs": 0}]
    )
    def test_invalid(self, tmp_path, data):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(data))
        with pytest.raises(ValueError):
            load_config(p)


@pytest.fixture(scope="module")
def short_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "config.yaml"
    p.write_text(yaml.safe_dump({"truth": {"preset": "reference", "duration": 40}}))
    return p


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory, short_config):
    out = tmp_path_factory.mktemp("pipeline")
    res = CliRunner().invoke(main, ["pipeline", "--config", str(short_config), "--seed", "2", "--output", str(out)])
    assert res.exit_code == 0, res.output
    return out


class TestCli:
    def test_pipeline_artifacts(self, pipeline_dir):
        for name in (
            "log.csv", "truth.json", "report.json", "report.txt", "calibration.json",
            "trace_parameters.csv", "attitude_error.csv", "evaluation.json", "evaluation.txt",
            "dead_reckoning.csv",
        ):
            assert (pipeline_dir / name).exists(), name

    def test_report_contents(self, pipeline_dir):
        rep = json.loads((pipeline_dir / "report.json").read_text())
        g = rep["gyroscope"]
        assert len(g["K_g_upper"]) == 6
        assert len(g["eps_b_deg_s"]) == 3 and len(g["misalignment_euler_deg"]) == 3
        cov = np.array(g["covariance_diag"])
        assert cov.shape == (18,) and np.all(np.isfinite(cov)) and np.all(cov >= 0)
        assert rep["excitation"]["rank"] == 12
        assert set(rep["provenance"]) >= {"config_hash", "seed", "package_version", "log_sha256"}
        assert rep["provenance"]["seed"] == 2
        assert "generated_at" in rep
        e = rep["errors_vs_truth"]
        assert max(e["bias_deg_s"]) < 0.02 and e["misalignment_angle_deg"] < 0.1
        assert max(e["scale_factor_ppm"]) < 3000

    def test_plot_csvs(self, pipeline_dir):
        header = (pipeline_dir / "trace_parameters.csv").read_text().splitlines()[0].split(",")
        assert header[0] == "t" and "K_00" in header and "attitude_std_deg" in header
        assert sum(h.startswith("std_") for h in header) == 18
        data = np.loadtxt(pipeline_dir / "attitude_error.csv", delimiter=",", skiprows=1)
        assert data.shape[1] == 2 and np.all(data[:, 1] >= 0)

    def test_text_report_layout(self, pipeline_dir):
        text = (pipeline_dir / "report.txt").read_text()
        assert "K_g" in text and "deg/s" in text and "misalignment" in text

    def test_evaluate_reports_drift(self, pipeline_dir):
        ev = json.loads((pipeline_dir / "evaluation.json").read_text())
        assert ev["drift_calibrated"]["drift_angle_deg"] < ev["drift_uncalibrated"]["drift_angle_deg"]

    def test_single_axis_refused(self, tmp_path):
        cfg = simulator.TruthConfig(gyro_noise_density=0.0, mag_noise_std=0.0, duration=40.0)
        prof = simulator.single_axis_profile(40.0, 0.8 * cfg.m_e)
        write_log(simulator.synthesize(simulator.generate_trajectory(prof, cfg), cfg, 0), tmp_path / "log.csv")
        cfg_path = _write(tmp_path, "magcal: none\n", "c.yaml")
        res = CliRunner().invoke(main, ["calibrate", "--config", str(cfg_path), "--output", str(tmp_path)])
        assert res.exit_code == 3
        lines = res.stderr.strip().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("error: excitation-error [observability]")
        assert "insufficient excitation" in lines[0]

        # fitting the magnetometer on the same data fails earlier, same category
        res = CliRunner().invoke(main, ["calibrate", "--output", str(tmp_path)])
        assert res.exit_code == 3
        assert res.stderr.startswith("error: excitation-error [magcal]: insufficient attitude coverage")

    def test_evaluate_without_calibration(self, tmp_path):
        _write(tmp_path, GOOD)
        res = CliRunner().invoke(main, ["evaluate", "--output", str(tmp_path)])
        assert res.exit_code == 2
        assert res.stderr.startswith("error: input-error")
        assert "calibrate" in res.stderr

    def test_missing_log(self, tmp_path):
        res = CliRunner().invoke(main, ["calibrate", "--output", str(tmp_path)])
        assert res.exit_code == 2
        assert "error: input-error [logio]" in res.stderr

    def test_bad_log_row(self, tmp_path):
        _write(tmp_path, GOOD + "0.01,0,0,0,1,0,0\n")
        res = CliRunner().invoke(main, ["calibrate", "--log", str(tmp_path / "log.csv"), "--output", str(tmp_path)])
        assert res.exit_code == 2 and "log.csv:5" in res.stderr

    def test_bad_config(self, tmp_path):
        p = _write(tmp_path, "{not json", "c.json")
        res = CliRunner().invoke(main, ["simulate", "--config", str(p), "--output", str(tmp_path)])
        assert res.exit_code == 2 and res.stderr.startswith("error: input-error")

    def test_montecarlo(self, tmp_path, short_config):
        res = CliRunner().invoke(
            main, ["montecarlo", "--config", str(short_config), "--runs", "2", "--seed", "1", "--output", str(tmp_path)]
        )
        assert res.exit_code == 0, res.output
        doc = json.loads((tmp_path / "montecarlo.json").read_text())
        assert doc["summary"]["n"] == 2 and len(doc["runs"]) == 2

    def test_montecarlo_bad_runs(self, tmp_path):
        res = CliRunner().invoke(main, ["montecarlo", "--runs", "0", "--output", str(tmp_path)])
        assert res.exit_code == 2

    def test_simulate_sidecar(self, tmp_path, short_config):
        res = CliRunner().invoke(main, ["simulate", "--config", str(short_config), "--seed", "5", "--output", str(tmp_path)])
        assert res.exit_code == 0
        side = json.loads((tmp_path / "truth.json").read_text())
        assert side["seed"] == 5 and "segments" in side["profile"]
        assert len(parse_log(tmp_path / "log.csv")) == 4001
