import numpy as np
import pytest

from gyromagcal import evaluation, simulator
from gyromagcal.errors import InputError
from gyromagcal.gyrocal import GyroCalibration
from gyromagcal.rotations import euler_to_dcm, so3_exp

from .conftest import DEG


def _cal(K_g, eps_b, C_b_m):
    return GyroCalibration(np.asarray(K_g, float), np.asarray(eps_b, float), np.asarray(C_b_m, float), np.zeros(3), np.zeros(18))


class TestDeadReckon:
    def test_zero_rates(self):
        t = np.arange(100) * 0.01
        _, rep = evaluation.dead_reckon(t, np.zeros((100, 3)), GyroCalibration.identity())
        assert rep.drift_angle_deg == 0.0
        assert rep.drift_angle_deg >= 0

    def test_constant_bias_drift(self):
        t = np.arange(1001) * 0.01
        gyro = np.zeros((1001, 3))
        cal = _cal(np.eye(3), [0, 0, 1 * DEG], np.eye(3))
        _, rep = evaluation.dead_reckon(t, gyro, cal)
        assert np.isclose(rep.drift_angle_deg, 10.0)
        assert np.allclose(rep.euler_drift_deg, [0, 0, 10.0])

    def test_noise_free_closed_loop(self):
        cfg = simulator.TruthConfig.reference(gyro_noise_density=0.0, mag_noise_std=0.0)
        traj = simulator.generate_trajectory(simulator.default_profile(cfg.duration), cfg)
        log = simulator.synthesize(traj, cfg, 0)
        C, rep = evaluation.dead_reckon(log.t, log.gyro, _cal(cfg.K_g, cfg.eps_b, cfg.C_b_m))
        assert rep.drift_angle_deg < 1e-6
        assert C.shape == (len(log.t), 3, 3)

    def test_empty(self):
        with pytest.raises(InputError):
            evaluation.dead_reckon(np.zeros(0), np.zeros((0, 3)))

    def test_stationary_flag(self):
        t = np.arange(300) * 0.01
        g = np.zeros((300, 3))
        g[100:200, 0] = 1.0
        _, rep = evaluation.dead_reckon(t, g, None, stationary_threshold=0.02)
        assert rep.endpoints_stationary is True
        g[-1, 0] = 1.0
        _, rep = evaluation.dead_reckon(t, g, None, stationary_threshold=0.02)
        assert rep.endpoints_stationary is False


class TestCompareParams:
    def test_identical(self):
        truth = simulator.TruthConfig.reference()
        e = evaluation.compare_params(_cal(truth.K_g, truth.eps_b, truth.C_b_m), truth)
        assert e["scale_factor_ppm"] == [0.0, 0.0, 0.0]
        assert all(v == 0 for v in e["nonorthogonality_deg"].values())
        assert e["bias_deg_s"] == [0.0, 0.0, 0.0]
        assert np.allclose(e["misalignment_euler_deg"], 0) and np.isclose(e["misalignment_angle_deg"], 0, atol=1e-6)

    def test_ppm_definition(self):
        truth = simulator.TruthConfig.reference()
        K = truth.K_g.copy()
        K[np.diag_indices(3)] *= 1.001
        e = evaluation.compare_params(_cal(K, truth.eps_b, truth.C_b_m), truth)
        assert np.allclose(e["scale_factor_ppm"], 1000.0)

    def test_nonorthogonality_small_angle(self):
        truth = simulator.TruthConfig.reference()
        K = truth.K_g.copy()
        K[0, 1] += 1e-3
        e = evaluation.compare_params(_cal(K, truth.eps_b, truth.C_b_m), truth)
        assert np.isclose(e["nonorthogonality_deg"]["01"], np.degrees(1e-3))
        assert e["nonorthogonality_deg"]["12"] == 0

    def test_bias_sign_symmetry(self):
        truth = simulator.TruthConfig.reference()
        est = _cal(truth.K_g, truth.eps_b + [0.01, -0.02, 0.005], truth.C_b_m)
        flip = np.array([1.0, -1.0, 1.0])
        truth2 = simulator.TruthConfig.reference(eps_b=truth.eps_b * flip)
        est2 = _cal(truth.K_g, est.eps_b * flip, truth.C_b_m)
        a = evaluation.compare_params(est, truth)["bias_deg_s"]
        b = evaluation.compare_params(est2, truth2)["bias_deg_s"]
        assert np.allclose(a, b)

    def test_misalignment_angle(self):
        truth = simulator.TruthConfig.reference()
        C = so3_exp([0, 0, 0.5 * DEG]) @ truth.C_b_m
        e = evaluation.compare_params(_cal(truth.K_g, truth.eps_b, C), truth)
        assert np.isclose(e["misalignment_angle_deg"], 0.5)


class TestAttitudeError:
    def test_identical(self, rng):
        C = np.array([so3_exp(v) for v in rng.normal(size=(20, 3))])
        t = np.arange(20.0)
        assert np.allclose(evaluation.attitude_error_trace(t, C, t, C), 0, atol=1e-6)

    def test_constant_yaw_offset(self, rng):
        C = np.array([so3_exp(v) for v in rng.normal(size=(20, 3))])
        off = euler_to_dcm([0, 0, 1 * DEG])
        t = np.arange(20.0)
        assert np.allclose(evaluation.attitude_error_trace(t, C, t, C @ off), 1.0)

    def test_misaligned_times(self):
        C = np.tile(np.eye(3), (5, 1, 1))
        with pytest.raises(InputError):
            evaluation.attitude_error_trace(np.arange(5.0), C, np.arange(5.0) + 0.5, C)
        with pytest.raises(InputError):
            evaluation.attitude_error_trace(np.arange(5.0), C, np.arange(4.0), C[:4])


class TestConvergence:
    def test_index(self):
        tr = np.concatenate([np.linspace(0, 1, 11), np.geomspace(1, 1e-3, 50)])
        k = evaluation.convergence_index(tr)
        assert tr[k] < 10 * tr[-1] and tr[k - 1] >= 10 * tr[-1]
        assert k > int(np.argmax(tr))
