import numpy as np
import pytest

from gyromagcal import observability as obs
from gyromagcal import gyrocal, simulator
from gyromagcal.errors import ExcitationError, InputError
from gyromagcal.rotations import skew, unvec, vec


class TestBuildM:
    def test_zero_field(self):
        assert np.array_equal(obs.build_M([0.3, 0.1, -1], [0, 0, 0]), np.zeros((3, 12)))

    def test_unit_row(self):
        M = obs.build_M([1, 0, 0], [0, 0, 1])
        assert np.array_equal(M[:, :3], skew([0, 0, 1]))
        assert np.array_equal(M[:, 3:9], np.zeros((3, 6)))
        assert np.array_equal(M[:, 9:], skew([0, 0, 1]))

    def test_against_field_kinematics(self, rng):
        for _ in range(50):
            y, m, eps = rng.normal(size=(3, 3))
            K = rng.normal(size=(3, 3))
            theta = np.concatenate([vec(K), eps])
            assert np.allclose(obs.build_M(y, m) @ theta, np.cross(m, K @ y + eps), atol=1e-13)

    def test_batch_matches_single(self, rng):
        y, m = rng.normal(size=(2, 20, 3))
        batch = obs.build_M_batch(y, m)
        for k in range(20):
            assert np.allclose(batch[k], obs.build_M(y[k], m[k]))


class TestGramian:
    def test_multi_axis_full_rank(self, noise_free_reference):
        truth, traj, log = noise_free_reference
        rep = obs.gramian(log.t, log.mag, log.gyro)
        assert rep.rank == 12 and rep.sufficient
        assert np.isfinite(rep.condition_number)
        assert np.allclose(rep.gramian, rep.gramian.T)
        assert np.linalg.eigvalsh(rep.gramian).min() > -1e-9 * np.trace(rep.gramian)

    def test_field_axis_rotation_rank_deficient(self):
        truth = simulator.TruthConfig(gyro_noise_density=0.0, mag_noise_std=0.0, duration=60.0)
        prof = simulator.single_axis_profile(60.0, 0.8 * truth.m_e)
        log = simulator.synthesize(simulator.generate_trajectory(prof, truth), truth, 0)
        rep = obs.gramian(log.t, log.mag, log.gyro)
        assert rep.rank < 12 and not rep.sufficient
        assert "rank" in rep.warning

    def test_zero_rates_rank_at_most_three(self, rng):
        t = np.arange(500) * 0.01
        m = np.tile([0.3, 0.4, np.sqrt(0.75)], (500, 1))
        rep = obs.gramian(t, m, np.zeros((500, 3)))
        assert rep.rank <= 3

    def test_rank_monotone(self, noise_free_reference):
        _, _, log = noise_free_reference
        ranks = [obs.gramian(log.t[:n], log.mag[:n], log.gyro[:n]).rank for n in (50, 300, 600, 1200, 3000)]
        assert ranks == sorted(ranks)

    def test_empty(self):
        with pytest.raises(InputError):
            obs.gramian(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))

    def test_misaligned(self):
        with pytest.raises(InputError):
            obs.gramian(np.arange(5.0), np.zeros((4, 3)), np.zeros((5, 3)))

    def test_axes_excited(self, noise_free_reference):
        _, _, log = noise_free_reference
        rep = obs.gramian(log.t, log.mag, log.gyro)
        assert rep.axes_excited.shape == (3,) and np.all(rep.axes_excited > 2.0)

    def test_warning_threshold(self):
        rep = obs.ExcitationReport(np.eye(12), 12, 2e6, 1e-3, np.ones(3))
        assert rep.warning is not None and rep.sufficient
        assert obs.ExcitationReport(np.eye(12), 12, 10.0, 1.0, np.ones(3)).warning is None


class TestClosedForm:
    def test_reference(self, noise_free_reference, reference_K):
        _, _, log = noise_free_reference
        K, eps = reference_K
        vk, e = obs.solve_closed_form(log.t, log.mag, log.gyro)
        assert np.max(np.abs(unvec(vk) - K)) < 1e-3
        assert np.max(np.abs(e - eps)) < 1e-3

    def test_identity(self, identity_1khz):
        _, log = identity_1khz
        vk, e = obs.solve_closed_form(log.t, log.mag, log.gyro)
        assert np.max(np.abs(vk - vec(np.eye(3)))) < 1e-6
        assert np.max(np.abs(e)) < 1e-6

    def test_agrees_with_interval_least_squares(self, noise_free_reference):
        _, _, log = noise_free_reference
        vk, e = obs.solve_closed_form(log.t, log.mag, log.gyro)
        K0, eps0, _ = gyrocal.init_least_squares(log.t, log.mag, log.gyro)
        assert np.max(np.abs(vk - vec(K0))) < 1e-4
        assert np.max(np.abs(e - eps0)) < 1e-4

    def test_singular(self):
        t = np.arange(500) * 0.01
        m = np.tile([0.0, 0.0, 1.0], (500, 1))
        with pytest.raises(ExcitationError):
            obs.solve_closed_form(t, m, np.zeros((500, 3)))
