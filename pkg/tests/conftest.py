import numpy as np
import pytest

from gyromagcal import gyrocal, simulator
from gyromagcal.rotations import euler_to_dcm

DEG = np.pi / 180.0


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_upper(rng, diag_low=0.5):
    R = np.triu(rng.normal(scale=0.3, size=(3, 3)))
    R[np.diag_indices(3)] = rng.uniform(diag_low, 2.0, size=3)
    return R


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def reference_K():
    truth = simulator.TruthConfig.reference()
    return truth.C_b_m @ truth.K_g, truth.C_b_m @ truth.eps_b


@pytest.fixture(scope="session")
def noise_free_reference():
    truth = simulator.TruthConfig.reference(gyro_noise_density=0.0, mag_noise_std=0.0)
    traj = simulator.generate_trajectory(simulator.default_profile(truth.duration), truth)
    log = simulator.synthesize(traj, truth, 0)
    return truth, traj, log


@pytest.fixture(scope="session")
def noise_free_reference_cal(noise_free_reference):
    truth, traj, log = noise_free_reference
    return gyrocal.run_calibration(log, truth.mag_intrinsics)


@pytest.fixture(scope="session")
def identity_1khz():
    """Noise-free, already calibrated sensors sampled finely (30 s, 1 kHz)."""
    truth = simulator.TruthConfig(
        gyro_noise_density=0.0, mag_noise_std=0.0, sample_rate=1000.0, duration=30.0
    )
    traj = simulator.generate_trajectory(simulator.default_profile(truth.duration), truth)
    return truth, simulator.synthesize(traj, truth, 0)


@pytest.fixture(scope="session")
def noisy_reference_run():
    truth = simulator.TruthConfig.reference()
    traj = simulator.generate_trajectory(simulator.default_profile(truth.duration), truth)
    log = simulator.synthesize(traj, truth, 7)
    cal, trace = gyrocal.run_calibration(log, truth.mag_intrinsics)
    return truth, traj, log, cal, trace


# --------------------------------------------------------------------------- #
# Acceptance reporting: one PASS/FAIL line per criterion at the end of the run.
# --------------------------------------------------------------------------- #

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "failed": []})
    if rep.failed:
        entry["ok"] = False
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] else "FAIL"
        extra = f" (failed: {', '.join(e['failed'])})" if e["failed"] else ""
        terminalreporter.write_line(f"criterion {n} [{e['title']}]: {status}{extra}")
