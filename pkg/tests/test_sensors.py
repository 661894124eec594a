import numpy as np
import pytest

from riot import metrics, sensors
from riot.errors import DataError
from riot.geometry import Pose, Quaternion, WorldConstants, quat_to_rotmat
from riot.sensors import NoiseSpec


def stationary_poses(n, dt=0.01):
    return [
        Pose(p=np.zeros(3), v=np.zeros(3), q=Quaternion.identity(), t=i * dt)
        for i in range(n)
    ]


# ----------------------------------------------------------------------
# trajectory generation
# ----------------------------------------------------------------------

def test_line_final_position(rng):
    poses = sensors.gen_trajectory("line", 10.0, 100.0, rng, speed=1.0,
                                   direction=(1, 0, 0))
    dist = np.linalg.norm(poses[-1].p - poses[0].p)
    assert abs(dist - 10.0) <= 1e-9


def test_circle_centripetal_acceleration(rng):
    r, omega = 2.0, 0.4
    poses = sensors.gen_trajectory("circle", 20.0, 100.0, rng,
                                   radius=r, omega=omega)
    dt = poses[1].t - poses[0].t
    pos = np.stack([p.p for p in poses])
    accel = (pos[2:] - 2 * pos[1:-1] + pos[:-2]) / dt**2
    mags = np.linalg.norm(accel, axis=1)
    assert np.abs(mags - r * omega**2).max() <= 1e-6


@pytest.mark.parametrize("kind", sensors.TRAJECTORY_KINDS)
def test_velocity_consistent_with_positions(kind, rng):
    poses = sensors.gen_trajectory(kind, 8.0, 100.0, rng)
    pos = np.stack([p.p for p in poses])
    vel = np.stack([p.v for p in poses])
    t = np.array([p.t for p in poses])
    numeric = np.gradient(pos, t, axis=0)
    assert np.abs(numeric[1:-1] - vel[1:-1]).max() <= 1e-3


@pytest.mark.parametrize("kind", sensors.TRAJECTORY_KINDS)
def test_attitudes_unit_norm(kind, rng):
    poses = sensors.gen_trajectory(kind, 2.0, 50.0, rng)
    for p in poses:
        assert abs(p.q.norm() - 1.0) <= 1e-12
        assert p.q.w >= 0


def test_unknown_kind(rng):
    with pytest.raises(ValueError):
        sensors.gen_trajectory("spiral", 1.0, 10.0, rng)


def test_invalid_duration(rng):
    with pytest.raises(ValueError):
        sensors.gen_trajectory("line", -1.0, 10.0, rng)


# ----------------------------------------------------------------------
# measurement synthesis
# ----------------------------------------------------------------------

def test_stationary_clean_measurements(rng):
    wc = WorldConstants()
    seq = sensors.simulate_imu(stationary_poses(50), NoiseSpec.zero(), wc, rng)
    r_bn = quat_to_rotmat(Quaternion.identity()).T
    np.testing.assert_allclose(seq.gyro, 0.0, atol=1e-15)
    np.testing.assert_allclose(
        seq.mag, np.tile(r_bn @ wc.mag_direction, (50, 1)), atol=1e-15
    )
    np.testing.assert_allclose(
        seq.accel, np.tile(-(r_bn @ wc.gravity), (50, 1)), atol=1e-12
    )


def test_constant_bias_is_exact(rng):
    wc = WorldConstants()
    bias = np.array([0.02, -0.01, 0.005])
    noise = NoiseSpec.zero()
    noise.gyro_bias0 = bias
    seq = sensors.simulate_imu(stationary_poses(100), noise, wc, rng)
    residual = seq.gyro  # stationary: true rate is zero
    np.testing.assert_allclose(residual.mean(axis=0), bias, atol=1e-15)
    np.testing.assert_allclose(residual, np.tile(bias, (100, 1)), atol=1e-15)


def test_noise_standard_deviation(rng):
    wc = WorldConstants()
    noise = NoiseSpec.zero()
    noise.gyro_sigma = 0.005
    noise.accel_sigma = 0.05
    seq = sensors.simulate_imu(stationary_poses(100_000), noise, wc, rng)
    gyro_std = seq.gyro.std(axis=0)
    accel_std = (seq.accel - seq.accel.mean(axis=0)).std(axis=0)
    assert np.all(np.abs(gyro_std - 0.005) < 0.03 * 0.005)
    assert np.all(np.abs(accel_std - 0.05) < 0.03 * 0.05)


def test_clean_mag_is_unit_norm(rng):
    wc = WorldConstants()
    poses = sensors.gen_trajectory("circle", 5.0, 100.0, rng)
    seq = sensors.simulate_imu(poses, NoiseSpec.zero(), wc, rng)
    np.testing.assert_allclose(np.linalg.norm(seq.mag, axis=1), 1.0, atol=1e-12)


def test_bias_random_walk_variance(rng):
    wc = WorldConstants()
    walk = 0.01
    steps = 21  # 20 increments after the initial sample
    noise = NoiseSpec.zero()
    noise.gyro_bias_walk_sigma = walk
    poses = stationary_poses(steps)
    finals = np.empty((10_000, 3))
    for trial in range(10_000):
        seq = sensors.simulate_imu(poses, noise, wc, rng)
        finals[trial] = seq.gyro[-1]  # zero rate & noise: gyro == bias
    var = finals.var(axis=0).mean()
    expected = (steps - 1) * walk**2
    assert abs(var - expected) / expected < 0.05


def test_simulation_deterministic_for_fixed_seed():
    wc = WorldConstants()
    poses = stationary_poses(200)
    a = sensors.simulate_imu(poses, NoiseSpec(), wc, np.random.default_rng(5))
    b = sensors.simulate_imu(poses, NoiseSpec(), wc, np.random.default_rng(5))
    np.testing.assert_array_equal(a.gyro, b.gyro)
    np.testing.assert_array_equal(a.accel, b.accel)
    np.testing.assert_array_equal(a.mag, b.mag)


def test_simulate_requires_two_poses(rng):
    with pytest.raises(DataError):
        sensors.simulate_imu(stationary_poses(1), NoiseSpec.zero(),
                             WorldConstants(), rng)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        NoiseSpec(gyro_sigma=-1.0)


# ----------------------------------------------------------------------
# dead reckoning
# ----------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["circle", "figure-eight", "random-smooth"])
def test_clean_roundtrip_recovers_truth(kind, rng):
    wc = WorldConstants()
    poses = sensors.gen_trajectory(kind, 60.0, 100.0, rng)
    seq = sensors.simulate_imu(poses, NoiseSpec.zero(), wc, rng)
    traj = sensors.dead_reckon(seq, poses[0])
    assert metrics.ate(traj, dims="3d") < 1e-3


def test_accel_bias_drift_matches_closed_form(rng):
    wc = WorldConstants()
    noise = NoiseSpec.zero()
    noise.accel_bias0 = np.array([0.1, 0.0, 0.0])
    poses = stationary_poses(6001)
    seq = sensors.simulate_imu(poses, noise, wc, rng)
    traj = sensors.dead_reckon(seq, poses[0])
    terminal = np.linalg.norm(traj.est_pos[-1] - traj.true_pos[-1])
    assert abs(terminal - 180.0) / 180.0 < 0.2


def test_single_sample_sequence(rng):
    wc = WorldConstants()
    seq = sensors.simulate_imu(stationary_poses(2), NoiseSpec.zero(), wc, rng)
    short = sensors.ImuSequence(
        t=seq.t[:1], gyro=seq.gyro[:1], accel=seq.accel[:1], mag=seq.mag[:1],
        truth_pos=seq.truth_pos[:1], truth_vel=seq.truth_vel[:1],
        truth_quat=seq.truth_quat[:1], rate_hz=seq.rate_hz,
    )
    initial = Pose(p=np.array([1.0, 2.0, 3.0]), v=np.zeros(3),
                   q=Quaternion.identity(), t=0.0)
    traj = sensors.dead_reckon(short, initial)
    np.testing.assert_array_equal(traj.est_pos, [[1.0, 2.0, 3.0]])


def test_mag_correction_stabilises_gyro_bias_attitude(rng):
    # a tilt-axis gyro bias leaks gravity into the horizontal channels;
    # the accel/mag correction bounds the tilt and with it the drift
    wc = WorldConstants()
    noise = NoiseSpec.zero()
    noise.gyro_bias0 = np.array([0.01, -0.005, 0.0])
    poses = stationary_poses(3000)
    seq = sensors.simulate_imu(poses, noise, wc, rng)
    plain = sensors.dead_reckon(seq, poses[0], use_mag_correction=False)
    corrected = sensors.dead_reckon(seq, poses[0], use_mag_correction=True)
    assert metrics.ate(corrected, dims="3d") < metrics.ate(plain, dims="3d")


def test_sequence_uniform_dt(rng):
    poses = sensors.gen_trajectory("line", 5.0, 100.0, rng)
    seq = sensors.simulate_imu(poses, NoiseSpec.zero(), WorldConstants(), rng)
    dts = np.diff(seq.t)
    assert np.abs(dts - 0.01).max() <= 1e-9
    assert seq.rate_hz == pytest.approx(100.0)


def test_imu_matrix_layout(rng):
    poses = stationary_poses(5)
    seq = sensors.simulate_imu(poses, NoiseSpec.zero(), WorldConstants(), rng)
    m = seq.imu_matrix()
    assert m.shape == (5, 9)
    np.testing.assert_array_equal(m[:, 0:3], seq.gyro)
    np.testing.assert_array_equal(m[:, 3:6], seq.accel)
    np.testing.assert_array_equal(m[:, 6:9], seq.mag)
