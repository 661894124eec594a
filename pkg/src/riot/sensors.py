"""Synthetic trajectory generation, IMU measurement synthesis and dead reckoning.

The generated ground truth is *discretely* self-consistent: stored
velocities satisfy the same second-order position update the integrator
uses, so with all noise and bias terms zeroed, strapdown integration of
the synthesised measurements reproduces the true trajectory to machine
precision.  This is what makes the clean-data round-trip a meaningful
correctness oracle rather than a discretisation-error measurement.

Each generation function owns its RNG; calls are pure and safe to run in
parallel across sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .geometry import (
    Pose,
    Quaternion,
    WorldConstants,
    accel_mag_correction,
    attitude_step,
    position_step,
    quat_log,
    quat_mul,
    quat_to_rotmat,
)
from .metrics import TrajectoryEstimate

TRAJECTORY_KINDS = ("line", "circle", "figure-eight", "random-smooth")


@dataclass
class NoiseSpec:
    """Per-axis measurement noise and bias random-walk magnitudes.

    Defaults approximate a consumer-grade MEMS IMU; walk sigmas are the
    per-step standard deviation of the bias increments.
    """

    gyro_sigma: float = 0.005
    accel_sigma: float = 0.05
    mag_sigma: float = 0.005
    gyro_bias_walk_sigma: float = 1e-5
    accel_bias_walk_sigma: float = 1e-5
    gyro_bias0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias0: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.gyro_bias0 = np.asarray(self.gyro_bias0, dtype=np.float64)
        self.accel_bias0 = np.asarray(self.accel_bias0, dtype=np.float64)
        for name in ("gyro_sigma", "accel_sigma", "mag_sigma",
                     "gyro_bias_walk_sigma", "accel_bias_walk_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @staticmethod
    def zero():
        return NoiseSpec(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class ImuSample:
    """One time-stamped 9D measurement with its ground-truth pose."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray
    mag: np.ndarray
    truth: Pose


@dataclass
class ImuSequence:
    """A uniformly sampled IMU recording with ground truth, stored columnar."""

    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    mag: np.ndarray
    truth_pos: np.ndarray
    truth_vel: np.ndarray
    truth_quat: np.ndarray
    rate_hz: float
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def seq_id(self):
        return str(self.meta.get("seq_id", ""))

    def imu_matrix(self):
        """The (n, 9) measurement matrix [gyro | accel | mag]."""
        return np.hstack([self.gyro, self.accel, self.mag])

    def truth_pose(self, i) -> Pose:
        return Pose(
            p=self.truth_pos[i].copy(),
            v=self.truth_vel[i].copy(),
            q=Quaternion.from_array(self.truth_quat[i]),
            t=float(self.t[i]),
        )

    @property
    def samples(self):
        return [
            ImuSample(float(self.t[i]), self.gyro[i], self.accel[i],
                      self.mag[i], self.truth_pose(i))
            for i in range(len(self))
        ]


# ----------------------------------------------------------------------
# ground-truth trajectory generation
# ----------------------------------------------------------------------

def _yaw_quat(yaw):
    return Quaternion(float(np.cos(yaw / 2)), 0.0, 0.0, float(np.sin(yaw / 2)))


def _analytic_path(kind, times, rng, params):
    """Return analytic positions (n,3), velocities (n,3) for each kind."""
    n = len(times)
    if kind == "line":
        speed = params.get("speed", 1.0)
        direction = np.asarray(params.get("direction", (1.0, 0.0, 0.0)), dtype=np.float64)
        direction = direction / np.linalg.norm(direction)
        pos = times[:, None] * (speed * direction)
        vel = np.broadcast_to(speed * direction, (n, 3)).copy()
    elif kind == "circle":
        r = params.get("radius", 2.0)
        omega = params.get("omega", 0.5)
        phase = omega * times
        pos = np.stack([r * np.sin(phase), r * (1.0 - np.cos(phase)),
                        np.zeros(n)], axis=1)
        vel = np.stack([r * omega * np.cos(phase), r * omega * np.sin(phase),
                        np.zeros(n)], axis=1)
    elif kind == "figure-eight":
        a = params.get("amp_x", 2.0)
        b = params.get("amp_y", 1.0)
        omega = params.get("omega", 0.3)
        pos = np.stack([a * np.sin(omega * times), b * np.sin(2 * omega * times),
                        np.zeros(n)], axis=1)
        vel = np.stack([a * omega * np.cos(omega * times),
                        2 * b * omega * np.cos(2 * omega * times),
                        np.zeros(n)], axis=1)
    elif kind == "random-smooth":
        # band-limited harmonics on top of a steady drift keeps speed
        # bounded away from zero so the heading stays well defined
        harmonics = params.get("harmonics", 4)
        f_max = params.get("max_freq_hz", 0.35)
        drift = params.get("drift_speed", 0.4)
        heading = rng.uniform(0, 2 * np.pi)
        drift_v = drift * np.array([np.cos(heading), np.sin(heading), 0.0])
        pos = times[:, None] * drift_v
        vel = np.broadcast_to(drift_v, (n, 3)).copy()
        for axis, scale in ((0, 1.0), (1, 1.0), (2, 0.15)):
            for _ in range(harmonics):
                f = rng.uniform(0.05, f_max)
                amp = scale * rng.uniform(0.05, 0.25)
                phi = rng.uniform(0, 2 * np.pi)
                w = 2 * np.pi * f
                pos[:, axis] += amp * np.sin(w * times + phi)
                vel[:, axis] += amp * w * np.cos(w * times + phi)
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}; "
                         f"expected one of {TRAJECTORY_KINDS}")
    return pos, vel


def gen_trajectory(kind, duration_s, rate_hz, rng, **params):
    """Generate a smooth ground-truth pose sequence.

    Positions follow the analytic path exactly; stored velocities are the
    unique sequence that makes the discrete second-order position update
    exact, which keeps them within O(dt^2) of the analytic velocity.
    Attitude is level with yaw following the path heading.
    """
    if duration_s <= 0 or rate_hz <= 0:
        raise ValueError("duration_s and rate_hz must be positive")
    dt = 1.0 / rate_hz
    n = int(round(duration_s * rate_hz)) + 1
    times = np.arange(n) * dt
    pos, vel_analytic = _analytic_path(kind, times, rng, params)

    vel = np.empty_like(pos)
    vel[0] = vel_analytic[0]
    for i in range(n - 1):
        vel[i + 1] = 2.0 * (pos[i + 1] - pos[i]) / dt - vel[i]

    yaw = np.arctan2(vel_analytic[:, 1], vel_analytic[:, 0])
    poses = [
        Pose(p=pos[i], v=vel[i], q=_yaw_quat(yaw[i]).canonical(), t=float(times[i]))
        for i in range(n)
    ]
    return poses


# ----------------------------------------------------------------------
# measurement synthesis
# ----------------------------------------------------------------------

def _true_rates(poses, dt):
    """Body angular rates making the discrete attitude update exact.

    rate_t = (2/dt) * log(conj(q_t) * q_{t+1}); the relative rotation is
    sign-canonicalised first so per-sample double-cover flips in the
    stored attitudes cannot masquerade as near-360-degree steps.
    """
    n = len(poses)
    rates = np.zeros((n, 3))
    for i in range(n - 1):
        rel = quat_mul(poses[i].q.conjugate(), poses[i + 1].q).canonical()
        rates[i] = (2.0 / dt) * quat_log(rel)
    if n >= 2:
        rates[n - 1] = rates[n - 2]
    return rates


def simulate_imu(truth, noise: NoiseSpec, wc: WorldConstants, rng,
                 meta=None) -> ImuSequence:
    """Synthesise gyro/accel/mag measurements for a ground-truth pose list.

    gyro  = rate + gyro_bias + gyro_noise
    accel = specific force + accel_bias + accel_noise,
            specific force = R_nav_to_body @ (a_nav - gravity)
    mag   = R_nav_to_body @ mag_direction + mag_noise

    Biases evolve as per-step Gaussian random walks from their initial
    values.  Deterministic for a fixed generator state.
    """
    n = len(truth)
    if n < 2:
        raise DataError(f"need at least 2 poses to synthesise measurements, got {n}")
    dt = truth[1].t - truth[0].t
    times = np.array([p.t for p in truth])

    rates = _true_rates(truth, dt)
    accel_nav = np.zeros((n, 3))
    for i in range(n - 1):
        accel_nav[i] = (truth[i + 1].v - truth[i].v) / dt
    accel_nav[n - 1] = accel_nav[n - 2]

    specific = np.zeros((n, 3))
    mag_clean = np.zeros((n, 3))
    for i, pose in enumerate(truth):
        r_bn = quat_to_rotmat(pose.q).T
        specific[i] = r_bn @ (accel_nav[i] - wc.gravity)
        mag_clean[i] = r_bn @ wc.mag_direction

    gyro_noise = rng.normal(0.0, noise.gyro_sigma, (n, 3))
    accel_noise = rng.normal(0.0, noise.accel_sigma, (n, 3))
    mag_noise = rng.normal(0.0, noise.mag_sigma, (n, 3))
    gyro_steps = rng.normal(0.0, noise.gyro_bias_walk_sigma, (n, 3))
    accel_steps = rng.normal(0.0, noise.accel_bias_walk_sigma, (n, 3))
    gyro_steps[0] = 0.0
    accel_steps[0] = 0.0
    gyro_bias = noise.gyro_bias0 + np.cumsum(gyro_steps, axis=0)
    accel_bias = noise.accel_bias0 + np.cumsum(accel_steps, axis=0)

    return ImuSequence(
        t=times,
        gyro=rates + gyro_bias + gyro_noise,
        accel=specific + accel_bias + accel_noise,
        mag=mag_clean + mag_noise,
        truth_pos=np.stack([p.p for p in truth]),
        truth_vel=np.stack([p.v for p in truth]),
        truth_quat=np.stack([p.q.to_array() for p in truth]),
        rate_hz=1.0 / dt,
        meta=dict(meta or {}),
    )


# ----------------------------------------------------------------------
# classical strapdown integration
# ----------------------------------------------------------------------

def dead_reckon(seq: ImuSequence, initial: Pose,
                use_mag_correction=False, wc=None) -> TrajectoryEstimate:
    """Integrate raw measurements from a known start, biases assumed zero.

    The textbook baseline: attitude from gyro integration (optionally
    pulled towards the accel/mag cues), position from double integration
    of the rotated specific force.  Unmodelled bias drifts unboundedly,
    which is precisely the failure mode the learned estimators target.
    """
    n = len(seq)
    if n == 0:
        raise DataError("cannot dead-reckon an empty sequence")
    wc = replace(wc or WorldConstants(), dt=1.0 / seq.rate_hz)

    est = np.zeros((n, 3))
    est[0] = initial.p
    q = initial.q
    p = np.asarray(initial.p, dtype=np.float64)
    v = np.asarray(initial.v, dtype=np.float64)
    zero3 = np.zeros(3)
    for i in range(n - 1):
        if use_mag_correction:
            corr = accel_mag_correction(seq.accel[i], seq.mag[i], q, wc)
        else:
            corr = zero3
        pose = Pose(p=p, v=v, q=q, t=float(seq.t[i]))
        p, v = position_step(pose, seq.accel[i], zero3, wc)
        q = attitude_step(q, seq.gyro[i], zero3, corr, wc)
        est[i + 1] = p

    return TrajectoryEstimate(
        timestamps=seq.t.copy(),
        est_pos=est,
        true_pos=seq.truth_pos.copy(),
        seq_id=seq.seq_id,
    )
