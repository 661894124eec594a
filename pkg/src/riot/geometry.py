"""Quaternion algebra, attitude/position dynamics and the quaternion angle loss.

Frame conventions, fixed once to avoid silent sign bugs:

* quaternions are Hamilton, scalar-first (w, x, y, z), canonical sign w >= 0;
* ``quat_to_rotmat(q)`` maps body -> navigation; its transpose maps
  navigation -> body;
* gravity defaults to (0, 0, -9.81) m/s^2 in the navigation frame, so a
  stationary accelerometer at identity attitude reads (0, 0, +9.81).

Everything in this module is a pure function over value types and safe
for concurrent use.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DataError

# below this rotation-vector magnitude quat_exp/quat_log switch to series
_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class Quaternion:
    """Unit attitude quaternion, scalar-first."""

    w: float
    x: float
    y: float
    z: float

    def to_array(self):
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(a):
        a = np.asarray(a, dtype=np.float64)
        return Quaternion(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @staticmethod
    def identity():
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    def norm(self):
        return float(np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2))

    def normalized(self):
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def canonical(self):
        """Flip sign so the scalar part is non-negative (double-cover pick)."""
        if self.w < 0:
            return Quaternion(-self.w, -self.x, -self.y, -self.z)
        return self

    def conjugate(self):
        return Quaternion(self.w, -self.x, -self.y, -self.z)


@dataclass
class Pose:
    """Position/velocity/attitude sample at time ``t``."""

    p: np.ndarray
    v: np.ndarray
    q: Quaternion
    t: float

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)


@dataclass
class WorldConstants:
    """Navigation-frame constants shared by simulation and integration."""

    gravity: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, -9.81])
    )
    # unit magnetic direction with a 60 degree dip, configurable per site
    mag_direction: np.ndarray = field(
        default_factory=lambda: np.array([0.5, 0.0, -np.sqrt(3.0) / 2.0])
    )
    dt: float = 0.01

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=np.float64)
        self.mag_direction = np.asarray(self.mag_direction, dtype=np.float64)
        n = np.linalg.norm(self.mag_direction)
        if abs(n - 1.0) > 1e-9:
            if n == 0:
                raise ValueError("magnetic direction must be a unit vector")
            self.mag_direction = self.mag_direction / n
        if self.dt <= 0:
            raise ValueError(f"sample interval must be positive, got {self.dt}")


# ----------------------------------------------------------------------
# quaternion algebra
# ----------------------------------------------------------------------

def quat_mul(j: Quaternion, k: Quaternion) -> Quaternion:
    """Hamilton product j * k (component formula, no normalisation)."""
    return Quaternion(
        j.w * k.w - j.x * k.x - j.y * k.y - j.z * k.z,
        j.w * k.x + j.x * k.w + j.y * k.z - j.z * k.y,
        j.w * k.y - j.x * k.z + j.y * k.w + j.z * k.x,
        j.w * k.z + j.x * k.y - j.y * k.x + j.z * k.w,
    )


def quat_exp(v) -> Quaternion:
    """Exponential of the pure quaternion (0, v): (cos|v|, sin|v| * v/|v|).

    The rotation represented has angle 2|v| about v.  Below ``1e-8`` the
    sinc factor is evaluated by series to avoid 0/0.
    """
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    if theta < _SMALL_ANGLE:
        sinc = 1.0 - theta * theta / 6.0
        return Quaternion(1.0 - theta * theta / 2.0, *(sinc * v))
    s = np.sin(theta) / theta
    return Quaternion(float(np.cos(theta)), *(s * v))


def quat_log(q: Quaternion):
    """Inverse of :func:`quat_exp` for unit quaternions; returns a 3-vector."""
    vec = np.array([q.x, q.y, q.z])
    vn = float(np.linalg.norm(vec))
    theta = float(np.arctan2(vn, q.w))
    if vn < _SMALL_ANGLE:
        # first-order: log(q) ~ vec / w for tiny rotations
        return vec / q.w if q.w != 0 else vec
    return vec * (theta / vn)


def quat_to_rotmat(q: Quaternion, strict=False):
    """Rotation matrix for ``q``, mapping body -> navigation coordinates.

    Inputs further than 1e-6 from unit norm are renormalised with a
    warning, or rejected when ``strict`` is set.
    """
    n = q.norm()
    if abs(n - 1.0) > 1e-6:
        if strict:
            raise ValueError(f"quaternion norm {n} is not within 1e-6 of 1")
        warnings.warn(f"renormalising quaternion with norm {n}", stacklevel=2)
        q = q.normalized()
    elif n != 1.0:
        q = q.normalized()
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_angle(j: Quaternion, k: Quaternion) -> float:
    """Rotation angle (rad) between two unit attitudes, double-cover aware."""
    dot = abs(j.w * k.w + j.x * k.x + j.y * k.y + j.z * k.z)
    return 2.0 * float(np.arccos(min(1.0, dot)))


# ----------------------------------------------------------------------
# dynamics
# ----------------------------------------------------------------------

def position_step(pose: Pose, accel_meas, accel_bias, wc: WorldConstants):
    """One interval of the position/velocity dynamics.

    Returns ``(p_next, v_next)`` for navigation-frame acceleration
    ``a_n = R_body_to_nav @ (accel_meas - accel_bias) + gravity``.
    Measurement noise is the sensor model's business, not handled here.
    """
    accel_meas = np.asarray(accel_meas, dtype=np.float64)
    accel_bias = np.asarray(accel_bias, dtype=np.float64)
    r_nb = quat_to_rotmat(pose.q)
    a_n = r_nb @ (accel_meas - accel_bias) + wc.gravity
    dt = wc.dt
    p_next = pose.p + dt * pose.v + 0.5 * dt * dt * a_n
    v_next = pose.v + dt * a_n
    return p_next, v_next


def attitude_step(q: Quaternion, gyro_meas, gyro_bias, corr, wc: WorldConstants) -> Quaternion:
    """One interval of the attitude dynamics.

    ``q * exp((dt/2)(gyro - bias)) * exp((dt/2) corr)``, renormalised with
    canonical sign.  ``corr`` is typically the output of
    :func:`accel_mag_correction` (zero disables the correction).
    """
    gyro = np.asarray(gyro_meas, dtype=np.float64) - np.asarray(gyro_bias, dtype=np.float64)
    half_dt = 0.5 * wc.dt
    out = quat_mul(q, quat_exp(half_dt * gyro))
    corr = np.asarray(corr, dtype=np.float64)
    if np.any(corr != 0.0):
        out = quat_mul(out, quat_exp(half_dt * corr))
    return out.normalized().canonical()


def accel_mag_correction(accel_meas, mag_meas, q: Quaternion, wc: WorldConstants, gain=1.0):
    """Complementary-filter angular correction from gravity and magnetic cues.

    Cross products between measured directions and the directions the
    current attitude predicts give a body-frame rotation rate that pulls
    the attitude towards agreement.  Unusable (zero-magnitude) signals
    contribute nothing.
    """
    accel_meas = np.asarray(accel_meas, dtype=np.float64)
    mag_meas = np.asarray(mag_meas, dtype=np.float64)
    an = np.linalg.norm(accel_meas)
    mn = np.linalg.norm(mag_meas)
    if an == 0.0 or mn == 0.0:
        return np.zeros(3)
    r_bn = quat_to_rotmat(q).T
    # a stationary accelerometer reads -gravity rotated into the body frame
    g_dir = wc.gravity / np.linalg.norm(wc.gravity)
    pred_accel = r_bn @ (-g_dir)
    pred_mag = r_bn @ wc.mag_direction
    err = np.cross(accel_meas / an, pred_accel) + np.cross(mag_meas / mn, pred_mag)
    return gain * err


# ----------------------------------------------------------------------
# quaternion loss
# ----------------------------------------------------------------------

def quaternion_loss(q1_batch, q2_batch, eps=1e-7):
    """Mean angle between paired quaternion batches, differentiable.

    ``arccos(clamp(<q1, q2>, -1 + eps, 1 - eps))`` averaged over the
    batch.  Inputs are (N, 4) tensors or arrays; returns a scalar Tensor.
    """
    q1 = q1_batch if isinstance(q1_batch, ad.Tensor) else ad.Tensor(q1_batch)
    q2 = q2_batch if isinstance(q2_batch, ad.Tensor) else ad.Tensor(q2_batch)
    if q1.shape != q2.shape or q1.ndim != 2 or q1.shape[1] != 4:
        raise ValueError(
            f"expected matching (N, 4) batches, got {q1.shape} and {q2.shape}"
        )
    if q1.shape[0] == 0:
        raise DataError("quaternion loss over an empty batch")
    inner = ad.tsum(ad.mul(q1, q2), axis=1)
    angles = ad.arccos(ad.clip(inner, -1.0 + eps, 1.0 - eps))
    return ad.tmean(angles)
