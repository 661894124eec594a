"""Trajectory accuracy metrics: ATE, RTE and the localisation-error CDF.

Default evaluation is on the horizontal (x-y) plane; most recorded
motion is level, so including z mostly measures vertical noise rather
than odometry quality.  Pass ``dims="3d"`` to override.

No alignment (Umeyama or otherwise) is performed before scoring;
estimates are compared against truth exactly as produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class TrajectoryEstimate:
    """Estimated positions aligned index-for-index with ground truth."""

    timestamps: np.ndarray
    est_pos: np.ndarray
    true_pos: np.ndarray | None = None
    dims_evaluated: str = "2d"
    seq_id: str = ""

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.est_pos = np.asarray(self.est_pos, dtype=np.float64)
        if self.true_pos is not None:
            self.true_pos = np.asarray(self.true_pos, dtype=np.float64)

    def __len__(self):
        return len(self.timestamps)

    def rate_hz(self):
        if len(self.timestamps) < 2:
            raise DataError("cannot infer a sample rate from fewer than 2 samples")
        return 1.0 / float(np.median(np.diff(self.timestamps)))


@dataclass
class CdfCurve:
    """Empirical CDF of pooled per-sample localisation errors."""

    thresholds: np.ndarray = field(default_factory=lambda: np.array([]))
    fractions: np.ndarray = field(default_factory=lambda: np.array([]))

    def fraction_below(self, threshold):
        """Fraction of errors <= threshold."""
        idx = np.searchsorted(self.thresholds, threshold, side="right")
        return 0.0 if idx == 0 else float(self.fractions[idx - 1])


def _select_dims(traj: TrajectoryEstimate, dims):
    dims = (dims or traj.dims_evaluated).lower()
    if dims not in ("2d", "3d"):
        raise ValueError(f"dims must be '2d' or '3d', got {dims!r}")
    if traj.true_pos is None:
        raise DataError("trajectory carries no ground truth to score against")
    if len(traj.est_pos) == 0:
        raise DataError("empty trajectory")
    if len(traj.est_pos) != len(traj.true_pos):
        raise DataError("estimate/truth length mismatch")
    n = 2 if dims == "2d" else 3
    return traj.est_pos[:, :n], traj.true_pos[:, :n]


def pointwise_errors(traj: TrajectoryEstimate, dims=None):
    """Per-sample Euclidean position errors over the selected dims."""
    est, true = _select_dims(traj, dims)
    return np.linalg.norm(est - true, axis=1)


def ate(traj: TrajectoryEstimate, dims=None):
    """Absolute trajectory error: RMS of pointwise position errors (m)."""
    err = pointwise_errors(traj, dims)
    return float(np.sqrt(np.mean(err**2)))


def rte(traj: TrajectoryEstimate, delta_t=1.0, dims=None):
    """Relative trajectory error over a horizon of ``delta_t`` seconds (m).

    RMS of the difference between estimated and true displacement over
    the horizon; invariant to any constant offset of the estimate.
    """
    est, true = _select_dims(traj, dims)
    delta = int(round(delta_t * traj.rate_hz()))
    if delta < 1 or len(est) <= delta:
        raise DataError(
            f"trajectory of {len(est)} samples is too short for a "
            f"{delta_t} s relative horizon"
        )
    d_est = est[delta:] - est[:-delta]
    d_true = true[delta:] - true[:-delta]
    err = np.linalg.norm(d_est - d_true, axis=1)
    return float(np.sqrt(np.mean(err**2)))


def cdf(trajs, dims=None) -> CdfCurve:
    """Empirical CDF of localisation errors pooled over trajectories."""
    if not trajs:
        raise DataError("cdf of an empty trajectory list")
    pooled = np.concatenate([pointwise_errors(t, dims) for t in trajs])
    if pooled.size == 0:
        raise DataError("cdf over an empty error pool")
    order = np.sort(pooled)
    fractions = np.arange(1, order.size + 1, dtype=np.float64) / order.size
    return CdfCurve(thresholds=order, fractions=fractions)


def weighted_mean_metrics(trajs, delta_t=1.0, dims=None):
    """Per-sequence ATE/RTE plus sequence-length weighted means.

    Returns ``(rows, summary)`` where rows hold one dict per trajectory
    and summary the weighted aggregate, weights proportional to sequence
    length.
    """
    if not trajs:
        raise DataError("no trajectories to aggregate")
    rows = []
    for t in trajs:
        rows.append(
            {
                "seq_id": t.seq_id,
                "length": len(t),
                "ate": ate(t, dims),
                "rte": rte(t, delta_t, dims),
            }
        )
    weights = np.array([r["length"] for r in rows], dtype=np.float64)
    weights /= weights.sum()
    summary = {
        "weighted_mean_ate": float(sum(w * r["ate"] for w, r in zip(weights, rows))),
        "weighted_mean_rte": float(sum(w * r["rte"] for w, r in zip(weights, rows))),
        "total_length": int(sum(r["length"] for r in rows)),
    }
    return rows, summary
