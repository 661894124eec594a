"""Sliding-window recursive inference.

The first window's prior channel is the zero pre-pad with the caller's
initial position in slot 0; every later window is primed with the
positions estimated so far (one-step lag).  Prior rows beyond the last
estimate are the model's business: ``predict_window`` receives the
count of valid leading rows and rolls its own estimates forward for the
rest.  Stitching is last-estimate-wins, so the surviving estimate for
almost every index comes from a window where that index had a fully
primed prior.  Ground truth is never read; the final trajectory is
shifted so its first sample sits exactly on the given initial position.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .metrics import TrajectoryEstimate
from .nets import AttentionRecord
from .sensors import ImuSequence, dead_reckon


@dataclass
class InferenceState:
    """Rolling state of one recursive pass over a sequence."""

    prior: np.ndarray
    cursor: int
    estimates: np.ndarray
    written: np.ndarray

    @staticmethod
    def initial(n, T):
        return InferenceState(
            prior=np.zeros((T, 3)),
            cursor=0,
            estimates=np.zeros((n, 3)),
            written=np.zeros(n, dtype=bool),
        )

    def fill_prior(self, start, initial_pos):
        """Prime the prior buffer for a window at ``start``.

        Returns the number of valid leading rows; the remainder stays at
        the zero pad for the model to roll forward.
        """
        T = len(self.prior)
        self.prior[:] = 0.0
        valid = 0
        for k in range(T):
            j = start + k - 1
            if j < 0:
                self.prior[k] = initial_pos
            elif self.written[j]:
                self.prior[k] = self.estimates[j]
            else:
                break
            valid = k + 1
        return valid

    def commit(self, start, window_estimates):
        self.estimates[start:start + len(window_estimates)] = window_estimates
        self.written[start:start + len(window_estimates)] = True
        self.cursor = start


@dataclass
class InferenceResult:
    trajectory: TrajectoryEstimate
    invocations: int
    attention: AttentionRecord | None = None
    captured_priors: dict = field(default_factory=dict)


def recursive_infer(model, seq: ImuSequence, initial_pos, T, stride,
                    record_attention=False, capture_priors=False,
                    attach_truth=True) -> InferenceResult:
    """Run a trained window model recursively over a whole sequence.

    One model invocation per window.  Window starts advance by
    ``stride``; when the grid does not land on the final sample an extra
    window at ``len(seq) - T`` covers the tail, so every index receives
    exactly one surviving estimate.
    """
    n = len(seq)
    if n < T:
        raise DataError(f"sequence of {n} samples is shorter than the window ({T})")
    initial_pos = np.asarray(initial_pos, dtype=np.float64)
    imu = seq.imu_matrix()
    state = InferenceState.initial(n, T)
    record = AttentionRecord() if record_attention else None
    captured = {}

    starts = list(range(0, n - T + 1, stride))
    if starts[-1] != n - T:
        starts.append(n - T)

    invocations = 0
    for s in starts:
        valid = state.fill_prior(s, initial_pos)
        est, priors_seen = model.predict_window(
            imu[s:s + T], state.prior, valid,
            start=s, record=record if s == starts[0] else None,
        )
        invocations += 1
        state.commit(s, est)
        if capture_priors:
            captured[s] = priors_seen.copy()

    estimates = state.estimates + (initial_pos - state.estimates[0])
    traj = TrajectoryEstimate(
        timestamps=seq.t.copy(),
        est_pos=estimates,
        true_pos=seq.truth_pos.copy() if attach_truth else None,
        seq_id=seq.seq_id,
    )
    return InferenceResult(
        trajectory=traj,
        invocations=invocations,
        attention=record,
        captured_priors=captured,
    )


def classical_baseline(seq: ImuSequence, initial, use_mag_correction=False):
    """Strapdown dead reckoning, for side-by-side comparison rows."""
    return dead_reckon(seq, initial, use_mag_correction=use_mag_correction)


# ----------------------------------------------------------------------
# wiring-check models (no learning; OracleModel reads ground truth)
# ----------------------------------------------------------------------

class OracleModel:
    """Shifts the window's prior anchor by the true displacement.

    A perfect displacement predictor: with exact anchors the recursion
    reproduces ground truth, which makes this a pure check of the
    recursive wiring.  It reads the sequence's truth channel and must
    never be used for real evaluation.
    """

    name = "oracle"

    def __init__(self, seq: ImuSequence):
        self._pos = seq.truth_pos.copy()

    def predict_window(self, imu, prior, prior_valid, start=0, record=None):
        T = len(prior)
        base = self._pos[start - 1] if start > 0 else self._pos[0]
        est = prior[0] + (self._pos[start:start + T] - base)
        return est, np.array(prior)


class IdentityModel:
    """Returns priors unchanged; unknown rows hold the last known value."""

    name = "identity"

    def predict_window(self, imu, prior, prior_valid, start=0, record=None):
        out = np.array(prior, dtype=np.float64, copy=True)
        for k in range(max(int(prior_valid), 1), len(out)):
            out[k] = out[k - 1]
        return out, np.array(prior)


# ----------------------------------------------------------------------
# trajectory files
# ----------------------------------------------------------------------

def write_trajectory_csv(traj: TrajectoryEstimate, path):
    """Emit ``t, px, py, pz`` (+ true positions when present)."""
    has_truth = traj.true_pos is not None
    header = ["t", "px", "py", "pz"]
    if has_truth:
        header += ["true_px", "true_py", "true_pz"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(traj)):
            row = [traj.timestamps[i], *traj.est_pos[i]]
            if has_truth:
                row += list(traj.true_pos[i])
            writer.writerow([repr(float(v)) for v in row])


def read_trajectory_csv(path) -> TrajectoryEstimate:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    if rows.size == 0:
        raise DataError(f"{path}: empty trajectory file")
    has_truth = "true_px" in header
    return TrajectoryEstimate(
        timestamps=rows[:, 0],
        est_pos=rows[:, 1:4],
        true_pos=rows[:, 4:7] if has_truth else None,
    )
