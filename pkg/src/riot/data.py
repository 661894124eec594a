"""Sequence file ingestion, sliding windows, priors and dataset splits.

CSV layout: one file per sequence with a header row; the column names
are configurable through :class:`ColumnMap` so recordings from
different capture pipelines can be ingested without rewriting files.
Ground truth may live in the same file or in a second, time-aligned one.

Windows carry the measurement slice byte-for-byte; input normalisation
is applied inside the models (from training-split statistics) so the
window itself stays an exact view of the source sequence.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, SchemaError
from .sensors import ImuSequence

log = logging.getLogger(__name__)

_AXES = ("x", "y", "z")
_QUAT_AXES = ("w", "x", "y", "z")


@dataclass
class ColumnMap:
    """Names of the CSV columns holding each signal."""

    time: str = "t"
    gyro: tuple = ("gyro_x", "gyro_y", "gyro_z")
    accel: tuple = ("accel_x", "accel_y", "accel_z")
    mag: tuple = ("mag_x", "mag_y", "mag_z")
    position: tuple = ("pos_x", "pos_y", "pos_z")
    quaternion: tuple = ("quat_w", "quat_x", "quat_y", "quat_z")

    def imu_columns(self):
        return list(self.gyro) + list(self.accel) + list(self.mag)

    def truth_columns(self):
        return list(self.position) + list(self.quaternion)


@dataclass
class Window:
    """One fixed-length training/evaluation slice of a sequence.

    ``prior_pos[k]`` is the position at time index ``start_index + k - 1``
    (one-step lag); row 0 of a sequence's first window holds the pad
    value, which mirrors the initial position handed over at inference.
    """

    imu: np.ndarray
    prior_pos: np.ndarray
    target_pos: np.ndarray
    target_quat: np.ndarray
    seq_id: str
    start_index: int

    def __len__(self):
        return len(self.imu)


@dataclass
class SplitSpec:
    """Fractional window-level split plus whole-sequence holdouts."""

    train: float = 0.7
    val: float = 0.2
    test: float = 0.1
    holdout_ids: tuple = ()

    def __post_init__(self):
        total = self.train + self.val + self.test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total}")
        if min(self.train, self.val, self.test) < 0:
            raise ValueError("split fractions must be non-negative")
        self.holdout_ids = tuple(str(h) for h in self.holdout_ids)


# ----------------------------------------------------------------------
# CSV round trip
# ----------------------------------------------------------------------

def write_sequence_csv(seq: ImuSequence, path, mapping: ColumnMap | None = None):
    """Write a sequence in the layout :func:`load_sequence` ingests."""
    mapping = mapping or ColumnMap()
    header = ([mapping.time] + mapping.imu_columns() + mapping.truth_columns())
    rows = np.hstack([
        seq.t[:, None], seq.gyro, seq.accel, seq.mag,
        seq.truth_pos, seq.truth_quat,
    ])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def _read_columns(path, wanted):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        idx = [header.index(c) for c in wanted]
        out = []
        for row in reader:
            out.append([float(row[i]) for i in idx])
    if not out:
        raise DataError(f"{path}: no data rows")
    return np.array(out, dtype=np.float64)


def load_sequence(imu_path, truth_path=None, mapping: ColumnMap | None = None,
                  rate_hz=None, seq_id=None, meta=None) -> ImuSequence:
    """Load one recorded sequence (IMU + ground truth) into an ImuSequence.

    Rows containing any non-finite value are dropped (count reported via
    logging and ``meta['dropped_rows']``).  Non-monotonic time or a
    sample-interval spread above 1% of the declared rate is rejected.
    """
    mapping = mapping or ColumnMap()
    if truth_path is None:
        cols = ([mapping.time] + mapping.imu_columns() + mapping.truth_columns())
        table = _read_columns(imu_path, cols)
    else:
        imu_table = _read_columns(imu_path, [mapping.time] + mapping.imu_columns())
        truth_table = _read_columns(truth_path, [mapping.time] + mapping.truth_columns())
        if len(imu_table) != len(truth_table):
            raise DataError(
                f"{imu_path} and {truth_path} have different lengths "
                f"({len(imu_table)} vs {len(truth_table)})"
            )
        if np.max(np.abs(imu_table[:, 0] - truth_table[:, 0])) > 1e-6:
            raise DataError(f"{imu_path} and {truth_path} timestamps disagree")
        table = np.hstack([imu_table, truth_table[:, 1:]])

    finite = np.isfinite(table).all(axis=1)
    dropped = int((~finite).sum())
    if dropped:
        log.warning("%s: dropped %d non-finite rows", imu_path, dropped)
        table = table[finite]
    if len(table) == 0:
        raise DataError(f"{imu_path}: no finite rows")

    t = table[:, 0]
    dts = np.diff(t)
    if len(dts) and dts.min() <= 0:
        raise DataError(f"{imu_path}: timestamps are not strictly increasing")
    declared = rate_hz or (1.0 / float(np.median(dts)) if len(dts) else 0.0)
    if len(dts) and declared > 0:
        # median interval tolerates isolated gaps from dropped rows but
        # still rejects files recorded at the wrong rate
        dev = abs(float(np.median(dts)) - 1.0 / declared) * declared
        if dev > 0.01:
            raise DataError(
                f"{imu_path}: sample interval deviates {dev * 100:.1f}% "
                f"from the declared {declared} Hz"
            )

    meta = dict(meta or {})
    meta.setdefault("seq_id", seq_id or str(imu_path))
    meta["dropped_rows"] = dropped
    quat = table[:, 13:17].copy()
    norms = np.linalg.norm(quat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DataError(f"{imu_path}: zero-norm ground-truth quaternion")
    # normalise only meaningfully off-unit rows so clean files round-trip
    # bit-exactly
    off = np.abs(norms[:, 0] - 1.0) > 1e-9
    quat[off] /= norms[off]
    return ImuSequence(
        t=t,
        gyro=table[:, 1:4],
        accel=table[:, 4:7],
        mag=table[:, 7:10],
        truth_pos=table[:, 10:13],
        truth_vel=np.gradient(table[:, 10:13], t, axis=0),
        truth_quat=quat,
        rate_hz=declared,
        meta=meta,
    )


# ----------------------------------------------------------------------
# windowing
# ----------------------------------------------------------------------

def window_count(n, T, stride):
    """Number of sliding windows: floor((n - T) / stride) + 1, or 0 if n < T."""
    if n < T:
        return 0
    return (n - T) // stride + 1


def make_windows(seq: ImuSequence, T, stride):
    """Cut a sequence into overlapping windows with lagged position priors.

    Priors are the true positions shifted one step back; the very first
    prior row of a sequence (index -1) takes the sequence's initial
    position, matching the anchor injected at inference time.
    """
    if T < 2:
        raise ValueError(f"window length must be at least 2, got {T}")
    if not 1 <= stride <= T:
        raise ValueError(f"stride must be in [1, {T}], got {stride}")
    n = len(seq)
    imu = seq.imu_matrix()
    windows = []
    for w in range(window_count(n, T, stride)):
        s = w * stride
        prior = np.empty((T, 3))
        if s == 0:
            prior[0] = seq.truth_pos[0]
            prior[1:] = seq.truth_pos[0:T - 1]
        else:
            prior[:] = seq.truth_pos[s - 1:s + T - 1]
        windows.append(
            Window(
                imu=imu[s:s + T],
                prior_pos=prior,
                target_pos=seq.truth_pos[s:s + T].copy(),
                target_quat=seq.truth_quat[s:s + T].copy(),
                seq_id=seq.seq_id,
                start_index=s,
            )
        )
    return windows


def split(sequences, spec: SplitSpec, rng, T, stride):
    """Window-level random split; holdout sequences are kept whole.

    Returns a dict with ``train``/``val``/``test`` window lists, the
    ``holdout`` sequences, and the non-holdout ``sequences`` (needed for
    whole-sequence recursive passes during training).
    """
    if not sequences:
        raise DataError("no sequences to split")
    holdout = [s for s in sequences if s.seq_id in spec.holdout_ids]
    usable = [s for s in sequences if s.seq_id not in spec.holdout_ids]
    windows = []
    for s in usable:
        windows.extend(make_windows(s, T, stride))
    if not windows:
        raise DataError("no windows produced; sequences shorter than the window?")

    order = rng.permutation(len(windows))
    n = len(windows)
    # largest-remainder allocation so exact fractions yield exact sizes
    raw = np.array([spec.train * n, spec.val * n, spec.test * n])
    counts = np.floor(raw).astype(int)
    for _ in range(n - counts.sum()):
        counts[np.argmax(raw - counts)] += 1
    n_train, n_val, _ = counts
    parts = {
        "train": [windows[i] for i in order[:n_train]],
        "val": [windows[i] for i in order[n_train:n_train + n_val]],
        "test": [windows[i] for i in order[n_train + n_val:]],
    }
    parts["holdout"] = holdout
    parts["sequences"] = usable
    return parts


def imu_channel_stats(windows):
    """Per-channel mean/std of the 9 IMU channels over a window list.

    Compute these from the training split only; anything else leaks
    evaluation data into the scaling.
    """
    if not windows:
        raise DataError("cannot compute statistics over zero windows")
    stacked = np.concatenate([w.imu for w in windows], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


@dataclass
class Dataset:
    """Split windows plus everything needed for recursive training passes."""

    train: list
    val: list
    test: list
    holdout: list
    sequences: list
    T: int
    stride: int
    imu_mean: np.ndarray | None = None
    imu_std: np.ndarray | None = None


def build_dataset(sequences, spec: SplitSpec, rng, T, stride, normalize=True) -> Dataset:
    parts = split(sequences, spec, rng, T, stride)
    mean, std = (None, None)
    if normalize and parts["train"]:
        mean, std = imu_channel_stats(parts["train"])
    return Dataset(
        train=parts["train"],
        val=parts["val"],
        test=parts["test"],
        holdout=parts["holdout"],
        sequences=parts["sequences"],
        T=T,
        stride=stride,
        imu_mean=mean,
        imu_std=std,
    )
