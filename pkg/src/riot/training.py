"""Two-cycle training protocol, losses, epoch engine and checkpointing.

Stage layout follows the staged schedule: for the hierarchical model the
attitude subnet is trained first (quaternion angle loss) and then
frozen; position networks train in two cycles
(:func:`train_cycle1` with ground-truth priors, :func:`train_cycle2`
with the model's own rolled-forward priors).  Estimated priors entering
a window in cycle 2 are constants: gradients never cross window
boundaries.

All stages are deterministic for a fixed ``TrainConfig.seed``; shuffle
and dropout draws come from per-stage generators derived from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .errors import ConfigError, DivergedError
from .geometry import quaternion_loss
from .inference import recursive_infer

STAGE_SALTS = {"attitude": 0, "cycle1": 1, "cycle2": 2}


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    lr: float = 0.001
    dropout: float = 0.2
    batch_size: int = 64
    epochs_attitude: int = 300
    epochs_cycle1: int = 120
    epochs_cycle2: int = 30
    seed: int = 0
    model: str = "riot"
    patience: int | None = None
    grad_clip: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        for name in ("epochs_attitude", "epochs_cycle1", "epochs_cycle2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass
class Checkpoint:
    """Parameter snapshot plus the state needed to resume or audit a run."""

    params: dict
    description: dict
    stage: str = ""
    epoch: int = 0
    train_history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    opt_state: dict | None = None

    def apply_to(self, model):
        live = _model_params(model)
        for name, value in self.params.items():
            live[name].data = value.copy()
        norm = self.description.get("normalization")
        if norm is not None:
            model.set_normalization(np.asarray(norm["mean"]), np.asarray(norm["std"]))

    def save(self, path):
        arrays = {f"param.{k}": v for k, v in self.params.items()}
        if self.opt_state:
            arrays.update({f"opt.{k}": v for k, v in self.opt_state.items()})
        meta = {
            "description": self.description,
            "stage": self.stage,
            "epoch": self.epoch,
            "train_history": self.train_history,
            "val_history": self.val_history,
        }
        ad.save_arrays(path, arrays, meta)

    @staticmethod
    def load(path):
        arrays, meta = ad.load_arrays(path)
        params = {k[6:]: v for k, v in arrays.items() if k.startswith("param.")}
        opt = {k[4:]: v for k, v in arrays.items() if k.startswith("opt.")}
        return Checkpoint(
            params=params,
            description=meta["description"],
            stage=meta["stage"],
            epoch=meta["epoch"],
            train_history=meta["train_history"],
            val_history=meta["val_history"],
            opt_state=opt or None,
        )


def _model_params(model):
    return model.all_params() if hasattr(model, "all_params") else model.params()


def _snapshot(model, stage, epoch, train_hist, val_hist, opt=None):
    desc = model.describe() if hasattr(model, "describe") else {}
    if getattr(model, "imu_mean", None) is not None:
        desc = dict(desc)
        desc["normalization"] = {
            "mean": model.imu_mean.tolist(),
            "std": model.imu_std.tolist(),
        }
    return Checkpoint(
        params={k: p.data.copy() for k, p in _model_params(model).items()},
        description=desc,
        stage=stage,
        epoch=epoch,
        train_history=list(train_hist),
        val_history=list(val_hist),
        opt_state=opt.state_dict() if opt is not None else None,
    )


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------

def mse_loss(pred, truth):
    """Mean over batch and time of squared 3D position error.

    ``sum(||pred - truth||^2) / (N * T)`` for any (..., 3)-shaped pair.
    """
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    truth = truth if isinstance(truth, Tensor) else Tensor(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.shape[-1] != 3:
        raise ValueError(f"expected a trailing axis of 3, got shape {pred.shape}")
    diff = ad.sub(pred, truth)
    count = pred.size // 3
    return ad.mul(ad.tsum(ad.mul(diff, diff)), 1.0 / count)


def _canonical_rows(quats):
    sign = np.where(quats[:, :1] < 0, -1.0, 1.0)
    return quats * sign


# ----------------------------------------------------------------------
# epoch engine
# ----------------------------------------------------------------------

def _stage_rng(cfg, stage):
    return np.random.default_rng(
        np.random.SeedSequence([int(cfg.seed), STAGE_SALTS[stage]])
    )


def _clip_grads(params, max_norm):
    total = np.sqrt(sum(float((p.grad**2).sum())
                        for p in params.values() if p.grad is not None))
    if total > max_norm:
        scale = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale


def _attitude_batch_loss(att, batch, training, rng):
    preds = [att.window_forward(w.imu, training=training, rng=rng) for w in batch]
    stacked = ad.concat(preds, axis=0)
    target = np.concatenate([_canonical_rows(w.target_quat) for w in batch], axis=0)
    return quaternion_loss(stacked, Tensor(target))


def _eval_loss(loss_fn, windows, batch_size):
    if not windows:
        return None
    total, count = 0.0, 0
    for i in range(0, len(windows), batch_size):
        batch = windows[i:i + batch_size]
        total += loss_fn(batch, training=False, rng=None).item() * len(batch)
        count += len(batch)
    return total / count


def _run_stage(model, opt, cfg, stage, epochs, train_windows, val_windows,
               loss_fn, on_epoch_start=None):
    """Generic epoch loop: shuffle, minibatch ADAM, track best-val snapshot."""
    rng = _stage_rng(cfg, stage)
    train_hist, val_hist = [], []
    best = _snapshot(model, stage, 0, train_hist, val_hist, opt)
    best_val = np.inf
    since_best = 0
    for epoch in range(1, epochs + 1):
        if on_epoch_start is not None:
            on_epoch_start(epoch)
        order = rng.permutation(len(train_windows))
        epoch_loss, seen = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_windows[j] for j in order[i:i + cfg.batch_size]]
            loss = loss_fn(batch, training=True, rng=rng)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergedError(
                    f"{stage}: non-finite loss at epoch {epoch}",
                    last_checkpoint=best,
                )
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                _clip_grads(opt.params, cfg.grad_clip)
            opt.step()
            epoch_loss += value * len(batch)
            seen += len(batch)
        train_hist.append(epoch_loss / seen)
        val = _eval_loss(lambda b, training, rng: loss_fn(b, training=training, rng=rng),
                         val_windows, cfg.batch_size)
        val_hist.append(val if val is not None else train_hist[-1])
        if val_hist[-1] < best_val:
            best_val = val_hist[-1]
            best = _snapshot(model, stage, epoch, train_hist, val_hist, opt)
            since_best = 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                break
    best.train_history = list(train_hist)
    best.val_history = list(val_hist)
    return best


# ----------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------

def train_cycle1(model, dataset, cfg: TrainConfig) -> Checkpoint:
    """Teacher-forced position training: windows carry true priors."""
    opt = Adam(model.params(), lr=cfg.lr)
    quat_cache = _attitude_cache(model, dataset)

    def loss_fn(batch, training, rng):
        return _position_batch_loss_cached(model, batch, None, training, rng, quat_cache)

    ckpt = _run_stage(model, opt, cfg, "cycle1", cfg.epochs_cycle1,
                      dataset.train, dataset.val, loss_fn)
    ckpt.apply_to(model)
    return ckpt


def train_cycle2(model, dataset, cfg: TrainConfig, ckpt: Checkpoint) -> Checkpoint:
    """Recursive-prior position training.

    Before each epoch the current model rolls across every training
    sequence exactly as inference does; windows are re-primed with the
    prior buffers captured from that roll (detached constants), while
    loss targets remain ground truth.
    """
    ckpt.apply_to(model)
    opt = Adam(model.params(), lr=cfg.lr)
    quat_cache = _attitude_cache(model, dataset)
    captured = {}

    def refresh_priors(_epoch):
        captured.clear()
        for seq in dataset.sequences:
            result = recursive_infer(
                model, seq, initial_pos=seq.truth_pos[0],
                T=dataset.T, stride=dataset.stride, capture_priors=True,
            )
            for start, prior in result.captured_priors.items():
                captured[(seq.seq_id, start)] = prior

    def loss_fn(batch, training, rng):
        return _position_batch_loss_cached(model, batch, captured, training, rng,
                                           quat_cache)

    out = _run_stage(model, opt, cfg, "cycle2", cfg.epochs_cycle2,
                     dataset.train, dataset.val, loss_fn,
                     on_epoch_start=refresh_priors)
    out.apply_to(model)
    return out


def train_attitude(model, dataset, cfg: TrainConfig) -> Checkpoint:
    """Quaternion-angle training of the attitude subnet (or a bare net)."""
    att = model.attitude if hasattr(model, "attitude") else model
    opt = Adam(att.params(), lr=cfg.lr)

    def loss_fn(batch, training, rng):
        return _attitude_batch_loss(att, batch, training, rng)

    ckpt = _run_stage(att, opt, cfg, "attitude", cfg.epochs_attitude,
                      dataset.train, dataset.val, loss_fn)
    ckpt.apply_to(att)
    return ckpt


def _attitude_cache(model, dataset):
    """Frozen attitude predictions per window for hierarchical training."""
    if not hasattr(model, "attitude"):
        return None
    cache = {}
    for windows in (dataset.train, dataset.val):
        for w in windows:
            key = (w.seq_id, w.start_index)
            if key not in cache:
                cache[key] = model.attitude.predict_window(w.imu)
    return cache


def _position_batch_loss_cached(model, batch, priors, training, rng, quat_cache):
    per_window = []
    for w in batch:
        prior = priors[(w.seq_id, w.start_index)] if priors else w.prior_pos
        if quat_cache is not None:
            pred = model.window_forward(
                w.imu, prior, training=training, rng=rng,
                quats=quat_cache[(w.seq_id, w.start_index)],
            )
        else:
            pred = model.window_forward(w.imu, prior, training=training, rng=rng)
        per_window.append(pred)
    stacked = ad.concat(per_window, axis=0)
    target = np.concatenate([w.target_pos for w in batch], axis=0)
    return mse_loss(stacked, target)


def train_model(model, dataset, cfg: TrainConfig):
    """Run the full staged schedule for the configured model kind.

    Returns ``(final_checkpoint, stage_checkpoints)`` where the dict maps
    stage names to their best checkpoints.
    """
    stages = {}
    if hasattr(model, "attitude"):
        stages["attitude"] = train_attitude(model, dataset, cfg)
    stages["cycle1"] = train_cycle1(model, dataset, cfg)
    stages["cycle2"] = train_cycle2(model, dataset, cfg, stages["cycle1"])
    return stages["cycle2"], stages
