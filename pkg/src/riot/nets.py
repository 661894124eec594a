"""Learned architectures: positional encoding, multi-head attention,
encoder/decoder stacks, the RIOT and ARIOT position estimators and the
2-layer GRU baseline.

All models operate window-at-a-time on (T, features) matrices and share
the same outward contract:

* ``window_forward(imu, prior, ...)`` builds the differentiable graph
  used in training (teacher-forced or captured priors);
* ``predict_window(imu, prior, prior_valid, ...)`` is the inference
  entry: prior rows at index >= ``prior_valid`` are unknown and get
  filled from the model's own rolling estimates (never ground truth).

IMU channels are standardised inside the models with statistics taken
from the training split; priors and outputs stay in metres so the
recursion is metric.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


@dataclass
class ModelConfig:
    """Geometry of one encoder-decoder network."""

    input_features: int
    d_model: int = 224
    heads: int = 2
    encoder_layers: int = 2
    decoder_layers: int = 2
    d_ff: int | None = None
    dropout: float = 0.2
    window: int = 100
    tgt_features: int = 3
    out_features: int = 3

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        for name in ("input_features", "d_model", "heads", "encoder_layers",
                     "decoder_layers", "d_ff", "window", "tgt_features",
                     "out_features"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by heads ({self.heads})"
            )
        if self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class GruConfig:
    """Geometry of the recurrent baseline."""

    input_features: int = 12
    hidden: int = 200
    layers: int = 2
    dropout: float = 0.2
    window: int = 100
    out_features: int = 3

    def __post_init__(self):
        for name in ("input_features", "hidden", "layers", "window", "out_features"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


def positional_encoding(length, d_model):
    """Sinusoidal position code: sin on even dims, cos on odd dims."""
    if d_model % 2 != 0:
        raise ConfigError(f"positional encoding needs an even width, got {d_model}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def causal_mask(length):
    """Additive attention mask: 0 at or below the diagonal, -inf above."""
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = -np.inf
    return mask


class AttentionRecord:
    """Per-(stage, layer, head) attention matrices captured in one pass."""

    def __init__(self):
        self.entries = []

    def add(self, stage, layer, head, matrix):
        self.entries.append(
            {"stage": stage, "layer": layer, "head": head, "matrix": matrix.copy()}
        )

    def matrices(self, stage=None):
        return [e for e in self.entries if stage is None or e["stage"] == stage]


# ----------------------------------------------------------------------
# building blocks
# ----------------------------------------------------------------------

def _uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class Linear:
    def __init__(self, rng, d_in, d_out, bias=True):
        self.w = Tensor(_uniform_init(rng, d_in, (d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x):
        out = ad.matmul(x, self.w)
        return ad.add(out, self.b) if self.b is not None else out

    def params(self, prefix):
        yield f"{prefix}.w", self.w
        if self.b is not None:
            yield f"{prefix}.b", self.b


class LayerNorm:
    def __init__(self, d):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias)

    def params(self, prefix):
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias


class MultiHeadAttention:
    """Scaled dot-product attention with per-head projections.

    Projections carry no biases; the per-head key/value width is
    d_model / heads and the concatenated heads are recombined by an
    output projection.
    """

    def __init__(self, rng, d_model, heads):
        self.heads = heads
        self.d_k = d_model // heads
        self.wq = [Tensor(_uniform_init(rng, d_model, (d_model, self.d_k)),
                          requires_grad=True) for _ in range(heads)]
        self.wk = [Tensor(_uniform_init(rng, d_model, (d_model, self.d_k)),
                          requires_grad=True) for _ in range(heads)]
        self.wv = [Tensor(_uniform_init(rng, d_model, (d_model, self.d_k)),
                          requires_grad=True) for _ in range(heads)]
        self.wo = Tensor(_uniform_init(rng, d_model, (d_model, d_model)),
                         requires_grad=True)
        self._scale = 1.0 / np.sqrt(self.d_k)

    def __call__(self, q_in, k_in, v_in, mask=None, record=None, tag="", layer=0):
        head_outs = []
        for h in range(self.heads):
            q = ad.matmul(q_in, self.wq[h])
            k = ad.matmul(k_in, self.wk[h])
            v = ad.matmul(v_in, self.wv[h])
            logits = ad.mul(ad.matmul(q, ad.transpose(k)), self._scale)
            if mask is not None:
                logits = ad.add(logits, mask)
            alpha = ad.softmax(logits, axis=-1)
            if record is not None:
                record.add(tag, layer, h, alpha.data)
            head_outs.append(ad.matmul(alpha, v))
        merged = head_outs[0] if self.heads == 1 else ad.concat(head_outs, axis=1)
        return ad.matmul(merged, self.wo)

    def params(self, prefix):
        for h in range(self.heads):
            yield f"{prefix}.wq{h}", self.wq[h]
            yield f"{prefix}.wk{h}", self.wk[h]
            yield f"{prefix}.wv{h}", self.wv[h]
        yield f"{prefix}.wo", self.wo


class FeedForward:
    """Position-wise two-layer network with LeakyReLU inner activation."""

    def __init__(self, rng, d_model, d_ff):
        self.lin1 = Linear(rng, d_model, d_ff)
        self.lin2 = Linear(rng, d_ff, d_model)

    def __call__(self, x):
        return self.lin2(ad.leaky_relu(self.lin1(x)))

    def params(self, prefix):
        yield from self.lin1.params(f"{prefix}.lin1")
        yield from self.lin2.params(f"{prefix}.lin2")


def _residual(x, sublayer_out, norm, p, training, rng):
    # dropout on the sub-layer output, before the residual add
    return norm(ad.add(x, ad.dropout(sublayer_out, p, training, rng)))


class EncoderLayer:
    def __init__(self, rng, cfg: ModelConfig):
        self.mha = MultiHeadAttention(rng, cfg.d_model, cfg.heads)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(rng, cfg.d_model, cfg.d_ff)
        self.norm2 = LayerNorm(cfg.d_model)

    def __call__(self, x, p, training, rng, record=None, layer=0):
        attn = self.mha(x, x, x, record=record, tag="encoder", layer=layer)
        x = _residual(x, attn, self.norm1, p, training, rng)
        return _residual(x, self.ffn(x), self.norm2, p, training, rng)

    def params(self, prefix):
        yield from self.mha.params(f"{prefix}.mha")
        yield from self.norm1.params(f"{prefix}.norm1")
        yield from self.ffn.params(f"{prefix}.ffn")
        yield from self.norm2.params(f"{prefix}.norm2")


class DecoderLayer:
    def __init__(self, rng, cfg: ModelConfig):
        self.self_mha = MultiHeadAttention(rng, cfg.d_model, cfg.heads)
        self.norm1 = LayerNorm(cfg.d_model)
        self.cross_mha = MultiHeadAttention(rng, cfg.d_model, cfg.heads)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(rng, cfg.d_model, cfg.d_ff)
        self.norm3 = LayerNorm(cfg.d_model)

    def __call__(self, x, memory, mask, p, training, rng, record=None, layer=0):
        attn = self.self_mha(x, x, x, mask=mask, record=record,
                             tag="decoder-self", layer=layer)
        x = _residual(x, attn, self.norm1, p, training, rng)
        cross = self.cross_mha(x, memory, memory, record=record,
                               tag="decoder-cross", layer=layer)
        x = _residual(x, cross, self.norm2, p, training, rng)
        return _residual(x, self.ffn(x), self.norm3, p, training, rng)

    def params(self, prefix):
        yield from self.self_mha.params(f"{prefix}.self_mha")
        yield from self.norm1.params(f"{prefix}.norm1")
        yield from self.cross_mha.params(f"{prefix}.cross_mha")
        yield from self.norm2.params(f"{prefix}.norm2")
        yield from self.ffn.params(f"{prefix}.ffn")
        yield from self.norm3.params(f"{prefix}.norm3")


class Encoder:
    """Linear embedding + positional code + a stack of encoder layers."""

    def __init__(self, rng, cfg: ModelConfig):
        self.cfg = cfg
        self.embed = Linear(rng, cfg.input_features, cfg.d_model)
        self.layers = [EncoderLayer(rng, cfg) for _ in range(cfg.encoder_layers)]
        self._pe = {}

    def _pe_tensor(self, length):
        if length not in self._pe:
            self._pe[length] = Tensor(positional_encoding(length, self.cfg.d_model))
        return self._pe[length]

    def __call__(self, x, training=False, rng=None, record=None, positional=True):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[1] != self.cfg.input_features:
            raise ValueError(
                f"encoder expects {self.cfg.input_features} features, got {x.shape[1]}"
            )
        h = self.embed(x)
        if positional:
            h = ad.add(h, self._pe_tensor(x.shape[0]))
        for i, layer in enumerate(self.layers):
            h = layer(h, self.cfg.dropout, training, rng, record=record, layer=i)
        return h

    def params(self, prefix):
        yield from self.embed.params(f"{prefix}.embed")
        for i, layer in enumerate(self.layers):
            yield from layer.params(f"{prefix}.layer{i}")


class Decoder:
    """Causally masked decoder stack cross-attending an encoder memory."""

    def __init__(self, rng, cfg: ModelConfig):
        self.cfg = cfg
        self.embed = Linear(rng, cfg.tgt_features, cfg.d_model)
        self.layers = [DecoderLayer(rng, cfg) for _ in range(cfg.decoder_layers)]
        self._pe = {}
        self._mask = {}

    def _const(self, cache, length, builder):
        if length not in cache:
            cache[length] = Tensor(builder(length))
        return cache[length]

    def __call__(self, tgt, memory, training=False, rng=None, record=None):
        tgt = tgt if isinstance(tgt, Tensor) else Tensor(tgt)
        if tgt.shape[1] != self.cfg.tgt_features:
            raise ValueError(
                f"decoder expects {self.cfg.tgt_features} target features, "
                f"got {tgt.shape[1]}"
            )
        length = tgt.shape[0]
        h = ad.add(self.embed(tgt),
                   self._const(self._pe, length,
                               lambda n: positional_encoding(n, self.cfg.d_model)))
        mask = self._const(self._mask, length, causal_mask)
        for i, layer in enumerate(self.layers):
            h = layer(h, memory, mask, self.cfg.dropout, training, rng,
                      record=record, layer=i)
        return h

    def params(self, prefix):
        yield from self.embed.params(f"{prefix}.embed")
        for i, layer in enumerate(self.layers):
            yield from layer.params(f"{prefix}.layer{i}")


def quaternion_head(linear: Linear, h):
    """Map decoder features to unit quaternions with non-negative scalar part.

    tanh bounds the raw output, row normalisation makes it a unit
    quaternion, and the sign flip (a piecewise-constant factor) picks the
    canonical double-cover representative.
    """
    raw = ad.tanh(linear(h))
    norm = ad.sqrt(ad.add(ad.tsum(ad.mul(raw, raw), axis=1, keepdims=True), 1e-12))
    unit = ad.div(raw, norm)
    sign = np.where(unit.data[:, :1] < 0, -1.0, 1.0)
    return ad.mul(unit, Tensor(sign))


# ----------------------------------------------------------------------
# models
# ----------------------------------------------------------------------

class _NormalizerMixin:
    """Shared IMU standardisation from training-split statistics."""

    def set_normalization(self, mean, std):
        self.imu_mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.imu_std = None if std is None else np.asarray(std, dtype=np.float64)

    def _normalize_imu(self, imu):
        if self.imu_mean is None:
            return np.asarray(imu, dtype=np.float64)
        return (imu - self.imu_mean) / self.imu_std


class RiotModel(_NormalizerMixin):
    """Recursive inertial odometry transformer.

    The encoder ingests the 12-feature concatenation [gyro | accel | mag
    | position prior]; the decoder runs causally masked self-attention
    over the embedded prior stream, cross-attends the encoder memory and
    linearly maps to 3D positions.
    """

    name = "riot"

    def __init__(self, cfg: ModelConfig, rng):
        if cfg.input_features != 12:
            raise ConfigError("riot expects 12 input features (9 IMU + 3 prior)")
        self.cfg = cfg
        self.encoder = Encoder(rng, cfg)
        self.decoder = Decoder(rng, cfg)
        self.head = Linear(rng, cfg.d_model, cfg.out_features)
        self.set_normalization(None, None)

    def window_forward(self, imu, prior, training=False, rng=None, record=None):
        x = np.hstack([self._normalize_imu(imu), prior])
        memory = self.encoder(x, training=training, rng=rng, record=record)
        h = self.decoder(prior, memory, training=training, rng=rng, record=record)
        return self.head(h)

    def predict_window(self, imu, prior, prior_valid, start=0, record=None):
        """Estimate T positions; unknown prior rows are rolled forward.

        Rows at index >= ``prior_valid`` start as the zero pad and are
        replaced one at a time by the model's own lagged estimates, each
        refresh re-running the forward pass so the encoder context stays
        consistent with what it will see in the final pass.
        Returns ``(estimates, priors_as_decoded)``.
        """
        pr = np.array(prior, dtype=np.float64, copy=True)
        T = len(pr)
        for r in range(max(int(prior_valid), 1), T):
            out = self.window_forward(imu, pr).data
            pr[r] = out[r - 1]
        out = self.window_forward(imu, pr, record=record)
        return out.data.copy(), pr

    def params(self):
        out = {}
        out.update(self.encoder.params("encoder"))
        out.update(self.decoder.params("decoder"))
        out.update(self.head.params("head"))
        return out

    def count_params(self):
        return sum(p.data.size for p in self.params().values())

    def describe(self):
        return {"model": self.name, "config": asdict(self.cfg)}


class AttitudeNet(_NormalizerMixin):
    """Encoder-decoder regressing unit attitude quaternions from 9D IMU."""

    name = "attitude"

    def __init__(self, cfg: ModelConfig, rng):
        if cfg.input_features != 9 or cfg.tgt_features != 9 or cfg.out_features != 4:
            raise ConfigError("attitude net expects 9 -> 9 -> 4 feature widths")
        self.cfg = cfg
        self.encoder = Encoder(rng, cfg)
        # the decoder stream re-embeds the measurement sequence itself:
        # attitude has no output-aligned causal signal analogous to the
        # position prior, and this keeps inference single-pass
        self.decoder = Decoder(rng, cfg)
        self.head = Linear(rng, cfg.d_model, 4)
        self.set_normalization(None, None)

    def window_forward(self, imu, training=False, rng=None, record=None):
        x = self._normalize_imu(imu)
        memory = self.encoder(x, training=training, rng=rng, record=record)
        h = self.decoder(x, memory, training=training, rng=rng, record=record)
        return quaternion_head(self.head, h)

    def predict_window(self, imu, record=None):
        return self.window_forward(imu, record=record).data.copy()

    def params(self):
        out = {}
        out.update(self.encoder.params("encoder"))
        out.update(self.decoder.params("decoder"))
        out.update(self.head.params("head"))
        return out

    def count_params(self):
        return sum(p.data.size for p in self.params().values())


class AriotModel(_NormalizerMixin):
    """Hierarchical estimator: attitude subnet feeding a position subnet.

    The position subnet consumes [accel | estimated quaternion | prior]
    (10 features); ``use_full_imu`` widens that to the full 16-feature
    variant for experiments.
    """

    name = "ariot"

    def __init__(self, att_cfg: ModelConfig, pos_cfg: ModelConfig, rng,
                 use_full_imu=False):
        expected = 16 if use_full_imu else 10
        if pos_cfg.input_features != expected:
            raise ConfigError(
                f"ariot position net expects {expected} input features, "
                f"got {pos_cfg.input_features}"
            )
        self.use_full_imu = use_full_imu
        self.attitude = AttitudeNet(att_cfg, rng)
        self.pos_cfg = pos_cfg
        self.encoder = Encoder(rng, pos_cfg)
        self.decoder = Decoder(rng, pos_cfg)
        self.head = Linear(rng, pos_cfg.d_model, pos_cfg.out_features)
        self.set_normalization(None, None)

    def set_normalization(self, mean, std):
        super().set_normalization(mean, std)
        self.attitude.set_normalization(mean, std)

    def _position_input(self, imu, quats, prior):
        imu_n = self._normalize_imu(imu)
        base = imu_n if self.use_full_imu else imu_n[:, 3:6]
        return np.hstack([base, quats, prior])

    def window_forward(self, imu, prior, training=False, rng=None, record=None,
                       quats=None):
        """Differentiable position estimate.

        ``quats`` overrides the attitude subnet's prediction; passing the
        ground-truth quaternions is the oracle mode used to isolate the
        position stage during training.
        """
        if quats is None:
            quats = self.attitude.predict_window(imu)  # frozen, no gradient
        x = self._position_input(imu, quats, prior)
        memory = self.encoder(x, training=training, rng=rng, record=record)
        h = self.decoder(prior, memory, training=training, rng=rng, record=record)
        return self.head(h)

    def forward_both(self, imu, prior, record=None):
        """(T, 4) attitude and (T, 3) position estimates for one window."""
        quats = self.attitude.predict_window(imu, record=record)
        pos = self.window_forward(imu, prior, record=record, quats=quats)
        return quats, pos.data.copy()

    def predict_window(self, imu, prior, prior_valid, start=0, record=None):
        quats = self.attitude.predict_window(imu)
        pr = np.array(prior, dtype=np.float64, copy=True)
        T = len(pr)
        for r in range(max(int(prior_valid), 1), T):
            out = self.window_forward(imu, pr, quats=quats).data
            pr[r] = out[r - 1]
        out = self.window_forward(imu, pr, record=record, quats=quats)
        return out.data.copy(), pr

    def params(self):
        """Position-stage parameters (the attitude net trains separately)."""
        out = {}
        out.update(self.encoder.params("encoder"))
        out.update(self.decoder.params("decoder"))
        out.update(self.head.params("head"))
        return out

    def all_params(self):
        out = {f"attitude.{k}": v for k, v in self.attitude.params().items()}
        out.update(self.params())
        return out

    def count_params(self):
        return sum(p.data.size for p in self.all_params().values())

    def describe(self):
        return {
            "model": self.name,
            "config": asdict(self.pos_cfg),
            "attitude_config": asdict(self.attitude.cfg),
            "use_full_imu": self.use_full_imu,
        }


class GruLayer:
    """One gated recurrent cell bank operating on (1, width) rows.

    The candidate activation is LeakyReLU, not tanh, matching the update
    equations this implementation follows.
    """

    def __init__(self, rng, d_in, hidden):
        self.hidden = hidden

        def lin_pair(fan_in, shape):
            return Tensor(_uniform_init(rng, fan_in, shape), requires_grad=True)

        self.w_ir = lin_pair(d_in, (d_in, hidden))
        self.w_iz = lin_pair(d_in, (d_in, hidden))
        self.w_ix = lin_pair(d_in, (d_in, hidden))
        self.w_hr = lin_pair(hidden, (hidden, hidden))
        self.w_hz = lin_pair(hidden, (hidden, hidden))
        self.w_hx = lin_pair(hidden, (hidden, hidden))
        self.b_ir = Tensor(np.zeros(hidden), requires_grad=True)
        self.b_iz = Tensor(np.zeros(hidden), requires_grad=True)
        self.b_ix = Tensor(np.zeros(hidden), requires_grad=True)
        self.b_hr = Tensor(np.zeros(hidden), requires_grad=True)
        self.b_hz = Tensor(np.zeros(hidden), requires_grad=True)
        self.b_hx = Tensor(np.zeros(hidden), requires_grad=True)

    def step(self, x, h):
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.w_ir), self.b_ir),
                              ad.add(ad.matmul(h, self.w_hr), self.b_hr)))
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.w_iz), self.b_iz),
                              ad.add(ad.matmul(h, self.w_hz), self.b_hz)))
        cand = ad.leaky_relu(
            ad.add(ad.add(ad.matmul(x, self.w_ix), self.b_ix),
                   ad.mul(r, ad.add(ad.matmul(h, self.w_hx), self.b_hx)))
        )
        one_minus_z = ad.sub(1.0, z)
        return ad.add(ad.mul(one_minus_z, h), ad.mul(z, cand))

    def params(self, prefix):
        for name in ("w_ir", "w_iz", "w_ix", "w_hr", "w_hz", "w_hx",
                     "b_ir", "b_iz", "b_ix", "b_hr", "b_hz", "b_hx"):
            yield f"{prefix}.{name}", getattr(self, name)


class GruModel(_NormalizerMixin):
    """Stacked GRU baseline wired identically to the transformer models."""

    name = "gru"

    def __init__(self, cfg: GruConfig, rng):
        if cfg.input_features != 12:
            raise ConfigError("gru expects 12 input features (9 IMU + 3 prior)")
        self.cfg = cfg
        self.layers = []
        d_in = cfg.input_features
        for _ in range(cfg.layers):
            self.layers.append(GruLayer(rng, d_in, cfg.hidden))
            d_in = cfg.hidden
        self.head = Linear(rng, cfg.hidden, cfg.out_features)
        self.set_normalization(None, None)

    def _step_states(self):
        return [Tensor(np.zeros((1, layer.hidden))) for layer in self.layers]

    def window_forward(self, imu, prior, training=False, rng=None, record=None):
        rows = np.hstack([self._normalize_imu(imu), prior])
        states = self._step_states()
        outs = []
        for k in range(len(rows)):
            x = Tensor(rows[k:k + 1])
            for li, layer in enumerate(self.layers):
                states[li] = layer.step(x, states[li])
                x = states[li]
                if training and li < len(self.layers) - 1:
                    x = ad.dropout(x, self.cfg.dropout, training, rng)
            outs.append(self.head(x))
        return ad.concat(outs, axis=0)

    def predict_window(self, imu, prior, prior_valid, start=0, record=None):
        """Single recurrent sweep; unknown priors come from lagged outputs."""
        imu_n = self._normalize_imu(imu)
        pr = np.array(prior, dtype=np.float64, copy=True)
        prior_valid = max(int(prior_valid), 1)
        states = self._step_states()
        est = np.zeros_like(pr)
        for k in range(len(pr)):
            if k >= prior_valid:
                pr[k] = est[k - 1]
            x = Tensor(np.hstack([imu_n[k], pr[k]])[None, :])
            for li, layer in enumerate(self.layers):
                states[li] = layer.step(x, states[li])
                x = states[li]
            est[k] = self.head(x).data[0]
        return est, pr

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"gru{i}"))
        out.update(self.head.params("head"))
        return out

    def count_params(self):
        return sum(p.data.size for p in self.params().values())

    def describe(self):
        return {"model": self.name, "config": asdict(self.cfg)}


# ----------------------------------------------------------------------
# factory
# ----------------------------------------------------------------------

def build_model(name, rng, window=100, dropout=0.2, overrides=None):
    """Construct a model by selector name with desk-friendly overrides.

    ``overrides`` maps ModelConfig/GruConfig field names to values; for
    ariot, attitude-net fields take an ``att_`` prefix.
    """
    overrides = dict(overrides or {})
    if name == "riot":
        kwargs = {"window": window, "dropout": dropout}
        kwargs.update(overrides)
        cfg = ModelConfig(input_features=12, tgt_features=3, out_features=3,
                          **kwargs)
        return RiotModel(cfg, rng)
    if name == "ariot":
        att_kwargs = {"window": window, "dropout": dropout, "d_model": 64}
        pos_kwargs = {"window": window, "dropout": dropout, "d_model": 224}
        use_full = bool(overrides.pop("use_full_imu", False))
        for k, v in overrides.items():
            if k.startswith("att_"):
                att_kwargs[k[4:]] = v
            else:
                pos_kwargs[k] = v
        att_cfg = ModelConfig(input_features=9, tgt_features=9, out_features=4,
                              **att_kwargs)
        pos_cfg = ModelConfig(input_features=16 if use_full else 10,
                              tgt_features=3, out_features=3, **pos_kwargs)
        return AriotModel(att_cfg, pos_cfg, rng, use_full_imu=use_full)
    if name == "gru":
        kwargs = {"window": window, "dropout": dropout}
        kwargs.update(overrides)
        return GruModel(GruConfig(**kwargs), rng)
    raise ConfigError(f"unknown model {name!r}; expected riot, ariot or gru")


def model_from_description(desc, rng):
    """Rebuild an uninitialised model from ``describe()`` output."""
    name = desc["model"]
    if name == "riot":
        return RiotModel(ModelConfig(**desc["config"]), rng)
    if name == "ariot":
        return AriotModel(ModelConfig(**desc["attitude_config"]),
                          ModelConfig(**desc["config"]), rng,
                          use_full_imu=desc.get("use_full_imu", False))
    if name == "gru":
        return GruModel(GruConfig(**desc["config"]), rng)
    raise ConfigError(f"unknown model {name!r} in checkpoint")
