"""Vector-quantized image codec: encoder, codebook, decoder, discriminator.

The quantizer snaps each spatial latent vector to its nearest codebook entry
(Euclidean, lowest index on ties) and routes gradients straight through to
the encoder. Loss terms keep their gradient isolation: the codebook term
updates only code vectors, the commitment term only the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .conv import conv2d, conv_transpose2d
from .errors import ConfigError, NumericError
from .tensor import Tensor


@dataclass
class CodecConfig:
    height: int = 32
    width: int = 32
    channels: int = 3
    downsample: int = 4
    widths: tuple = (64, 128)
    latent_dim: int = 16
    codebook_size: int = 256
    beta: float = 0.25
    delta: float = 1e-6
    perceptual_seed: int = 2024

    def __post_init__(self):
        self.widths = tuple(self.widths)
        f = self.downsample
        if f < 1 or (f & (f - 1)) != 0:
            raise ConfigError(f"downsample must be a power of two, got {f}")
        if self.height % f or self.width % f:
            raise ConfigError(
                f"frame {self.height}x{self.width} not divisible by downsample {f}"
            )
        if len(self.widths) != f.bit_length() - 1:
            raise ConfigError(
                f"widths {self.widths} must list one stage per halving of {f}"
            )
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.delta <= 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.codebook_size < 1:
            raise ConfigError(f"codebook_size must be >= 1, got {self.codebook_size}")

    @property
    def grid_h(self):
        return self.height // self.downsample

    @property
    def grid_w(self):
        return self.width // self.downsample

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown codec config keys: {sorted(unknown)}")
        return cls(**d)


def _conv_param(rng, out_ch, in_ch, k):
    fan_in = in_ch * k * k
    scale = np.sqrt(2.0 / fan_in)
    data = rng.normal(0.0, scale, size=(out_ch, in_ch, k, k)).astype(np.float32)
    return Tensor(data, requires_grad=True)


def _bias_param(n):
    return Tensor(np.zeros(n, dtype=np.float32), requires_grad=True)


class Encoder:
    """Stride-2 conv stack mapping [B,C,H,W] to latents [B,N_z,H',W']."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        chans = [cfg.channels, *cfg.widths]
        self.stages = []
        for i in range(len(cfg.widths)):
            self.stages.append(
                (_conv_param(rng, chans[i + 1], chans[i], 4), _bias_param(chans[i + 1]))
            )
        self.head = (_conv_param(rng, cfg.latent_dim, chans[-1], 3), _bias_param(cfg.latent_dim))

    def __call__(self, x):
        if x.shape[1:] != (self.cfg.channels, self.cfg.height, self.cfg.width):
            raise ConfigError(
                f"encoder expects {(self.cfg.channels, self.cfg.height, self.cfg.width)} "
                f"frames, got {x.shape[1:]}"
            )
        h = x
        for w, b in self.stages:
            h = T.relu(conv2d(h, w, b, stride=2, padding=1))
        w, b = self.head
        return conv2d(h, w, b, stride=1, padding=1)

    def named_parameters(self):
        out = {}
        for i, (w, b) in enumerate(self.stages):
            out[f"encoder.stage{i}.weight"] = w
            out[f"encoder.stage{i}.bias"] = b
        out["encoder.head.weight"] = self.head[0]
        out["encoder.head.bias"] = self.head[1]
        return out


class Decoder:
    """Transpose-conv stack inverting the encoder's spatial arithmetic.

    Output passes through tanh, so pixels live in [-1, 1]. The final 3x3
    conv is the "last layer" whose parameter gradients drive the adaptive
    adversarial weight.
    """

    def __init__(self, cfg, rng):
        self.cfg = cfg
        rev = list(reversed(cfg.widths))
        self.stem = (_conv_param(rng, rev[0], cfg.latent_dim, 3), _bias_param(rev[0]))
        self.stages = []
        chans = [*rev, rev[-1]]
        for i in range(len(rev)):
            # conv_transpose kernels are [in_ch, out_ch, kh, kw]
            w = _conv_param(rng, chans[i], chans[i + 1], 4)
            self.stages.append((w, _bias_param(chans[i + 1])))
        self.head = (_conv_param(rng, cfg.channels, chans[-1], 3), _bias_param(cfg.channels))

    def __call__(self, z):
        expect = (self.cfg.latent_dim, self.cfg.grid_h, self.cfg.grid_w)
        if z.shape[1:] != expect:
            raise ConfigError(f"decoder expects {expect} latents, got {z.shape[1:]}")
        h = T.relu(conv2d(z, *self.stem, stride=1, padding=1))
        for w, b in self.stages:
            h = T.relu(conv_transpose2d(h, w, b, stride=2, padding=1))
        return T.tanh(conv2d(h, *self.head, stride=1, padding=1))

    @property
    def last_layer_weight(self):
        return self.head[0]

    def named_parameters(self):
        out = {"decoder.stem.weight": self.stem[0], "decoder.stem.bias": self.stem[1]}
        for i, (w, b) in enumerate(self.stages):
            out[f"decoder.stage{i}.weight"] = w
            out[f"decoder.stage{i}.bias"] = b
        out["decoder.head.weight"] = self.head[0]
        out["decoder.head.bias"] = self.head[1]
        return out


class Discriminator:
    """Patch classifier: three stride-2 conv stages then a 1x1 logit head."""

    def __init__(self, cfg, rng, base_width=32):
        chans = [cfg.channels, base_width, base_width * 2, base_width * 4]
        self.stages = [
            (_conv_param(rng, chans[i + 1], chans[i], 4), _bias_param(chans[i + 1]))
            for i in range(3)
        ]
        self.head = (_conv_param(rng, 1, chans[-1], 1), _bias_param(1))

    def __call__(self, x):
        h = x
        for w, b in self.stages:
            h = T.leaky_relu(conv2d(h, w, b, stride=2, padding=1))
        return conv2d(h, *self.head, stride=1, padding=0)

    def named_parameters(self):
        out = {}
        for i, (w, b) in enumerate(self.stages):
            out[f"discriminator.stage{i}.weight"] = w
            out[f"discriminator.stage{i}.bias"] = b
        out["discriminator.head.weight"] = self.head[0]
        out["discriminator.head.bias"] = self.head[1]
        return out


@dataclass
class QuantizeResult:
    """Everything downstream consumers need from one quantization pass.

    ``z_q`` feeds the decoder (straight-through gradient to the encoder),
    ``z_q_embed`` is the same values routed through the codebook for the
    codebook/commitment terms, ``codes`` are the [B,H',W'] integer indices.
    """

    z_q: Tensor
    z_q_embed: Tensor
    z_e_flat: Tensor
    codes: np.ndarray


def nearest_code_indices(vectors, codebook_data):
    """Exhaustive nearest-neighbor indices, lowest index on ties.

    Distances are computed in float64 so the result is insensitive to the
    accumulation order of a float32 path.
    """
    v = vectors.astype(np.float64)
    c = codebook_data.astype(np.float64)
    d2 = ((v[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def quantize(z_e, codebook):
    """Snap each spatial vector of [B,N_z,H',W'] to its nearest code."""
    if codebook.shape[0] < 1 or codebook.size == 0:
        raise ConfigError("quantize: empty codebook")
    if z_e.shape[1] != codebook.shape[1]:
        raise ConfigError(
            f"quantize: latent width {z_e.shape[1]} vs codebook width {codebook.shape[1]}"
        )
    b, nz, gh, gw = z_e.shape
    flat = T.reshape(z_e, (b, nz, gh * gw))
    flat = T.transpose(flat, (0, 2, 1))
    flat = T.reshape(flat, (b * gh * gw, nz))

    codes = nearest_code_indices(flat.data, codebook.data)
    z_q_embed = T.gather_rows(codebook, codes)

    st = T.straight_through(flat, codebook.data[codes])
    z_q = T.reshape(st, (b, gh * gw, nz))
    z_q = T.transpose(z_q, (0, 2, 1))
    z_q = T.reshape(z_q, (b, nz, gh, gw))
    return QuantizeResult(z_q=z_q, z_q_embed=z_q_embed, z_e_flat=flat, codes=codes.reshape(b, gh, gw))


def vqvae_loss(x, reconstruction, z_e_flat, z_q_embed, beta):
    """Three-term quantizer objective; returns (total, recon, codebook, commit).

    Stop-gradients keep the terms isolated: the codebook term reaches only
    code vectors, the commitment term only the encoder.
    """
    recon = T.mse(x, reconstruction)
    codebook_term = T.mse(T.stop_gradient(z_e_flat), z_q_embed)
    commit = T.mul_scalar(T.mse(T.stop_gradient(z_q_embed), z_e_flat), beta)
    total = T.add(T.add(recon, codebook_term), commit)
    return total, recon, codebook_term, commit


class FeatureBank:
    """Fixed random-convolution stack for a feature-space distance.

    Three seed-pinned conv layers; activations are channel-unit-normalized
    before comparison, so the distance is scale-aware rather than raw MSE.
    """

    def __init__(self, channels, seed):
        rng = np.random.default_rng(seed)
        widths = [channels, 16, 32, 64]
        strides = [1, 2, 2]
        self.layers = []
        for i in range(3):
            k = 3 if strides[i] == 1 else 4
            w = _conv_param(rng, widths[i + 1], widths[i], k)
            w.requires_grad = False
            self.layers.append((w, strides[i], 1))

    def features(self, x):
        feats = []
        h = x
        for w, stride, pad in self.layers:
            h = T.relu(conv2d(h, w, stride=stride, padding=pad))
            feats.append(T.l2_normalize(h, axis=1))
        return feats

    def distance(self, x, y):
        dist = None
        for fx, fy in zip(self.features(x), self.features(y)):
            term = T.mse(fx, fy)
            dist = term if dist is None else T.add(dist, term)
        return dist


def perceptual_loss(x, reconstruction, feature_bank):
    return feature_bank.distance(x, reconstruction)


def gan_losses(real_logits, fake_logits):
    """Log-sigmoid adversarial losses; generator uses the non-saturating form."""
    d_real = T.mean_all(T.softplus(T.mul_scalar(real_logits, -1.0)))
    d_fake = T.mean_all(T.softplus(fake_logits))
    d_loss = T.add(d_real, d_fake)
    g_loss = T.mean_all(T.softplus(T.mul_scalar(fake_logits, -1.0)))
    return d_loss, g_loss


def adaptive_weight(tape, perc_loss, g_loss, last_layer_param, delta, clamp=1e4):
    """Gradient-norm ratio balancing feature and adversarial losses.

    Both norms are taken at the decoder's last layer, detached from any
    further differentiation. Clamped to [0, clamp].
    """
    tape.zero_grads()
    T.backward(tape, perc_loss)
    g_perc = 0.0 if last_layer_param.grad is None else np.linalg.norm(last_layer_param.grad)
    tape.zero_grads()
    T.backward(tape, g_loss)
    g_gan = 0.0 if last_layer_param.grad is None else np.linalg.norm(last_layer_param.grad)
    tape.zero_grads()
    if not np.isfinite(g_perc) or not np.isfinite(g_gan):
        raise NumericError("adaptive_weight: non-finite gradient norm")
    lam = float(g_perc) / (float(g_gan) + delta)
    return float(min(max(lam, 0.0), clamp))


class Codec:
    """Encoder + codebook + decoder bundle with its training-side heads."""

    def __init__(self, cfg, rng=None, with_discriminator=True):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(0)
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.codebook = Tensor(
            rng.normal(0.0, 0.05, size=(cfg.codebook_size, cfg.latent_dim)).astype(np.float32),
            requires_grad=True,
        )
        self.discriminator = Discriminator(cfg, rng) if with_discriminator else None
        self.feature_bank = FeatureBank(cfg.channels, cfg.perceptual_seed)

    def encode(self, frames):
        return self.encoder(frames)

    def decode(self, z_q):
        return self.decoder(z_q)

    def forward(self, frames):
        """encode -> quantize -> decode; returns (reconstruction, QuantizeResult)."""
        z_e = self.encoder(frames)
        q = quantize(z_e, self.codebook)
        return self.decoder(q.z_q), q

    def named_parameters(self, include_discriminator=True):
        out = {}
        out.update(self.encoder.named_parameters())
        out.update(self.decoder.named_parameters())
        out["codebook"] = self.codebook
        if include_discriminator and self.discriminator is not None:
            out.update(self.discriminator.named_parameters())
        return out

    def generator_parameters(self):
        return self.named_parameters(include_discriminator=False)


def encode_video(clip_frames, codec):
    """Code grids [T,H',W'] for a clip's frames; no gradients are recorded."""
    with T.no_grad():
        z_e = codec.encode(Tensor(clip_frames))
        q = quantize(z_e, codec.codebook)
    return q.codes


def decode_codes(codes, codec):
    """Decode integer code grids [T,H',W'] back to frames [T,C,H,W]."""
    t, gh, gw = codes.shape
    with T.no_grad():
        vectors = codec.codebook.data[codes.reshape(t * gh * gw)]
        z_q = vectors.reshape(t, gh * gw, -1).transpose(0, 2, 1)
        z_q = z_q.reshape(t, codec.cfg.latent_dim, gh, gw)
        frames = codec.decode(Tensor(z_q))
    return frames.data
