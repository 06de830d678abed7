"""Causal transformer over flattened code sequences.

Frames are encoded to code grids, flattened in raster order frame after
frame, and modeled autoregressively: logits at position i see tokens at
positions <= i only. Position information is factored into a frame embedding
plus a spatial embedding so rollouts can extend past the trained horizon
(frame embeddings clamp to the last learned row). Optional per-frame action
vectors are projected and added to every token embedding of their frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .tensor import _GELU_A, _GELU_C
from .codec import decode_codes, encode_video
from .errors import CapacityError, ConfigError, VocabularyError
from .sampling import sample_topk
from .tensor import Tensor

_LN_EPS = 1e-5


@dataclass
class DynamicsConfig:
    vocab_size: int
    grid_h: int
    grid_w: int
    frames: int
    conditioning: int
    layers: int = 12
    heads: int = 2
    model_dim: int = 128
    action_dim: int = 0
    context_tokens: int = 0

    def __post_init__(self):
        hw = self.grid_h * self.grid_w
        if self.context_tokens <= 0:
            self.context_tokens = self.frames * hw
        if self.context_tokens < self.frames * hw:
            raise ConfigError(
                f"context_tokens {self.context_tokens} below clip size {self.frames * hw}"
            )
        if not 1 <= self.conditioning < self.frames:
            raise ConfigError(
                f"conditioning {self.conditioning} must be in [1, {self.frames})"
            )
        if self.layers > 0 and self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")

    @property
    def tokens_per_frame(self):
        return self.grid_h * self.grid_w

    @property
    def targets_per_clip(self):
        return (self.frames - self.conditioning) * self.tokens_per_frame

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown dynamics config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TokenSequence:
    """Raster-flattened clip codes plus per-token position bookkeeping."""

    codes: np.ndarray  # [L] int
    frame_index: np.ndarray  # [L] int, which frame each token belongs to
    spatial_index: np.ndarray  # [L] int, raster position within the frame
    conditioning: int
    grid_h: int
    grid_w: int
    actions: np.ndarray | None = None  # [T, A]

    @property
    def n_frames(self):
        return len(self.codes) // (self.grid_h * self.grid_w)

    @property
    def target_positions(self):
        """Global indices of the predicted (non-conditioning) tokens."""
        start = self.conditioning * self.grid_h * self.grid_w
        return np.arange(start, len(self.codes))


def flatten_codes(grids, conditioning, actions=None):
    """Flatten [T,H',W'] code grids to a frame-major raster token stream."""
    grids = np.asarray(grids)
    if grids.ndim != 3:
        raise ConfigError(f"flatten_codes: expected [T,H',W'] grids, got {grids.shape}")
    t, gh, gw = grids.shape
    if not 1 <= conditioning < t:
        raise ConfigError(f"flatten_codes: conditioning {conditioning} vs {t} frames")
    if actions is not None:
        actions = np.asarray(actions, dtype=np.float32)
        if actions.shape[0] != t:
            raise ConfigError(
                f"flatten_codes: {actions.shape[0]} actions for {t} frames"
            )
    hw = gh * gw
    pos = np.arange(t * hw)
    return TokenSequence(
        codes=grids.reshape(t * hw).astype(np.int64),
        frame_index=pos // hw,
        spatial_index=pos % hw,
        conditioning=conditioning,
        grid_h=gh,
        grid_w=gw,
        actions=actions,
    )


def _normal_param(rng, shape, scale=0.02):
    return Tensor(rng.normal(0.0, scale, size=shape).astype(np.float32), requires_grad=True)


def _ones_param(n):
    return Tensor(np.ones(n, dtype=np.float32), requires_grad=True)


def _zeros_param(shape):
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


class _Block:
    def __init__(self, cfg, rng):
        d = cfg.model_dim
        self.ln1_gain = _ones_param(d)
        self.ln1_bias = _zeros_param(d)
        self.wq = _normal_param(rng, (d, d))
        self.wk = _normal_param(rng, (d, d))
        self.wv = _normal_param(rng, (d, d))
        self.wo = _normal_param(rng, (d, d))
        self.bq = _zeros_param(d)
        self.bk = _zeros_param(d)
        self.bv = _zeros_param(d)
        self.bo = _zeros_param(d)
        self.ln2_gain = _ones_param(d)
        self.ln2_bias = _zeros_param(d)
        self.w1 = _normal_param(rng, (d, 4 * d))
        self.b1 = _zeros_param(4 * d)
        self.w2 = _normal_param(rng, (4 * d, d))
        self.b2 = _zeros_param(d)

    def named_parameters(self, prefix):
        names = (
            "ln1_gain ln1_bias wq wk wv wo bq bk bv bo "
            "ln2_gain ln2_bias w1 b1 w2 b2"
        ).split()
        return {f"{prefix}.{n}": getattr(self, n) for n in names}


class DynamicsModel:
    """Pre-norm decoder-only transformer with dense causal attention."""

    def __init__(self, cfg, rng=None):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(0)
        d = cfg.model_dim
        self.tok_emb = _normal_param(rng, (cfg.vocab_size, d))
        self.frame_emb = _normal_param(rng, (cfg.frames, d))
        self.spat_emb = _normal_param(rng, (cfg.tokens_per_frame, d))
        self.action_proj = (
            _normal_param(rng, (cfg.action_dim, d), scale=0.1) if cfg.action_dim else None
        )
        self.blocks = [_Block(cfg, rng) for _ in range(cfg.layers)]
        self.lnf_gain = _ones_param(d)
        self.lnf_bias = _zeros_param(d)
        self.unembed = _normal_param(rng, (d, cfg.vocab_size))

    def named_parameters(self):
        out = {
            "tok_emb": self.tok_emb,
            "frame_emb": self.frame_emb,
            "spat_emb": self.spat_emb,
            "lnf_gain": self.lnf_gain,
            "lnf_bias": self.lnf_bias,
            "unembed": self.unembed,
        }
        if self.action_proj is not None:
            out["action_proj"] = self.action_proj
        for i, blk in enumerate(self.blocks):
            out.update(blk.named_parameters(f"block{i}"))
        return out

    # -- batched tape forward -------------------------------------------------

    def _check_tokens(self, tokens):
        if tokens.ndim != 2:
            raise ConfigError(f"tokens must be [B, L], got {tokens.shape}")
        b, length = tokens.shape
        if length > self.cfg.context_tokens:
            raise CapacityError(
                f"sequence of {length} tokens exceeds context budget "
                f"{self.cfg.context_tokens}"
            )
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise VocabularyError(
                f"code index outside vocabulary [0, {self.cfg.vocab_size})"
            )
        return b, length

    def forward_batch(self, tokens, actions=None):
        """Logits [B, L, K] for token batch [B, L] under strict causal masking.

        ``actions`` is [B, T, A]; ignored entirely when action_dim is 0.
        """
        cfg = self.cfg
        tokens = np.asarray(tokens, dtype=np.int64)
        b, length = self._check_tokens(tokens)
        d = cfg.model_dim
        hw = cfg.tokens_per_frame
        pos = np.arange(length)
        frame_idx = pos // hw
        spat_idx = pos % hw
        frame_rows = np.minimum(frame_idx, cfg.frames - 1)

        x = T.embedding(self.tok_emb, tokens.reshape(b * length))
        x = T.add(x, T.embedding(self.frame_emb, np.tile(frame_rows, b)))
        x = T.add(x, T.embedding(self.spat_emb, np.tile(spat_idx, b)))
        if cfg.action_dim:
            if actions is None:
                raise ConfigError("model is action-conditioned but no actions given")
            actions = np.asarray(actions, dtype=np.float32)
            if actions.ndim != 3 or actions.shape[0] != b or actions.shape[2] != cfg.action_dim:
                raise ConfigError(
                    f"actions must be [B, T, {cfg.action_dim}], got {actions.shape}"
                )
            n_frames = int(frame_idx[-1]) + 1 if length else 0
            if actions.shape[1] < n_frames:
                raise ConfigError(
                    f"{actions.shape[1]} action steps for {n_frames} frames"
                )
            t_act = actions.shape[1]
            proj = T.matmul(Tensor(actions.reshape(b * t_act, cfg.action_dim)), self.action_proj)
            rows = (np.repeat(np.arange(b), length) * t_act) + np.tile(frame_idx, b)
            x = T.add(x, T.gather_rows(proj, rows))
        x = T.reshape(x, (b, length, d))

        for blk in self.blocks:
            x = self._block_forward(blk, x)

        x = T.layer_norm(x, self.lnf_gain, self.lnf_bias, eps=_LN_EPS)
        logits = T.matmul(T.reshape(x, (b * length, d)), self.unembed)
        return T.reshape(logits, (b, length, cfg.vocab_size))

    def _block_forward(self, blk, x):
        b, length, d = x.shape
        nh = self.cfg.heads
        dh = d // nh

        def split_heads(t):
            t = T.reshape(t, (b, length, nh, dh))
            t = T.transpose(t, (0, 2, 1, 3))
            return T.reshape(t, (b * nh, length, dh))

        xn = T.layer_norm(x, blk.ln1_gain, blk.ln1_bias, eps=_LN_EPS)
        flat = T.reshape(xn, (b * length, d))
        q = split_heads(T.add_bias(T.matmul(flat, blk.wq), blk.bq))
        k = split_heads(T.add_bias(T.matmul(flat, blk.wk), blk.bk))
        v = split_heads(T.add_bias(T.matmul(flat, blk.wv), blk.bv))

        att = T.causal_softmax(T.bmm(q, T.transpose(k, (0, 2, 1))), scale=1.0 / math.sqrt(dh))
        ctx = T.bmm(att, v)
        ctx = T.reshape(ctx, (b, nh, length, dh))
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b * length, d))
        proj = T.add_bias(T.matmul(ctx, blk.wo), blk.bo)
        x = T.add(x, T.reshape(proj, (b, length, d)))

        xn = T.layer_norm(x, blk.ln2_gain, blk.ln2_bias, eps=_LN_EPS)
        flat = T.reshape(xn, (b * length, d))
        hidden = T.gelu(T.add_bias(T.matmul(flat, blk.w1), blk.b1))
        out = T.add_bias(T.matmul(hidden, blk.w2), blk.b2)
        return T.add(x, T.reshape(out, (b, length, d)))

    def forward_logits(self, seq, actions_override=None):
        """Logits [L, K] for a single ``TokenSequence``."""
        actions = seq.actions if actions_override is None else actions_override
        batch_actions = None
        if self.cfg.action_dim and actions is not None:
            batch_actions = np.asarray(actions, dtype=np.float32)[None]
        logits = self.forward_batch(seq.codes[None], batch_actions)
        return T.reshape(logits, (len(seq.codes), self.cfg.vocab_size))


def nll_loss(logits, tokens, conditioning, tokens_per_frame):
    """Mean nats per predicted token, conditioning positions excluded.

    ``logits`` is the [B, L, K] tape tensor from ``forward_batch``; targets
    are each position's next code, restricted to non-conditioning frames.
    """
    b, length, k = logits.shape
    start = conditioning * tokens_per_frame
    if start < 1 or start >= length:
        raise ConfigError(f"no target positions for conditioning {conditioning}")
    tgt_pos = np.arange(start, length)
    rows = (np.arange(b)[:, None] * length + (tgt_pos[None, :] - 1)).reshape(-1)
    targets = np.asarray(tokens)[:, tgt_pos].reshape(-1)
    flat = T.reshape(logits, (b * length, k))
    return T.cross_entropy(T.gather_rows(flat, rows), targets)


# -- incremental rollout ------------------------------------------------------


def _ln_vec(v, gain, bias):
    mu = v.mean()
    var = ((v - mu) ** 2).mean()
    return (v - mu) / np.sqrt(var + _LN_EPS) * gain + bias


class Rollout:
    """Autoregressive sampler with a per-rollout key/value cache.

    Extending first to f1 frames and then to f2 > f1 under one rng stream
    produces exactly the prefix of a single f2 extension.
    """

    def __init__(self, model, conditioning_codes, actions, k, temperature, rng):
        cfg = model.cfg
        self.model = model
        self.k = k
        self.temperature = temperature
        self.rng = rng
        self.grid_h, self.grid_w = conditioning_codes.shape[1:]
        if (self.grid_h, self.grid_w) != (cfg.grid_h, cfg.grid_w):
            raise ConfigError(
                f"conditioning grid {(self.grid_h, self.grid_w)} vs model "
                f"{(cfg.grid_h, cfg.grid_w)}"
            )
        self.actions = None
        if cfg.action_dim:
            if actions is None:
                raise ConfigError("model is action-conditioned but no actions given")
            self.actions = np.asarray(actions, dtype=np.float32)
        cap = cfg.context_tokens
        dh = cfg.model_dim // cfg.heads if cfg.layers else 0
        self._kcache = [np.empty((cap, cfg.heads, dh), np.float32) for _ in range(cfg.layers)]
        self._vcache = [np.empty((cap, cfg.heads, dh), np.float32) for _ in range(cfg.layers)]
        self._t = 0
        self._last_logits = None
        self.frames_done = 0
        for frame in range(conditioning_codes.shape[0]):
            for code in conditioning_codes[frame].reshape(-1):
                self._last_logits = self._process(int(code))
            self.frames_done += 1
        self.conditioning_frames = conditioning_codes.shape[0]

    def _token_budget(self, total_frames):
        return total_frames * self.grid_h * self.grid_w

    def _process(self, token):
        """Feed one token through the cached network; returns next-code logits."""
        cfg = self.model.cfg
        pos = self._t
        if pos >= cfg.context_tokens:
            raise CapacityError(
                f"rollout needs more than the context budget of "
                f"{cfg.context_tokens} tokens"
            )
        hw = cfg.tokens_per_frame
        frame_i, spat_i = pos // hw, pos % hw
        x = (
            self.model.tok_emb.data[token]
            + self.model.frame_emb.data[min(frame_i, cfg.frames - 1)]
            + self.model.spat_emb.data[spat_i]
        )
        if self.actions is not None:
            if frame_i >= self.actions.shape[0]:
                raise ConfigError(
                    f"rollout reached frame {frame_i} but only "
                    f"{self.actions.shape[0]} actions were given"
                )
            x = x + self.actions[frame_i] @ self.model.action_proj.data
        nh = cfg.heads
        dh = cfg.model_dim // nh if cfg.layers else 0
        scale = 1.0 / math.sqrt(dh) if dh else 0.0
        for li, blk in enumerate(self.model.blocks):
            h = _ln_vec(x, blk.ln1_gain.data, blk.ln1_bias.data)
            q = (h @ blk.wq.data + blk.bq.data).reshape(nh, dh)
            self._kcache[li][pos] = (h @ blk.wk.data + blk.bk.data).reshape(nh, dh)
            self._vcache[li][pos] = (h @ blk.wv.data + blk.bv.data).reshape(nh, dh)
            keys = self._kcache[li][: pos + 1]
            vals = self._vcache[li][: pos + 1]
            scores = np.einsum("hd,thd->ht", q, keys) * scale
            scores -= scores.max(axis=1, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(axis=1, keepdims=True)
            ctx = np.einsum("ht,thd->hd", w, vals).reshape(-1)
            x = x + ctx @ blk.wo.data + blk.bo.data
            h = _ln_vec(x, blk.ln2_gain.data, blk.ln2_bias.data)
            hidden = h @ blk.w1.data + blk.b1.data
            act = 0.5 * hidden * (
                1.0 + np.tanh(_GELU_C * (hidden + _GELU_A * (hidden * hidden * hidden)))
            )
            x = x + act @ blk.w2.data + blk.b2.data
        x = _ln_vec(x, self.model.lnf_gain.data, self.model.lnf_bias.data)
        self._t = pos + 1
        return x @ self.model.unembed.data

    def extend(self, n_frames):
        """Sample ``n_frames`` further frames of codes; returns [n,H',W']."""
        cfg = self.model.cfg
        total = self.frames_done + n_frames
        budget = self._token_budget(total)
        if budget > cfg.context_tokens:
            raise CapacityError(
                f"{total} frames need {budget} tokens; context allows "
                f"{cfg.context_tokens}"
            )
        hw = cfg.tokens_per_frame
        out = np.empty((n_frames, hw), dtype=np.int64)
        for f in range(n_frames):
            for s in range(hw):
                code = sample_topk(self._last_logits, self.k, self.temperature, self.rng)
                out[f, s] = code
                self._last_logits = self._process(code)
            self.frames_done += 1
        return out.reshape(n_frames, self.grid_h, self.grid_w)


def predict_video(conditioning_clip, actions, future_steps, codec, model, k=10,
                  temperature=1.0, rng=None):
    """Autoregressively predict ``future_steps`` frames after the clip prefix.

    Encodes the conditioning frames with the frozen codec, samples future
    code grids token by token, and decodes each completed grid. Returns the
    future frames only, as a [future_steps, C, H, W] array.
    """
    cfg = model.cfg
    if (codec.cfg.grid_h, codec.cfg.grid_w) != (cfg.grid_h, cfg.grid_w):
        raise ConfigError(
            f"codec grid {(codec.cfg.grid_h, codec.cfg.grid_w)} vs dynamics "
            f"grid {(cfg.grid_h, cfg.grid_w)}"
        )
    if codec.cfg.codebook_size != cfg.vocab_size:
        raise ConfigError(
            f"codec codebook {codec.cfg.codebook_size} vs dynamics vocabulary "
            f"{cfg.vocab_size}"
        )
    rng = rng if rng is not None else np.random.default_rng(0)
    frames = np.asarray(conditioning_clip, dtype=np.float32)
    cond_codes = encode_video(frames, codec)
    rollout = Rollout(model, cond_codes, actions, k, temperature, rng)
    codes = rollout.extend(future_steps)
    return decode_codes(codes, codec)
