"""Training loops: two-phase codec training and frozen-codec dynamics training.

Codec phase 1 minimizes the plain three-term quantizer objective; phase 2
adds the feature-space distance and the adversarially weighted generator
term, alternating discriminator and generator updates. Dynamics training
never updates the codec; a parameter hash taken before and after makes the
freeze auditable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import AugmentConfig, translate_clip
from .checkpoint import (
    CODEC_MAGIC,
    DYNAMICS_MAGIC,
    file_sha256,
    load_checkpoint,
    params_sha256,
    save_checkpoint,
)
from .codec import (
    Codec,
    CodecConfig,
    adaptive_weight,
    encode_video,
    gan_losses,
    perceptual_loss,
    quantize,
    vqvae_loss,
)
from .dynamics import DynamicsConfig, DynamicsModel, nll_loss
from .errors import ConfigError, NumericError
from .evaluate import psnr
from .optim import Adam
from .tensor import Tape, Tensor


@dataclass
class TrainSchedule:
    """Codec schedule: phase 1 (no adversary) then phase 2 (with adversary)."""

    phase1_steps: int = 3000
    phase2_steps: int = 0
    batch_size: int = 8
    lr: float = 1e-3
    disc_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    seed: int = 0
    log_interval: int = 1
    eval_interval: int = 250
    dead_code_interval: int = 250
    dead_code_reseed: bool = True
    target_psnr: float | None = None  # optional phase-1 early stop
    pixel_weight: float = 1.0  # phase-2 pixel-space term alongside the feature distance
    perceptual_weight: float = 1.0

    def __post_init__(self):
        if self.phase1_steps < 0 or self.phase2_steps < 0:
            raise ConfigError("step counts must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class DynamicsSchedule:
    steps: int = 3000
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    seed: int = 0
    log_interval: int = 10
    aug_max_shift: int = 0
    aug_axis_exclusive: bool = False
    aug_fill: float = 0.0
    target_nll: float | None = None  # optional early stop, checked at log points
    lr_final: float | None = None  # cosine-decay floor; None keeps lr constant

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)


# -- persistence ---------------------------------------------------------------


def save_codec(path, codec):
    tensors = {name: p.data for name, p in codec.named_parameters().items()}
    save_checkpoint(path, CODEC_MAGIC, codec.cfg.to_dict(), tensors)


def load_codec(path):
    config, tensors = load_checkpoint(path, CODEC_MAGIC)
    cfg = CodecConfig.from_dict(config)
    with_disc = any(name.startswith("discriminator.") for name in tensors)
    codec = Codec(cfg, np.random.default_rng(0), with_discriminator=with_disc)
    _restore(codec.named_parameters(), tensors, path)
    return codec


def save_dynamics(path, model, codec_sha256):
    config = {"dynamics": model.cfg.to_dict(), "codec_sha256": codec_sha256}
    tensors = {name: p.data for name, p in model.named_parameters().items()}
    save_checkpoint(path, DYNAMICS_MAGIC, config, tensors)


def load_dynamics(path):
    config, tensors = load_checkpoint(path, DYNAMICS_MAGIC)
    cfg = DynamicsConfig.from_dict(config["dynamics"])
    model = DynamicsModel(cfg, np.random.default_rng(0))
    _restore(model.named_parameters(), tensors, path)
    return model, config["codec_sha256"]


def _restore(params, tensors, path):
    for name, p in params.items():
        if name not in tensors:
            raise ConfigError(f"{path}: missing tensor {name!r}")
        arr = tensors[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise ConfigError(
                f"{path}: tensor {name!r} has shape {arr.shape}, expected {p.data.shape}"
            )
        p.data = arr.astype(np.float32)
    extra = set(tensors) - set(params)
    if extra:
        raise ConfigError(f"{path}: unexpected tensors {sorted(extra)}")


# -- codec training --------------------------------------------------------------


def _frame_pool(clips):
    return np.concatenate([clip.frames for clip in clips], axis=0)


def reconstruction_psnr(codec, frames, batch=32):
    """Mean reconstruction PSNR of encode -> quantize -> decode."""
    scores = []
    with T.no_grad():
        for i in range(0, len(frames), batch):
            chunk = frames[i : i + batch]
            recon, _ = codec.forward(Tensor(chunk))
            scores.extend(psnr(r, f) for r, f in zip(recon.data, chunk))
    return float(np.mean(scores))


class _JsonlLogger:
    def __init__(self, path):
        self._fh = open(path, "w")

    def write(self, record):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def train_codec(train_clips, test_clips, cfg, sched, out_dir):
    """Run the two-phase codec schedule; returns (codec, summary dict).

    Emits ``codec.ckpt`` and ``train_log.jsonl`` under ``out_dir``. A
    non-finite loss aborts with the last good parameters saved.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(sched.seed)
    codec = Codec(cfg, rng, with_discriminator=sched.phase2_steps > 0)
    frames = _frame_pool(train_clips)
    test_frames = _frame_pool(test_clips) if test_clips else None

    opt_g = Adam(codec.generator_parameters(), lr=sched.lr, beta1=sched.beta1, beta2=sched.beta2)
    opt_d = None
    if codec.discriminator is not None:
        opt_d = Adam(
            codec.discriminator.named_parameters(),
            lr=sched.disc_lr,
            beta1=sched.beta1,
            beta2=sched.beta2,
        )

    log = _JsonlLogger(out / "train_log.jsonl")
    usage = np.zeros(cfg.codebook_size, dtype=np.int64)
    last_z_e = None
    psnr_history = []
    summary = {"steps_run": 0, "phase1_psnr": None, "final_psnr": None}
    step = 0
    all_params = codec.named_parameters()
    last_good = {k: p.data.copy() for k, p in all_params.items()}

    def snapshot():
        for k, p in all_params.items():
            last_good[k] = p.data.copy()

    def abort_non_finite(losses):
        if all(np.isfinite(v) for v in losses):
            return
        for k, p in all_params.items():
            p.data = last_good[k]
        save_codec(out / "codec.ckpt", codec)
        log.close()
        raise NumericError(
            f"non-finite loss at step {step}; last-good checkpoint written to "
            f"{out / 'codec.ckpt'}"
        )

    def run_eval():
        if test_frames is None:
            return None
        if psnr_history and psnr_history[-1]["step"] == step:
            return psnr_history[-1]["psnr"]
        value = reconstruction_psnr(codec, test_frames)
        psnr_history.append({"step": step, "psnr": value})
        return value

    def batch_tensor():
        idx = rng.integers(0, len(frames), size=sched.batch_size)
        return Tensor(frames[idx])

    def maybe_reseed():
        nonlocal usage
        if not sched.dead_code_reseed or last_z_e is None:
            return
        dead = np.flatnonzero(usage == 0)
        if dead.size:
            rows = rng.integers(0, len(last_z_e), size=dead.size)
            codec.codebook.data[dead] = last_z_e[rows]
        usage = np.zeros_like(usage)

    # phase 1: plain quantizer objective
    phase1_done = 0
    while phase1_done < sched.phase1_steps:
        x = batch_tensor()
        with Tape() as tape:
            recon, q = codec.forward(x)
            total, rec_t, cb_t, com_t = vqvae_loss(x, recon, q.z_e_flat, q.z_q_embed, cfg.beta)
            T.backward(tape, total)
        losses = {"recon": rec_t.item(), "codebook": cb_t.item(), "commit": com_t.item()}
        abort_non_finite(losses.values())
        opt_g.step()
        opt_g.zero_grad()
        usage += np.bincount(q.codes.reshape(-1), minlength=cfg.codebook_size)
        last_z_e = q.z_e_flat.data
        step += 1
        phase1_done += 1
        if step % sched.log_interval == 0:
            log.write({"step": step, "phase": 1, **losses})
            snapshot()
        if step % sched.dead_code_interval == 0:
            maybe_reseed()
        if step % sched.eval_interval == 0 or phase1_done == sched.phase1_steps:
            value = run_eval()
            if (
                value is not None
                and sched.target_psnr is not None
                and value >= sched.target_psnr
            ):
                break

    summary["phase1_psnr"] = run_eval()

    # phase 2: feature distance + adaptively weighted adversary
    for _ in range(sched.phase2_steps):
        x = batch_tensor()
        try:
            with Tape() as tape:
                recon, q = codec.forward(x)
                _, rec_t, cb_t, com_t = vqvae_loss(x, recon, q.z_e_flat, q.z_q_embed, cfg.beta)
                perc = perceptual_loss(x, recon, codec.feature_bank)
                fake_logits = codec.discriminator(recon)
                real_logits = codec.discriminator(x)
                d_loss_probe, g_loss = gan_losses(real_logits, fake_logits)
                lam = adaptive_weight(
                    tape, perc, g_loss, codec.decoder.last_layer_weight, cfg.delta
                )
                gen_total = T.add(
                    T.add(
                        T.add(T.mul_scalar(rec_t, sched.pixel_weight),
                              T.mul_scalar(perc, sched.perceptual_weight)),
                        T.add(cb_t, com_t),
                    ),
                    T.mul_scalar(g_loss, lam),
                )
                T.backward(tape, gen_total)
        except NumericError:
            abort_non_finite([np.nan])
        losses = {
            "recon": rec_t.item(),
            "codebook": cb_t.item(),
            "commit": com_t.item(),
            "perceptual": perc.item(),
            "g_loss": g_loss.item(),
            "d_loss": d_loss_probe.item(),
            "lambda": lam,
        }
        abort_non_finite(losses.values())
        opt_g.step()
        opt_g.zero_grad()
        opt_d.zero_grad()  # the generator backward also reached D through its adversarial term

        with Tape() as dtape:
            real_logits = codec.discriminator(x)
            fake_logits = codec.discriminator(Tensor(recon.data))
            d_loss, _ = gan_losses(real_logits, fake_logits)
            T.backward(dtape, d_loss)
        abort_non_finite([d_loss.item()])
        opt_d.step()
        opt_d.zero_grad()

        usage += np.bincount(q.codes.reshape(-1), minlength=cfg.codebook_size)
        last_z_e = q.z_e_flat.data
        step += 1
        if step % sched.log_interval == 0:
            log.write({"step": step, "phase": 2, **losses, "d_loss_step": d_loss.item()})
            snapshot()
        if step % sched.dead_code_interval == 0:
            maybe_reseed()
        if step % sched.eval_interval == 0:
            run_eval()

    summary["final_psnr"] = run_eval() if test_frames is not None else None
    summary["steps_run"] = step
    summary["psnr_history"] = psnr_history
    save_codec(out / "codec.ckpt", codec)
    log.close()
    return codec, summary


# -- dynamics training ------------------------------------------------------------


def check_codec_compatibility(codec_cfg, dyn_cfg):
    if codec_cfg.codebook_size != dyn_cfg.vocab_size:
        raise ConfigError(
            f"codec codebook size {codec_cfg.codebook_size} != dynamics "
            f"vocabulary {dyn_cfg.vocab_size}"
        )
    if (codec_cfg.grid_h, codec_cfg.grid_w) != (dyn_cfg.grid_h, dyn_cfg.grid_w):
        raise ConfigError(
            f"codec grid {(codec_cfg.grid_h, codec_cfg.grid_w)} != dynamics "
            f"grid {(dyn_cfg.grid_h, dyn_cfg.grid_w)}"
        )


def _encode_clips(clips, codec):
    tokens = np.stack([encode_video(clip.frames, codec) for clip in clips])
    t, gh, gw = tokens.shape[1:]
    return tokens.reshape(len(clips), t * gh * gw)


def train_dynamics(train_clips, codec_path, dyn_cfg, sched, out_dir):
    """Teacher-forced dynamics training against a frozen codec.

    Returns (model, summary). The codec checkpoint's content hash is stored
    in the emitted dynamics checkpoint so prediction can refuse mismatched
    pairs; codec parameters are hashed before and after as a freeze check.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    codec = load_codec(codec_path)
    check_codec_compatibility(codec.cfg, dyn_cfg)
    codec_file_hash = file_sha256(codec_path)
    codec_params = {k: p.data for k, p in codec.named_parameters().items()}
    freeze_before = params_sha256(codec_params)

    for clip in train_clips:
        if clip.n_frames != dyn_cfg.frames:
            raise ConfigError(
                f"clip has {clip.n_frames} frames, dynamics expects {dyn_cfg.frames}"
            )

    rng = np.random.default_rng(sched.seed)
    model = DynamicsModel(dyn_cfg, rng)
    opt = Adam(model.named_parameters(), lr=sched.lr, beta1=sched.beta1, beta2=sched.beta2)
    aug = None
    if sched.aug_max_shift > 0:
        aug = AugmentConfig(
            max_shift=sched.aug_max_shift,
            fill=sched.aug_fill,
            axis_exclusive=sched.aug_axis_exclusive,
        )

    actions_all = None
    if dyn_cfg.action_dim:
        actions_all = np.stack([clip.actions for clip in train_clips])

    pre_tokens = None if aug is not None else _encode_clips(train_clips, codec)

    log = _JsonlLogger(out / "train_log.jsonl")
    losses = []
    for step in range(1, sched.steps + 1):
        if sched.lr_final is not None:
            frac = step / sched.steps
            opt.lr = sched.lr_final + 0.5 * (sched.lr - sched.lr_final) * (
                1.0 + math.cos(math.pi * frac)
            )
        idx = rng.integers(0, len(train_clips), size=sched.batch_size)
        if aug is None:
            tokens = pre_tokens[idx]
        else:
            shifted = [translate_clip(train_clips[i], rng, aug) for i in idx]
            tokens = _encode_clips(shifted, codec)
        actions = actions_all[idx] if actions_all is not None else None
        try:
            with Tape() as tape:
                logits = model.forward_batch(tokens, actions)
                loss = nll_loss(logits, tokens, dyn_cfg.conditioning, dyn_cfg.tokens_per_frame)
                T.backward(tape, loss)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at step {step}")
        except NumericError as exc:
            save_dynamics(out / "dynamics.ckpt", model, codec_file_hash)
            log.close()
            raise NumericError(
                f"{exc}; last-good checkpoint written to {out / 'dynamics.ckpt'}"
            ) from exc
        opt.step()
        opt.zero_grad()
        losses.append(value)
        if step % sched.log_interval == 0 or step == sched.steps:
            log.write({"step": step, "nll": value})
            if sched.target_nll is not None and value < sched.target_nll:
                break

    freeze_after = params_sha256({k: p.data for k, p in codec.named_parameters().items()})
    if freeze_before != freeze_after:
        raise NumericError("frozen codec parameters changed during dynamics training")

    save_dynamics(out / "dynamics.ckpt", model, codec_file_hash)
    log.close()
    summary = {
        "final_nll": losses[-1] if losses else None,
        "codec_sha256": codec_file_hash,
        "codec_frozen": True,
    }
    return model, summary
