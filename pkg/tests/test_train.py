"""Training-loop contracts at toy scale: determinism, freezing, refusals."""

import json

import numpy as np
import pytest

from latentvideo.codec import CodecConfig
from latentvideo.data import SpriteWorldConfig, generate_clip
from latentvideo.dynamics import DynamicsConfig
from latentvideo.errors import ConfigError, NumericError
from latentvideo.train import (
    DynamicsSchedule,
    TrainSchedule,
    load_codec,
    load_dynamics,
    save_codec,
    train_codec,
    train_dynamics,
)
from latentvideo.checkpoint import file_sha256, params_sha256


DATA_CFG = SpriteWorldConfig(height=16, width=16, frames=4, conditioning=1,
                             sprite_count=2, sprite_sizes=(4, 5))
CODEC_CFG = CodecConfig(height=16, width=16, downsample=4, widths=(8, 12),
                        latent_dim=4, codebook_size=32)


def clips(n, offset=0):
    return [generate_clip(DATA_CFG, 100 + offset + i) for i in range(n)]


def test_phase1_only_never_builds_adversary(tmp_path):
    sched = TrainSchedule(phase1_steps=3, phase2_steps=0, batch_size=2,
                          eval_interval=3, log_interval=1)
    codec, summary = train_codec(clips(2), clips(1, 50), CODEC_CFG, sched, tmp_path)
    assert codec.discriminator is None
    assert summary["steps_run"] == 3
    log_lines = [json.loads(l) for l in open(tmp_path / "train_log.jsonl")]
    assert all(rec["phase"] == 1 for rec in log_lines)
    assert {"recon", "codebook", "commit"} <= set(log_lines[0])


def test_phase2_logs_adversarial_terms(tmp_path):
    sched = TrainSchedule(phase1_steps=2, phase2_steps=2, batch_size=2,
                          eval_interval=10, log_interval=1)
    codec, _ = train_codec(clips(2), [], CODEC_CFG, sched, tmp_path)
    assert codec.discriminator is not None
    log_lines = [json.loads(l) for l in open(tmp_path / "train_log.jsonl")]
    phase2 = [rec for rec in log_lines if rec["phase"] == 2]
    assert phase2 and {"g_loss", "d_loss", "lambda", "perceptual"} <= set(phase2[0])


def test_codec_training_reconstruction_improves(tmp_path):
    sched = TrainSchedule(phase1_steps=120, phase2_steps=0, batch_size=4, lr=2e-3,
                          eval_interval=60, log_interval=20)
    _, summary = train_codec(clips(6), clips(2, 60), CODEC_CFG, sched, tmp_path)
    log_lines = [json.loads(l) for l in open(tmp_path / "train_log.jsonl")]
    assert log_lines[-1]["recon"] < log_lines[0]["recon"]


def test_codec_training_bitwise_deterministic(tmp_path):
    sched = TrainSchedule(phase1_steps=5, phase2_steps=2, batch_size=2, seed=7,
                          eval_interval=10, log_interval=1)
    train_codec(clips(2), [], CODEC_CFG, sched, tmp_path / "a")
    train_codec(clips(2), [], CODEC_CFG, sched, tmp_path / "b")
    assert (tmp_path / "a/train_log.jsonl").read_bytes() == (tmp_path / "b/train_log.jsonl").read_bytes()
    assert (tmp_path / "a/codec.ckpt").read_bytes() == (tmp_path / "b/codec.ckpt").read_bytes()


def _trained_codec(tmp_path, steps=3):
    sched = TrainSchedule(phase1_steps=steps, phase2_steps=0, batch_size=2,
                          eval_interval=10, log_interval=1)
    train_codec(clips(2), [], CODEC_CFG, sched, tmp_path / "codec")
    return tmp_path / "codec" / "codec.ckpt"


def dyn_cfg(**kw):
    defaults = dict(vocab_size=32, grid_h=4, grid_w=4, frames=4, conditioning=1,
                    layers=1, heads=2, model_dim=16)
    defaults.update(kw)
    return DynamicsConfig(**defaults)


def test_dynamics_trains_and_freezes_codec(tmp_path):
    ckpt = _trained_codec(tmp_path)
    before = file_sha256(ckpt)
    sched = DynamicsSchedule(steps=4, batch_size=2, log_interval=1)
    model, summary = train_dynamics(clips(3), ckpt, dyn_cfg(), sched, tmp_path / "dyn")
    assert summary["codec_frozen"] is True
    assert summary["codec_sha256"] == before == file_sha256(ckpt)
    loaded, recorded = load_dynamics(tmp_path / "dyn" / "dynamics.ckpt")
    assert recorded == before


def test_dynamics_refuses_mismatched_vocab(tmp_path):
    ckpt = _trained_codec(tmp_path)
    with pytest.raises(ConfigError, match="32.*64|64.*32"):
        train_dynamics(clips(2), ckpt, dyn_cfg(vocab_size=64),
                       DynamicsSchedule(steps=1, batch_size=1), tmp_path / "dyn")


def test_dynamics_refuses_mismatched_grid(tmp_path):
    ckpt = _trained_codec(tmp_path)
    with pytest.raises(ConfigError, match="grid"):
        train_dynamics(clips(2), ckpt, dyn_cfg(grid_h=8, grid_w=8),
                       DynamicsSchedule(steps=1, batch_size=1), tmp_path / "dyn")


def test_dynamics_deterministic(tmp_path):
    ckpt = _trained_codec(tmp_path)
    sched = DynamicsSchedule(steps=4, batch_size=2, seed=3, log_interval=1)
    train_dynamics(clips(3), ckpt, dyn_cfg(), sched, tmp_path / "a")
    train_dynamics(clips(3), ckpt, dyn_cfg(), sched, tmp_path / "b")
    assert (tmp_path / "a/dynamics.ckpt").read_bytes() == (tmp_path / "b/dynamics.ckpt").read_bytes()
    assert (tmp_path / "a/train_log.jsonl").read_bytes() == (tmp_path / "b/train_log.jsonl").read_bytes()


def test_augmented_batches_reencode_with_same_token_count(tmp_path):
    ckpt = _trained_codec(tmp_path)
    shapes = {}
    for m in (0, 2):
        sched = DynamicsSchedule(steps=3, batch_size=2, aug_max_shift=m, log_interval=1)
        out = tmp_path / f"dyn_m{m}"
        model, _ = train_dynamics(clips(3), ckpt, dyn_cfg(), sched, out)
        shapes[m] = model.cfg.frames * model.cfg.tokens_per_frame
    assert shapes[0] == shapes[2]


def test_non_finite_loss_aborts_with_checkpoint(tmp_path):
    ckpt = _trained_codec(tmp_path)
    sched = DynamicsSchedule(steps=5, batch_size=2, lr=float("nan"), log_interval=1)
    with pytest.raises(NumericError, match="last-good"):
        train_dynamics(clips(3), ckpt, dyn_cfg(), sched, tmp_path / "dyn")
    assert (tmp_path / "dyn" / "dynamics.ckpt").exists()
