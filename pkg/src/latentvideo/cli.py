"""Command-line interface: gen-data, train-codec, train-dynamics, predict, eval, stats.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 checkpoint mismatch.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import tensor as T
from .checkpoint import file_sha256
from .codec import CodecConfig, encode_video
from .config import load_config, section, write_resolved
from .data import SpriteWorldConfig, generate_dataset, load_dataset, read_clip, write_ppm
from .dynamics import DynamicsConfig, nll_loss, predict_video
from .errors import CheckpointMismatchError, ConfigError, LatentVideoError
from .evaluate import EvalReport, best_of_samples, codebook_stats
from .train import (
    DynamicsSchedule,
    TrainSchedule,
    load_codec,
    load_dynamics,
    train_codec,
    train_dynamics,
)


@click.group()
def cli():
    """Latent video prediction toolkit."""


@cli.command("gen-data")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML with a 'data' section; defaults used when omitted.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--n-train", default=64, show_default=True)
@click.option("--n-test", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
def gen_data(config_path, out_dir, n_train, n_test, seed):
    """Generate a synthetic clip dataset plus manifest."""
    tree = load_config(config_path) if config_path else {}
    cfg = SpriteWorldConfig.from_dict(section(tree, "data"))
    manifest = generate_dataset(cfg, n_train, n_test, seed, out_dir)
    write_resolved(
        Path(out_dir) / "resolved_config.yaml",
        {"data": cfg.to_dict(), "n_train": n_train, "n_test": n_test, "seed": seed},
    )
    click.echo(f"wrote {n_train + n_test} clips, manifest {manifest}")


@cli.command("train-codec")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--data", "data_path", type=click.Path(), required=True,
              help="Dataset manifest from gen-data.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--phase1-steps", type=int, default=None)
@click.option("--phase2-steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
def train_codec_cmd(config_path, data_path, out_dir, phase1_steps, phase2_steps, seed):
    """Two-phase codec training on a generated dataset."""
    tree = load_config(config_path) if config_path else {}
    data_cfg, train_clips, test_clips = load_dataset(data_path)
    codec_section = dict(section(tree, "codec"))
    codec_section.setdefault("height", data_cfg.height)
    codec_section.setdefault("width", data_cfg.width)
    codec_section.setdefault("channels", data_cfg.channels)
    cfg = CodecConfig.from_dict(codec_section)
    sched_section = dict(section(tree, "codec_schedule"))
    if phase1_steps is not None:
        sched_section["phase1_steps"] = phase1_steps
    if phase2_steps is not None:
        sched_section["phase2_steps"] = phase2_steps
    if seed is not None:
        sched_section["seed"] = seed
    sched = TrainSchedule.from_dict(sched_section)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(out / "resolved_config.yaml",
                   {"codec": cfg.to_dict(), "codec_schedule": sched.to_dict()})
    _, summary = train_codec(train_clips, test_clips, cfg, sched, out)
    click.echo(json.dumps({k: summary[k] for k in ("steps_run", "phase1_psnr", "final_psnr")},
                          sort_keys=True))


@cli.command("train-dynamics")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--codec", "codec_path", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--layers", type=int, default=None, help="Transformer depth override.")
@click.option("--aug-m", type=int, default=None, help="Translation magnitude override.")
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
def train_dynamics_cmd(config_path, data_path, codec_path, out_dir, layers, aug_m, steps, seed):
    """Train the latent dynamics model against a frozen codec."""
    tree = load_config(config_path) if config_path else {}
    data_cfg, train_clips, _ = load_dataset(data_path)
    codec = load_codec(codec_path)

    dyn_section = dict(section(tree, "dynamics"))
    dyn_section.setdefault("vocab_size", codec.cfg.codebook_size)
    dyn_section.setdefault("grid_h", codec.cfg.grid_h)
    dyn_section.setdefault("grid_w", codec.cfg.grid_w)
    dyn_section.setdefault("frames", data_cfg.frames)
    dyn_section.setdefault("conditioning", data_cfg.conditioning)
    dyn_section.setdefault("action_dim", data_cfg.action_dim)
    if layers is not None:
        dyn_section["layers"] = layers
    dyn_cfg = DynamicsConfig.from_dict(dyn_section)

    sched_section = dict(section(tree, "dynamics_schedule"))
    if aug_m is not None:
        sched_section["aug_max_shift"] = aug_m
    if steps is not None:
        sched_section["steps"] = steps
    if seed is not None:
        sched_section["seed"] = seed
    sched = DynamicsSchedule.from_dict(sched_section)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(out / "resolved_config.yaml",
                   {"dynamics": dyn_cfg.to_dict(), "dynamics_schedule": sched.to_dict()})
    _, summary = train_dynamics(train_clips, codec_path, dyn_cfg, sched, out)
    click.echo(json.dumps(summary, sort_keys=True))


@cli.command("predict")
@click.option("--dynamics", "dynamics_path", type=click.Path(), required=True)
@click.option("--codec", "codec_path", type=click.Path(), required=True)
@click.option("--clip", "clip_path", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--future-steps", default=10, show_default=True)
@click.option("--k", default=10, show_default=True)
@click.option("--temperature", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--samples", default=1, show_default=True)
def predict_cmd(dynamics_path, codec_path, clip_path, out_dir, future_steps, k,
                temperature, seed, samples):
    """Roll out future frames; one directory of pixmaps per sample."""
    model, recorded_hash = load_dynamics(dynamics_path)
    actual_hash = file_sha256(codec_path)
    if recorded_hash != actual_hash:
        raise CheckpointMismatchError(
            f"dynamics checkpoint was trained against codec {recorded_hash[:12]}..., "
            f"given codec hashes to {actual_hash[:12]}..."
        )
    codec = load_codec(codec_path)
    clip = read_clip(clip_path)
    c = model.cfg.conditioning
    if clip.n_frames < c:
        raise ConfigError(f"clip has {clip.n_frames} frames, need at least {c}")
    conditioning = clip.frames[:c]
    actions = clip.actions
    if model.cfg.action_dim and actions is not None and actions.shape[0] < c + future_steps:
        raise ConfigError(
            f"clip provides {actions.shape[0]} actions, rollout needs {c + future_steps}"
        )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(samples):
        rng = np.random.default_rng([seed, i])
        frames = predict_video(conditioning, actions, future_steps, codec, model,
                               k=k, temperature=temperature, rng=rng)
        sample_dir = out / f"sample_{i:03d}"
        sample_dir.mkdir(exist_ok=True)
        np.save(sample_dir / "frames.npy", frames)
        for t, frame in enumerate(frames):
            write_ppm(sample_dir / f"frame_{t:03d}.ppm", frame)
    rollout = {
        "k": k,
        "temperature": temperature,
        "seed": seed,
        "samples": samples,
        "future_steps": future_steps,
        "conditioning": c,
        "codec_sha256": actual_hash,
        "dynamics_sha256": file_sha256(dynamics_path),
        "clip": Path(clip_path).name,
    }
    with open(out / "rollout.json", "w") as fh:
        fh.write(json.dumps(rollout, sort_keys=True, indent=2) + "\n")
    click.echo(f"wrote {samples} rollout(s) of {future_steps} frames to {out}")


@cli.command("eval")
@click.option("--pred", "pred_dirs", type=click.Path(), multiple=True, required=True)
@click.option("--truth", "truth_paths", type=click.Path(), multiple=True, required=True)
@click.option("--out", "report_path", type=click.Path(), required=True)
@click.option("--codec", "codec_path", type=click.Path(), default=None,
              help="Adds codebook stats over the truth clips.")
@click.option("--dynamics", "dynamics_path", type=click.Path(), default=None,
              help="Adds ground-truth nats per token (requires --codec).")
def eval_cmd(pred_dirs, truth_paths, report_path, codec_path, dynamics_path):
    """Score prediction directories against ground-truth clips (best over samples)."""
    if len(pred_dirs) != len(truth_paths):
        raise ConfigError(
            f"{len(pred_dirs)} prediction dirs vs {len(truth_paths)} truth clips"
        )
    report = EvalReport()
    truth_clips = [read_clip(p) for p in truth_paths]
    for pred_dir, truth in zip(pred_dirs, truth_clips):
        pred_dir = Path(pred_dir)
        meta_path = pred_dir / "rollout.json"
        if not meta_path.exists():
            raise ConfigError(f"no rollout.json in {pred_dir}")
        meta = json.loads(meta_path.read_text())
        start = meta["conditioning"]
        horizon = meta["future_steps"]
        if truth.n_frames < start + horizon:
            raise ConfigError(
                f"truth clip has {truth.n_frames} frames, rollout covers "
                f"frames [{start}, {start + horizon})"
            )
        target = truth.frames[start : start + horizon]
        sample_dirs = sorted(pred_dir.glob("sample_*"))
        predictions = [np.load(d / "frames.npy") for d in sample_dirs]
        for pred in predictions:
            if pred.shape != target.shape:
                raise ConfigError(f"prediction {pred.shape} vs truth {target.shape}")
        best_psnr, best_mae = best_of_samples(predictions, target)
        report.per_clip_psnr.append(best_psnr)
        report.per_clip_mae.append(best_mae)
        report.sampler_k = meta["k"]
        report.sampler_temperature = meta["temperature"]
        report.samples_per_clip = len(predictions)
        report.codec_hash = meta["codec_sha256"]
        report.dynamics_hash = meta["dynamics_sha256"]
        report.seed = meta["seed"]

    if codec_path:
        codec = load_codec(codec_path)
        codes = np.concatenate(
            [encode_video(clip.frames, codec).reshape(-1) for clip in truth_clips]
        )
        perplexity, usage = codebook_stats(codes, codec.cfg.codebook_size)
        report.codebook_perplexity = perplexity
        report.codebook_usage = usage
        if dynamics_path:
            model, _ = load_dynamics(dynamics_path)
            nats = []
            for clip in truth_clips:
                tokens = encode_video(clip.frames, codec).reshape(1, -1)
                actions = clip.actions[None] if model.cfg.action_dim else None
                with T.no_grad():
                    logits = model.forward_batch(tokens, actions)
                    loss = nll_loss(
                        logits, tokens, model.cfg.conditioning, model.cfg.tokens_per_frame
                    )
                nats.append(loss.item())
            report.nats_per_token = float(np.mean(nats))
    elif dynamics_path:
        raise ConfigError("--dynamics requires --codec")

    report.finalize().write(report_path)
    click.echo(f"aggregate psnr {report.aggregate_psnr:.2f} dB, "
               f"mae {report.aggregate_mae:.4f} -> {report_path}")


@cli.command("stats")
@click.option("--codec", "codec_path", type=click.Path(), required=True)
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def stats_cmd(codec_path, data_path, out_path):
    """Codebook perplexity and usage over a dataset's encoded clips."""
    codec = load_codec(codec_path)
    _, train_clips, test_clips = load_dataset(data_path)
    codes = np.concatenate(
        [encode_video(c.frames, codec).reshape(-1) for c in train_clips + test_clips]
    )
    perplexity, usage = codebook_stats(codes, codec.cfg.codebook_size)
    payload = {
        "codebook_perplexity": perplexity,
        "codebook_usage": usage,
        "codes_seen": int(codes.size),
        "codec_sha256": file_sha256(codec_path),
    }
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    click.echo(json.dumps(payload, sort_keys=True))


def main(argv=None):
    try:
        cli(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except FileNotFoundError as exc:
        click.echo(f"error: file not found: {exc}", err=True)
        sys.exit(2)
    except LatentVideoError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    return 0


if __name__ == "__main__":
    main()
