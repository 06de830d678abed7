"""CLI behavior on tiny runs: artifacts, exit codes, refusal paths."""

import json
import shutil

import numpy as np
import pytest
import yaml

from latentvideo.cli import main


def run_cli(args):
    """Invoke the CLI in-process; returns the exit code."""
    try:
        main(list(args))
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    return 0


TINY_TREE = {
    "data": {
        "height": 16, "width": 16, "frames": 4, "conditioning": 1,
        "sprite_count": 2, "sprite_sizes": [4, 5], "physics": "action",
    },
    "codec": {
        "downsample": 4, "widths": [8, 12], "latent_dim": 4, "codebook_size": 32,
    },
    "codec_schedule": {
        "phase1_steps": 4, "phase2_steps": 2, "batch_size": 2,
        "eval_interval": 10, "log_interval": 1,
    },
    "dynamics": {"layers": 1, "heads": 2, "model_dim": 16, "context_tokens": 256},
    "dynamics_schedule": {"steps": 3, "batch_size": 2, "log_interval": 1},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny end-to-end CLI pipeline shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(TINY_TREE))
    data = root / "data"
    assert run_cli(["gen-data", "--config", cfg_path, "--out", data,
                    "--n-train", "3", "--n-test", "2", "--seed", "1"]) == 0
    codec_dir = root / "codec"
    assert run_cli(["train-codec", "--config", cfg_path, "--data", data / "manifest.jsonl",
                    "--out", codec_dir]) == 0
    dyn_dir = root / "dyn"
    assert run_cli(["train-dynamics", "--config", cfg_path, "--data", data / "manifest.jsonl",
                    "--codec", codec_dir / "codec.ckpt", "--out", dyn_dir]) == 0
    pred_dir = root / "pred"
    assert run_cli(["predict", "--dynamics", dyn_dir / "dynamics.ckpt",
                    "--codec", codec_dir / "codec.ckpt",
                    "--clip", data / "test_00000.clip", "--out", pred_dir,
                    "--future-steps", "3", "--k", "5", "--seed", "2",
                    "--samples", "2"]) == 0
    return root, cfg_path, data, codec_dir, dyn_dir, pred_dir


def test_gen_data_artifacts(workspace):
    root, _, data, *_ = workspace
    assert (data / "manifest.jsonl").exists()
    assert len(list(data.glob("*.clip"))) == 5
    assert (data / "resolved_config.yaml").exists()


def test_train_codec_artifacts(workspace):
    *_, codec_dir, _, _ = workspace
    assert (codec_dir / "codec.ckpt").exists()
    assert (codec_dir / "train_log.jsonl").exists()
    assert (codec_dir / "resolved_config.yaml").exists()


def test_predict_artifacts(workspace):
    *_, pred_dir = workspace
    samples = sorted(pred_dir.glob("sample_*"))
    assert len(samples) == 2
    for s in samples:
        assert (s / "frames.npy").exists()
        assert len(list(s.glob("frame_*.ppm"))) == 3
    meta = json.loads((pred_dir / "rollout.json").read_text())
    assert meta["k"] == 5 and meta["future_steps"] == 3


def test_eval_writes_report(workspace):
    root, _, data, codec_dir, dyn_dir, pred_dir = workspace
    report_path = root / "report.json"
    code = run_cli(["eval", "--pred", pred_dir, "--truth", data / "test_00000.clip",
                    "--out", report_path, "--codec", codec_dir / "codec.ckpt",
                    "--dynamics", dyn_dir / "dynamics.ckpt"])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["samples_per_clip"] == 2
    assert report["sampler_k"] == 5
    assert report["codebook_perplexity"] is not None
    assert report["nats_per_token"] is not None
    assert len(report["per_clip_mae"]) == 1


def test_stats_reports_codebook_health(workspace, tmp_path):
    root, _, data, codec_dir, *_ = workspace
    out = tmp_path / "stats.json"
    code = run_cli(["stats", "--codec", codec_dir / "codec.ckpt",
                    "--data", data / "manifest.jsonl", "--out", out])
    assert code == 0
    payload = json.loads(out.read_text())
    assert 1.0 <= payload["codebook_perplexity"] <= 32.0
    assert 0.0 < payload["codebook_usage"] <= 1.0


def test_missing_config_path_exits_2(tmp_path):
    assert run_cli(["gen-data", "--config", tmp_path / "nope.yaml",
                    "--out", tmp_path / "d"]) == 2


def test_missing_dataset_exits_2(workspace, tmp_path):
    _, cfg_path, *_ = workspace
    assert run_cli(["train-codec", "--config", cfg_path,
                    "--data", tmp_path / "missing.jsonl",
                    "--out", tmp_path / "out"]) == 2


def test_checkpoint_mismatch_exits_4_and_writes_nothing(workspace, tmp_path):
    root, cfg_path, data, codec_dir, dyn_dir, _ = workspace
    # retrain the codec with a different seed: same shape, different bytes
    other_codec = tmp_path / "codec2"
    assert run_cli(["train-codec", "--config", cfg_path, "--data", data / "manifest.jsonl",
                    "--out", other_codec, "--seed", "9"]) == 0
    out = tmp_path / "pred"
    code = run_cli(["predict", "--dynamics", dyn_dir / "dynamics.ckpt",
                    "--codec", other_codec / "codec.ckpt",
                    "--clip", data / "test_00000.clip", "--out", out,
                    "--future-steps", "2"])
    assert code == 4
    assert not list(out.glob("sample_*")) if out.exists() else True


def test_context_overflow_exits_2(workspace, tmp_path):
    root, cfg_path, data, codec_dir, dyn_dir, _ = workspace
    code = run_cli(["predict", "--dynamics", dyn_dir / "dynamics.ckpt",
                    "--codec", codec_dir / "codec.ckpt",
                    "--clip", data / "test_00000.clip", "--out", tmp_path / "p",
                    "--future-steps", "500"])
    assert code == 2


def test_eval_dynamics_requires_codec_exits_2(workspace, tmp_path):
    root, cfg_path, data, codec_dir, dyn_dir, pred_dir = workspace
    assert run_cli(["eval", "--pred", pred_dir, "--truth", data / "test_00000.clip",
                    "--out", tmp_path / "r.json", "--dynamics", dyn_dir / "dynamics.ckpt"]) == 2


def test_eval_pred_truth_count_mismatch_exits_2(workspace, tmp_path):
    root, cfg_path, data, codec_dir, dyn_dir, pred_dir = workspace
    assert run_cli(["eval", "--pred", pred_dir, "--pred", pred_dir,
                    "--truth", data / "test_00000.clip",
                    "--out", tmp_path / "r.json"]) == 2


def test_deterministic_predict_outputs(workspace, tmp_path):
    root, cfg_path, data, codec_dir, dyn_dir, _ = workspace
    outs = []
    for name in ("p1", "p2"):
        out = tmp_path / name
        assert run_cli(["predict", "--dynamics", dyn_dir / "dynamics.ckpt",
                        "--codec", codec_dir / "codec.ckpt",
                        "--clip", data / "test_00001.clip", "--out", out,
                        "--future-steps", "2", "--k", "1", "--seed", "5"]) == 0
        outs.append((out / "sample_000" / "frames.npy").read_bytes())
    assert outs[0] == outs[1]
