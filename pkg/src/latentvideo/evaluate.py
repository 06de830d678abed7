"""Prediction quality metrics, codebook health, and evaluation reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError

PSNR_CAP = 99.0
PIXEL_PEAK = 2.0  # pixels live in [-1, 1]


def mae(prediction, truth):
    prediction, truth = np.asarray(prediction), np.asarray(truth)
    if prediction.shape != truth.shape:
        raise ConfigError(f"mae: shapes {prediction.shape} vs {truth.shape}")
    return float(np.mean(np.abs(prediction.astype(np.float64) - truth.astype(np.float64))))


def psnr(prediction, truth):
    prediction, truth = np.asarray(prediction), np.asarray(truth)
    if prediction.shape != truth.shape:
        raise ConfigError(f"psnr: shapes {prediction.shape} vs {truth.shape}")
    mse = float(np.mean((prediction.astype(np.float64) - truth.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(PIXEL_PEAK**2 / mse), PSNR_CAP)


def per_frame_metrics(prediction, truth):
    """(psnr, mae) lists over the frame axis of [T,C,H,W] arrays."""
    return (
        [psnr(p, t) for p, t in zip(prediction, truth)],
        [mae(p, t) for p, t in zip(prediction, truth)],
    )


def best_of_samples(sample_predictions, truth):
    """Best (max PSNR, min MAE) over rollout samples for one ground truth."""
    psnrs = [psnr(s, truth) for s in sample_predictions]
    maes = [mae(s, truth) for s in sample_predictions]
    return max(psnrs), min(maes)


def codebook_stats(codes, codebook_size):
    """(perplexity, usage fraction) of the empirical code histogram."""
    codes = np.asarray(codes).reshape(-1)
    if codes.size == 0:
        raise ConfigError("codebook_stats: no codes")
    counts = np.bincount(codes, minlength=codebook_size).astype(np.float64)
    probs = counts / counts.sum()
    nonzero = probs[probs > 0]
    entropy = float(-(nonzero * np.log(nonzero)).sum())
    return math.exp(entropy), float((counts > 0).mean())


@dataclass
class EvalReport:
    per_clip_psnr: list = field(default_factory=list)
    per_clip_mae: list = field(default_factory=list)
    aggregate_psnr: float = 0.0
    aggregate_mae: float = 0.0
    codebook_perplexity: float | None = None
    codebook_usage: float | None = None
    nats_per_token: float | None = None
    sampler_k: int | None = None
    sampler_temperature: float | None = None
    samples_per_clip: int = 1
    codec_hash: str | None = None
    dynamics_hash: str | None = None
    seed: int | None = None

    def finalize(self):
        if self.per_clip_psnr:
            self.aggregate_psnr = float(np.mean(self.per_clip_psnr))
            self.aggregate_mae = float(np.mean(self.per_clip_mae))
        return self

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())
