"""Metrics: PSNR/MAE anchors, best-of-N monotonicity, codebook stats."""

import numpy as np
import pytest

from latentvideo.evaluate import (
    EvalReport,
    best_of_samples,
    codebook_stats,
    mae,
    psnr,
)


def test_identical_prediction_caps_psnr():
    x = np.random.default_rng(0).uniform(-1, 1, (4, 3, 8, 8))
    assert psnr(x, x) == 99.0
    assert mae(x, x) == 0.0


def test_all_gray_prediction_closed_form():
    truth = np.full((1, 1, 4, 4), 0.5, dtype=np.float32)
    pred = np.zeros_like(truth)
    assert mae(pred, truth) == pytest.approx(0.5)
    assert psnr(pred, truth) == pytest.approx(10 * np.log10(4.0 / 0.25))


def test_best_of_n_monotone_in_subsets():
    rng = np.random.default_rng(1)
    truth = rng.uniform(-1, 1, (3, 1, 6, 6))
    samples = [truth + rng.normal(0, s, truth.shape) for s in np.linspace(0.05, 0.5, 8)]
    rng.shuffle(samples)
    best_psnrs, best_maes = [], []
    for n in range(1, len(samples) + 1):
        p, m = best_of_samples(samples[:n], truth)
        best_psnrs.append(p)
        best_maes.append(m)
    assert all(b >= a for a, b in zip(best_psnrs, best_psnrs[1:]))
    assert all(b <= a for a, b in zip(best_maes, best_maes[1:]))


def test_codebook_stats_uniform():
    codes = np.repeat(np.arange(256), 4)
    perplexity, usage = codebook_stats(codes, 256)
    assert perplexity == pytest.approx(256.0)
    assert usage == 1.0


def test_codebook_stats_collapse():
    perplexity, usage = codebook_stats(np.zeros(100, dtype=np.int64), 256)
    assert perplexity == pytest.approx(1.0)
    assert usage == pytest.approx(1 / 256)


def test_codebook_stats_match_brute_force():
    rng = np.random.default_rng(2)
    codes = rng.integers(0, 32, size=1000)
    perplexity, usage = codebook_stats(codes, 32)
    hist = {}
    for c in codes:
        hist[int(c)] = hist.get(int(c), 0) + 1
    entropy = -sum((n / 1000) * np.log(n / 1000) for n in hist.values())
    assert perplexity == pytest.approx(np.exp(entropy))
    assert usage == pytest.approx(len(hist) / 32)


def test_report_aggregates_are_means(tmp_path):
    report = EvalReport(per_clip_psnr=[20.0, 30.0], per_clip_mae=[0.1, 0.3])
    report.finalize()
    assert report.aggregate_psnr == 25.0
    assert report.aggregate_mae == pytest.approx(0.2)
    path = tmp_path / "r.json"
    report.write(path)
    assert path.read_text().startswith("{")
