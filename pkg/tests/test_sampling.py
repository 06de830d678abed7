"""Top-k sampler: support, frequencies, argmax and unrestricted limits."""

import numpy as np
import pytest
from scipy.stats import chisquare

from latentvideo.errors import ConfigError
from latentvideo.sampling import sample_topk, topk_probabilities


def test_k1_is_argmax():
    rng = np.random.default_rng(0)
    for _ in range(50):
        logits = rng.standard_normal(32)
        assert sample_topk(logits, 1, 1.0, rng) == int(np.argmax(logits))


def test_k_out_of_range():
    with pytest.raises(ConfigError):
        sample_topk(np.zeros(4), 0, 1.0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        sample_topk(np.zeros(4), 5, 1.0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        sample_topk(np.zeros(4), 2, 0.0, np.random.default_rng(0))


def test_boundary_tie_admits_lower_index():
    logits = np.array([1.0, 0.5, 0.5, 0.0])
    top, _ = topk_probabilities(logits, 2)
    assert set(top) == {0, 1}


def test_renormalized_frequencies_two_codes():
    # logits ln4, ln2, 0 with k=2 keep {ln4, ln2} -> probabilities (2/3, 1/3)
    logits = np.array([np.log(4.0), np.log(2.0), 0.0, -1.0])
    rng = np.random.default_rng(123)
    n = 100_000
    draws = np.array([sample_topk(logits, 2, 1.0, rng) for _ in range(n)])
    assert set(np.unique(draws)) <= {0, 1}
    freq0 = (draws == 0).mean()
    assert abs(freq0 - 2.0 / 3.0) < 0.01


def test_support_never_leaves_topk():
    rng = np.random.default_rng(7)
    logits = rng.standard_normal(64)
    top, _ = topk_probabilities(logits, 10)
    draws = {sample_topk(logits, 10, 1.0, rng) for _ in range(20_000)}
    assert draws <= set(top)


def test_full_k_matches_unrestricted_categorical():
    rng = np.random.default_rng(11)
    logits = rng.standard_normal(8)
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    n = 100_000
    draws = np.array([sample_topk(logits, 8, 1.0, rng) for _ in range(n)])
    counts = np.bincount(draws, minlength=8)
    result = chisquare(counts, probs * n)
    assert result.pvalue > 0.01


def test_temperature_to_zero_limit_is_argmax():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal(16)
    for k in (1, 4, 16):
        for _ in range(20):
            assert sample_topk(logits, k, 1e-9, rng) == int(np.argmax(logits))


def test_temperature_flattens_distribution():
    logits = np.array([2.0, 0.0])
    _, sharp = topk_probabilities(logits, 2, temperature=0.5)
    _, flat = topk_probabilities(logits, 2, temperature=5.0)
    assert sharp[0] > flat[0] > 0.5
