"""Top-k categorical decoding over code logits."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def topk_probabilities(logits, k, temperature=1.0):
    """Admitted indices and their renormalized probabilities.

    The k largest logits are kept (stable order, so ties at the boundary
    admit the lower index first), scaled by temperature, and softmaxed.
    k equal to the vocabulary size leaves the distribution untruncated.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    v = logits.shape[0]
    if not 1 <= k <= v:
        raise ConfigError(f"top-k: k={k} outside [1, {v}]")
    if temperature <= 0:
        raise ConfigError(f"top-k: temperature must be positive, got {temperature}")
    order = np.argsort(-logits, kind="stable")
    top = order[:k]
    scaled = logits[top] / temperature
    scaled -= scaled.max()
    probs = np.exp(scaled)
    probs /= probs.sum()
    return top, probs


def sample_topk(logits, k, temperature, rng):
    """Draw one code index from the truncated, renormalized distribution.

    Consumes exactly one uniform draw from ``rng`` regardless of k, which
    keeps rollout streams alignable across different k settings.
    """
    top, probs = topk_probabilities(logits, k, temperature)
    r = rng.random()
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, r, side="right"))
    return int(top[min(idx, k - 1)])
