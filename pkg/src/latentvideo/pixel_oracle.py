"""Tiny count-based autoregressive model over raster-ordered pixel values.

This exists to pin down the raster-order and position-count bookkeeping that
the latent sequence model shares (total positions, conditioning positions,
predicted positions) at a scale where the joint distribution can be fully
enumerated. It handles clips of at most 3x4x4x1 with a small intensity
alphabet and nothing larger.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import CapacityError, ConfigError

MAX_FRAMES = 3
MAX_EXTENT = 4


class PixelOracle:
    """Full-history conditional model with empirical counts.

    Each conditional p(value | history) is the count of the extended prefix
    over the count of the prefix among the fitted sequences, falling back to
    uniform over the alphabet for unseen prefixes (and everywhere when no
    sequences were fitted).
    """

    def __init__(self, levels, conditioning_frames, height, width, frames):
        if frames > MAX_FRAMES or height > MAX_EXTENT or width > MAX_EXTENT:
            raise CapacityError(
                f"oracle limited to {MAX_FRAMES}x{MAX_EXTENT}x{MAX_EXTENT} clips, "
                f"got {frames}x{height}x{width}"
            )
        if not 1 <= conditioning_frames < frames:
            raise ConfigError(
                f"conditioning_frames {conditioning_frames} vs {frames} frames"
            )
        if levels < 2:
            raise ConfigError(f"need at least 2 intensity levels, got {levels}")
        self.levels = levels
        self.conditioning_frames = conditioning_frames
        self.height = height
        self.width = width
        self.frames = frames
        self._prefix_counts: dict[tuple, int] = {}

    @property
    def total_positions(self):
        """All pixel positions in raster order (frame, row, column)."""
        return self.frames * self.height * self.width

    @property
    def conditioning_positions(self):
        return self.conditioning_frames * self.height * self.width

    @property
    def predicted_positions(self):
        return self.total_positions - self.conditioning_positions

    def _flatten(self, clip):
        clip = np.asarray(clip)
        expect = (self.frames, self.height, self.width)
        if clip.shape != expect:
            raise ConfigError(f"clip shape {clip.shape}, expected {expect}")
        flat = clip.reshape(-1).astype(np.int64)
        if flat.min() < 0 or flat.max() >= self.levels:
            raise ConfigError(f"intensities must lie in [0, {self.levels})")
        return tuple(int(v) for v in flat)

    def fit(self, clips):
        for clip in clips:
            seq = self._flatten(clip)
            for i in range(len(seq) + 1):
                prefix = seq[:i]
                self._prefix_counts[prefix] = self._prefix_counts.get(prefix, 0) + 1
        return self

    def conditional(self, history, value):
        """p(value | history); uniform where the prefix was never observed."""
        base = self._prefix_counts.get(tuple(history), 0)
        if base == 0:
            return 1.0 / self.levels
        return self._prefix_counts.get(tuple(history) + (int(value),), 0) / base

    def log_likelihood(self, clip):
        """Sum of conditional log-probs over the predicted positions only."""
        seq = self._flatten(clip)
        start = self.conditioning_positions
        total = 0.0
        for i in range(start, len(seq)):
            p = self.conditional(seq[:i], seq[i])
            if p == 0.0:
                return -math.inf
            total += math.log(p)
        return total

    def enumerate_joint(self, prefix):
        """Probability of every completion of ``prefix``, by chained conditionals.

        Exists so tests can confirm the factorization: the enumerated joint
        of one completion must equal exp of its summed conditionals, and the
        table must sum to one.
        """
        prefix = tuple(int(v) for v in prefix)
        remaining = self.total_positions - len(prefix)
        if remaining < 0:
            raise ConfigError("prefix longer than the clip")
        if self.levels**remaining > 200_000:
            raise CapacityError(
                f"enumeration of {self.levels}^{remaining} completions is too large"
            )
        table = {}

        def walk(seq, prob):
            if len(seq) == self.total_positions:
                table[seq[len(prefix):]] = prob
                return
            for v in range(self.levels):
                walk(seq + (v,), prob * self.conditional(seq, v))

        walk(prefix, 1.0)
        return table
