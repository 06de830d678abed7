"""Weak translation augmentation for dynamics-model training clips.

One integer shift is drawn per clip and applied to every frame, keeping the
motion within the clip intact. Exposed borders take the fill value; actions
and shapes are never touched. The codec is trained on clean frames only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import VideoClip
from .errors import ConfigError


@dataclass
class AugmentConfig:
    max_shift: int = 4
    fill: float = 0.0
    axis_exclusive: bool = False  # shift along a single axis per draw

    def __post_init__(self):
        if self.max_shift < 0:
            raise ConfigError(f"max_shift must be >= 0, got {self.max_shift}")


def shift_frames(frames, dx, dy, fill):
    """out[..., y, x] = frames[..., y - dy, x - dx], fill elsewhere."""
    h, w = frames.shape[-2:]
    out = np.full_like(frames, fill)
    ys_dst = slice(max(0, dy), h - max(0, -dy))
    ys_src = slice(max(0, -dy), h - max(0, dy))
    xs_dst = slice(max(0, dx), w - max(0, -dx))
    xs_src = slice(max(0, -dx), w - max(0, dx))
    out[..., ys_dst, xs_dst] = frames[..., ys_src, xs_src]
    return out


def draw_shift(rng, cfg):
    m = cfg.max_shift
    if cfg.axis_exclusive:
        axis = int(rng.integers(2))
        d = int(rng.integers(-m, m + 1))
        return (d, 0) if axis == 0 else (0, d)
    return int(rng.integers(-m, m + 1)), int(rng.integers(-m, m + 1))


def translate_clip(clip, rng, cfg):
    """Apply one uniformly drawn (dx, dy), |d| <= max_shift, to all frames."""
    h, w = clip.frames.shape[-2:]
    if cfg.max_shift >= min(h, w):
        raise ConfigError(
            f"max_shift {cfg.max_shift} must be smaller than min frame "
            f"extent {min(h, w)}"
        )
    dx, dy = draw_shift(rng, cfg)
    return VideoClip(
        frames=shift_frames(clip.frames, dx, dy, cfg.fill),
        actions=None if clip.actions is None else clip.actions.copy(),
        seed=clip.seed,
        config_hash=clip.config_hash,
    )
