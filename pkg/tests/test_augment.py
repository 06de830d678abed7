"""Translation augmentation: shift semantics, consistency, invertibility."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentvideo.augment import AugmentConfig, shift_frames, translate_clip
from latentvideo.data import VideoClip
from latentvideo.errors import ConfigError


def make_clip(rng, t=4, c=3, h=16, w=16, with_actions=False):
    frames = rng.uniform(-1, 1, (t, c, h, w)).astype(np.float32)
    actions = rng.standard_normal((t, 2)).astype(np.float32) if with_actions else None
    return VideoClip(frames=frames, actions=actions)


def test_zero_shift_is_identity():
    rng = np.random.default_rng(0)
    clip = make_clip(rng)
    out = translate_clip(clip, np.random.default_rng(1), AugmentConfig(max_shift=0))
    np.testing.assert_array_equal(out.frames, clip.frames)


def test_shift_definition_positive_x():
    rng = np.random.default_rng(2)
    frames = rng.uniform(-1, 1, (2, 1, 8, 8)).astype(np.float32)
    out = shift_frames(frames, dx=3, dy=0, fill=0.0)
    for x in range(3, 8):
        np.testing.assert_array_equal(out[..., :, x], frames[..., :, x - 3])
    assert (out[..., :, :3] == 0.0).all()


def test_shift_too_large_rejected():
    clip = make_clip(np.random.default_rng(0), h=8, w=8)
    with pytest.raises(ConfigError):
        translate_clip(clip, np.random.default_rng(0), AugmentConfig(max_shift=8))


def test_same_shift_applied_to_every_frame():
    # structured pattern: recover each frame's shift by cross-correlation
    t, h, w = 5, 16, 16
    frames = np.zeros((t, 1, h, w), dtype=np.float32)
    frames[:, 0, 8, 8] = 1.0  # single bright pixel per frame
    clip = VideoClip(frames=frames)
    out = translate_clip(clip, np.random.default_rng(7), AugmentConfig(max_shift=4, fill=0.0))
    shifts = []
    for f in range(t):
        y, x = np.unravel_index(np.argmax(out.frames[f, 0]), (h, w))
        shifts.append((x - 8, y - 8))
    assert len(set(shifts)) == 1


def test_round_trip_restores_interior():
    rng = np.random.default_rng(3)
    frames = rng.uniform(-1, 1, (3, 2, 12, 12)).astype(np.float32)
    dx, dy = 3, -2
    there = shift_frames(frames, dx, dy, fill=0.0)
    back = shift_frames(there, -dx, -dy, fill=0.0)
    np.testing.assert_array_equal(
        back[..., 2:12, 0:9], frames[..., 2:12, 0:9]
    )


@settings(max_examples=30, deadline=None)
@given(dx=st.integers(-4, 4), dy=st.integers(-4, 4))
def test_round_trip_interior_property(dx, dy):
    rng = np.random.default_rng(4)
    frames = rng.uniform(-1, 1, (2, 1, 12, 12)).astype(np.float32)
    back = shift_frames(shift_frames(frames, dx, dy, 0.0), -dx, -dy, 0.0)
    ys = slice(abs(dy), 12 - abs(dy))
    xs = slice(abs(dx), 12 - abs(dx))
    np.testing.assert_array_equal(back[..., ys, xs], frames[..., ys, xs])


def test_shape_length_actions_preserved():
    rng = np.random.default_rng(5)
    clip = make_clip(rng, with_actions=True)
    out = translate_clip(clip, np.random.default_rng(6), AugmentConfig(max_shift=4))
    assert out.frames.shape == clip.frames.shape
    np.testing.assert_array_equal(out.actions, clip.actions)


def test_axis_exclusive_mode():
    cfg = AugmentConfig(max_shift=4, axis_exclusive=True)
    rng = np.random.default_rng(8)
    from latentvideo.augment import draw_shift

    for _ in range(50):
        dx, dy = draw_shift(rng, cfg)
        assert dx == 0 or dy == 0


def test_draws_stay_within_bound():
    cfg = AugmentConfig(max_shift=3)
    rng = np.random.default_rng(9)
    from latentvideo.augment import draw_shift

    for _ in range(200):
        dx, dy = draw_shift(rng, cfg)
        assert abs(dx) <= 3 and abs(dy) <= 3
