"""Deterministic synthetic sprite videos and their on-disk format.

Sprites are axis-aligned colored squares on a black canvas with integer
positions and velocities, so ground-truth futures are exactly computable.
Bounce mode reflects sprites off the walls; action mode displaces sprite 0
(the agent) by a commanded integer 2-vector per step, clamped at the walls.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError

CLIP_MAGIC = b"HARPCLIP"

DEFAULT_PALETTE = (
    (1.0, -0.6, -0.6),
    (-0.6, 1.0, -0.6),
    (-0.6, -0.6, 1.0),
    (1.0, 1.0, -0.6),
    (-0.6, 1.0, 1.0),
    (1.0, -0.6, 1.0),
)


@dataclass
class VideoClip:
    frames: np.ndarray  # [T, C, H, W] float32 in [-1, 1]
    actions: np.ndarray | None = None  # [T, A] float32
    seed: int | None = None
    config_hash: str | None = None

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass
class SpriteWorldConfig:
    height: int = 32
    width: int = 32
    channels: int = 3
    sprite_count: int = 3
    sprite_sizes: tuple = (5, 6, 7)
    palette: tuple = DEFAULT_PALETTE
    physics: str = "bounce"  # "bounce" | "action"
    frames: int = 12
    conditioning: int = 2
    max_speed: int = 2
    max_action: int = 2

    def __post_init__(self):
        self.sprite_sizes = tuple(self.sprite_sizes)
        self.palette = tuple(tuple(c) for c in self.palette)
        if self.physics not in ("bounce", "action"):
            raise ConfigError(f"unknown physics mode {self.physics!r}")
        if max(self.sprite_sizes) > min(self.height, self.width):
            raise ConfigError(
                f"sprite size {max(self.sprite_sizes)} exceeds canvas "
                f"{self.height}x{self.width}"
            )
        if self.sprite_count < 1:
            raise ConfigError("need at least one sprite")
        if not 1 <= self.conditioning < self.frames:
            raise ConfigError(
                f"conditioning {self.conditioning} must be in [1, {self.frames})"
            )

    @property
    def action_dim(self):
        return 2 if self.physics == "action" else 0

    def to_dict(self):
        d = asdict(self)
        d["sprite_sizes"] = list(self.sprite_sizes)
        d["palette"] = [list(c) for c in self.palette]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown sprite config keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _bounce_step(pos, vel, limit):
    """One integer bounce update on a single axis; speed magnitude preserved."""
    pos += vel
    while pos < 0 or pos > limit:
        if pos < 0:
            pos = -pos
        else:
            pos = 2 * limit - pos
        vel = -vel
    return pos, vel


def clamp_step(pos, delta, limit):
    """Wall-clamped integer move; returns the realized new position."""
    return min(max(pos + delta, 0), limit)


def _render(cfg, sprites):
    frame = np.full((cfg.channels, cfg.height, cfg.width), -1.0, dtype=np.float32)
    for x, y, size, color in sprites:
        frame[:, y : y + size, x : x + size] = np.asarray(color, np.float32)[:, None, None]
    return frame


def generate_clip(cfg, seed):
    """Render one clip; bit-reproducible for a given (config, seed) pair."""
    rng = np.random.default_rng(seed)
    sprites = []
    for _ in range(cfg.sprite_count):
        size = int(rng.choice(np.asarray(cfg.sprite_sizes)))
        color = cfg.palette[int(rng.integers(len(cfg.palette)))]
        x = int(rng.integers(0, cfg.width - size + 1))
        y = int(rng.integers(0, cfg.height - size + 1))
        vx = int(rng.integers(-cfg.max_speed, cfg.max_speed + 1))
        vy = int(rng.integers(-cfg.max_speed, cfg.max_speed + 1))
        sprites.append({"x": x, "y": y, "size": size, "color": color, "vx": vx, "vy": vy})

    actions = None
    if cfg.physics == "action":
        actions = rng.integers(
            -cfg.max_action, cfg.max_action + 1, size=(cfg.frames, 2)
        ).astype(np.float32)

    frames = np.empty((cfg.frames, cfg.channels, cfg.height, cfg.width), np.float32)
    for t in range(cfg.frames):
        frames[t] = _render(
            cfg, [(s["x"], s["y"], s["size"], s["color"]) for s in sprites]
        )
        if t == cfg.frames - 1:
            break
        if cfg.physics == "bounce":
            for s in sprites:
                s["x"], s["vx"] = _bounce_step(s["x"], s["vx"], cfg.width - s["size"])
                s["y"], s["vy"] = _bounce_step(s["y"], s["vy"], cfg.height - s["size"])
        else:
            agent = sprites[0]
            agent["x"] = clamp_step(agent["x"], int(actions[t, 0]), cfg.width - agent["size"])
            agent["y"] = clamp_step(agent["y"], int(actions[t, 1]), cfg.height - agent["size"])

    return VideoClip(frames=frames, actions=actions, seed=seed, config_hash=cfg.hash())


def replay_agent_positions(cfg, seed):
    """Agent (x, y) per frame for an action clip, from the same rng draws."""
    clip = generate_clip(cfg, seed)
    rng = np.random.default_rng(seed)
    size = int(rng.choice(np.asarray(cfg.sprite_sizes)))
    _ = rng.integers(len(cfg.palette))
    x = int(rng.integers(0, cfg.width - size + 1))
    y = int(rng.integers(0, cfg.height - size + 1))
    positions = [(x, y)]
    for t in range(cfg.frames - 1):
        x = clamp_step(x, int(clip.actions[t, 0]), cfg.width - size)
        y = clamp_step(y, int(clip.actions[t, 1]), cfg.height - size)
        positions.append((x, y))
    return positions, size


# -- clip container ------------------------------------------------------------


def write_clip(path, clip):
    """Binary clip file: magic, u32 header {T,H,W,C,A}, frames, actions."""
    frames = np.ascontiguousarray(clip.frames, dtype="<f4")
    t, c, h, w = frames.shape
    a = 0 if clip.actions is None else clip.actions.shape[1]
    with open(path, "wb") as fh:
        fh.write(CLIP_MAGIC)
        fh.write(struct.pack("<5I", t, h, w, c, a))
        fh.write(frames.tobytes())
        if a:
            fh.write(np.ascontiguousarray(clip.actions, dtype="<f4").tobytes())


def read_clip(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CLIP_MAGIC:
            raise ConfigError(f"{path}: not a clip file (magic {magic!r})")
        t, h, w, c, a = struct.unpack("<5I", fh.read(20))
        frames = np.frombuffer(fh.read(4 * t * c * h * w), dtype="<f4")
        frames = frames.reshape(t, c, h, w).copy()
        actions = None
        if a:
            actions = np.frombuffer(fh.read(4 * t * a), dtype="<f4").reshape(t, a).copy()
    return VideoClip(frames=frames, actions=actions)


def generate_dataset(cfg, n_train, n_test, master_seed, out_dir):
    """Write train/test clips plus a manifest; seed streams are disjoint.

    Seeds are an interval partition of [base, base + n_train + n_test) with
    base derived from the master seed, so train and test can never collide.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = int(master_seed) * 1_000_000
    records = []
    for split, count, offset in (("train", n_train, 0), ("test", n_test, n_train)):
        for i in range(count):
            seed = base + offset + i
            clip = generate_clip(cfg, seed)
            name = f"{split}_{i:05d}.clip"
            write_clip(out / name, clip)
            records.append({"file": name, "seed": seed, "split": split,
                            "config_hash": cfg.hash()})
    manifest = out / "manifest.jsonl"
    with open(manifest, "w") as fh:
        head = {"kind": "config", "master_seed": int(master_seed),
                "n_train": n_train, "n_test": n_test, "config": cfg.to_dict()}
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def load_dataset(manifest_path):
    """Clips and config back from a manifest; returns (cfg, train, test)."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ConfigError(f"manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    head = lines[0]
    if head.get("kind") != "config":
        raise ConfigError(f"{manifest_path}: first record must be the config")
    cfg = SpriteWorldConfig.from_dict(head["config"])
    train, test = [], []
    for rec in lines[1:]:
        clip = read_clip(manifest_path.parent / rec["file"])
        clip.seed = rec["seed"]
        clip.config_hash = rec["config_hash"]
        (train if rec["split"] == "train" else test).append(clip)
    return cfg, train, test


# -- frame export ----------------------------------------------------------------


def frame_to_bytes(frame):
    """[-1, 1] float frame to row-major uint8 bytes."""
    arr = np.clip((np.asarray(frame) + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(arr).astype(np.uint8)


def write_ppm(path, frame):
    """Portable pixmap (P6) for 3-channel frames, P5 for single-channel."""
    c, h, w = frame.shape
    data = frame_to_bytes(frame)
    with open(path, "wb") as fh:
        if c == 3:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(data.transpose(1, 2, 0).tobytes())
        elif c == 1:
            fh.write(f"P5\n{w} {h}\n255\n".encode())
            fh.write(data[0].tobytes())
        else:
            raise ConfigError(f"cannot export {c}-channel frame as pixmap")
