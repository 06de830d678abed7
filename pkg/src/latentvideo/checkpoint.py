"""Binary checkpoint container shared by the codec and dynamics models.

Layout (all integers little-endian):

    magic        8 bytes, "HARPCODC" for codec, "HARPDYNA" for dynamics
    version      u32 (currently 1)
    config_len   u32
    config       UTF-8 JSON, keys sorted
    n_tensors    u32
    per tensor (names sorted):
        name_len u16, name UTF-8
        ndim     u8, dims u32 each
        dtype    u8 (0 = float32)
        data     raw little-endian bytes

Save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

CODEC_MAGIC = b"HARPCODC"
DYNAMICS_MAGIC = b"HARPDYNA"
VERSION = 1

_DTYPES = {0: np.dtype("<f4")}


def save_checkpoint(path, magic, config, tensors):
    """Write config dict plus name -> ndarray table in canonical order."""
    if len(magic) != 8:
        raise ConfigError(f"magic must be 8 bytes, got {magic!r}")
    blob = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(struct.pack("<B", 0))
            fh.write(arr.tobytes())


def load_checkpoint(path, expect_magic):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != expect_magic:
            raise ConfigError(
                f"{path}: magic {magic!r} does not match expected {expect_magic!r}"
            )
        version, cfg_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        config = json.loads(fh.read(cfg_len).decode())
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            (dtype_code,) = struct.unpack("<B", fh.read(1))
            dtype = _DTYPES.get(dtype_code)
            if dtype is None:
                raise ConfigError(f"{path}: unknown dtype code {dtype_code}")
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(dtype.itemsize * n), dtype=dtype)
            tensors[name] = data.reshape(shape).copy()
    return config, tensors


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def params_sha256(tensors):
    """Content hash over a name -> ndarray table, order-independent."""
    digest = hashlib.sha256()
    for name in sorted(tensors):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    return digest.hexdigest()
