"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CDNZ1\\n"
    u32 config_len, config_len bytes of ASCII "key=value\\n" lines
    u32 n_params
    per parameter: u16 name_len, name (utf-8), u8 ndim, ndim x u32 dims,
                   prod(dims) x float32 values
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import DehazeUNet, NetConfig

MAGIC = b"CDNZ1\n"


class CheckpointError(ValueError):
    pass


def _config_block(net, extra):
    items = dict(net.config.to_dict())
    for k, v in (extra or {}).items():
        items[f"x.{k}"] = str(v)
    for k, v in items.items():
        if "\n" in k or "=" in k or "\n" in v:
            raise CheckpointError(f"config entry {k!r} cannot be stored")
    return "".join(f"{k}={v}\n" for k, v in items.items()).encode("ascii")


def save_checkpoint(net, path, extra=None):
    cfg = _config_block(net, extra)
    parts = [MAGIC, struct.pack("<I", len(cfg)), cfg]
    params = list(net.named_parameters())
    parts.append(struct.pack("<I", len(params)))
    for name, p in params:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(p.data.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def _read(buf, pos, n):
    if pos + n > len(buf):
        raise CheckpointError("checkpoint is truncated")
    return buf[pos:pos + n], pos + n


def read_checkpoint(path):
    """Return (config dict, {name: float32 array}) without building a network."""
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    pos = len(MAGIC)
    raw, pos = _read(buf, pos, 4)
    (clen,) = struct.unpack("<I", raw)
    raw, pos = _read(buf, pos, clen)
    config = {}
    for line in raw.decode("ascii").splitlines():
        key, _, value = line.partition("=")
        config[key] = value
    raw, pos = _read(buf, pos, 4)
    (count,) = struct.unpack("<I", raw)
    tensors = {}
    for _ in range(count):
        raw, pos = _read(buf, pos, 2)
        (nlen,) = struct.unpack("<H", raw)
        raw, pos = _read(buf, pos, nlen)
        name = raw.decode("utf-8")
        raw, pos = _read(buf, pos, 1)
        ndim = raw[0]
        raw, pos = _read(buf, pos, 4 * ndim)
        shape = struct.unpack(f"<{ndim}I", raw)
        size = int(np.prod(shape)) if ndim else 1
        raw, pos = _read(buf, pos, 4 * size)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if pos != len(buf):
        raise CheckpointError("trailing bytes after the last parameter record")
    return config, tensors


def load_checkpoint(path, dtype=None):
    config, tensors = read_checkpoint(path)
    net_cfg = NetConfig.from_dict(config)
    net = DehazeUNet(net_cfg)
    params = dict(net.named_parameters())
    if set(params) != set(tensors):
        missing = sorted(set(params) - set(tensors))
        unexpected = sorted(set(tensors) - set(params))
        raise CheckpointError(f"parameter names disagree: missing={missing[:5]} unexpected={unexpected[:5]}")
    for name, p in params.items():
        if p.shape != tensors[name].shape:
            raise CheckpointError(f"{name}: checkpoint shape {tensors[name].shape} != network shape {p.shape}")
        p.data = tensors[name].astype(p.dtype)
    if dtype is not None:
        net.astype(dtype)
    extra = {k[2:]: v for k, v in config.items() if k.startswith("x.")}
    return net, extra
