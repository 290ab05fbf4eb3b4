"""Dehaze Block, gated fusion and the 5-stage encoder-decoder."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..imgdata import Image
from ..rng import Rng
from . import autograd as ag
from .autograd import Tensor


class Module:
    def named_parameters(self, prefix=""):
        for name, v in vars(self).items():
            if isinstance(v, Tensor) and v.requires_grad:
                yield prefix + name, v
            elif isinstance(v, Module):
                yield from v.named_parameters(f"{prefix}{name}.")
            elif isinstance(v, list):
                for i, m in enumerate(v):
                    if isinstance(m, Module):
                        yield from m.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


def _param(data, dtype, name=None):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True, name=name)


def kaiming_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return _param(rng.uniform(-bound, bound, size=shape), dtype)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k=3, stride=1, zero=False, dtype=np.float32):
        if zero:
            self.weight = _param(np.zeros((cout, cin, k, k)), dtype)
        else:
            self.weight = kaiming_uniform(rng, (cout, cin, k, k), cin * k * k, dtype)
        self.bias = _param(np.zeros(cout), dtype)
        self.stride = stride

    def __call__(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.stride)


class Linear(Module):
    """Acts on the last axis: ``x @ weight + bias``."""

    def __init__(self, rng, cin, cout, dtype=np.float32):
        self.weight = kaiming_uniform(rng, (cin, cout), cin, dtype)
        self.bias = _param(np.zeros(cout), dtype)

    def __call__(self, x):
        return ag.matmul(x, self.weight) + self.bias


class Norm(Module):
    def __init__(self, dim, dtype=np.float32):
        self.scale = _param(np.ones(dim), dtype)
        self.shift = _param(np.zeros(dim), dtype)

    def __call__(self, x):
        c = x.shape[1]
        return ag.instance_norm(x) * self.scale.reshape(1, c, 1, 1) + self.shift.reshape(1, c, 1, 1)


class WindowAttention(Module):
    def __init__(self, rng, dim, window=4, heads=1, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"{heads} heads do not divide {dim} channels")
        self.dim = dim
        self.window = window
        self.heads = heads
        self.qkv = Linear(rng.split("qkv"), dim, 3 * dim, dtype)
        self.proj = Linear(rng.split("proj"), dim, dim, dtype)
        self.last_attention = None

    def __call__(self, x):
        n, c, h, w = x.shape
        if c != self.dim:
            raise ValueError(f"attention expects {self.dim} channels, got {c}")
        ws = self.window
        ph, pw = (-h) % ws, (-w) % ws
        x = ag.pad_reflect(x, 0, ph, 0, pw)
        hb, wb = (h + ph) // ws, (w + pw) // ws
        t = ws * ws
        tokens = x.reshape(n, c, hb, ws, wb, ws).transpose(0, 2, 4, 3, 5, 1).reshape(n * hb * wb, t, c)
        qkv = self.qkv(tokens)
        d = c // self.heads

        def heads(part):
            return qkv[..., part * c:(part + 1) * c].reshape(-1, t, self.heads, d).transpose(0, 2, 1, 3)

        q, k, v = heads(0), heads(1), heads(2)
        scores = ag.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d))
        attn = ag.softmax(scores, axis=-1)
        self.last_attention = attn.data
        out = ag.matmul(attn, v).transpose(0, 2, 1, 3).reshape(-1, t, c)
        out = self.proj(out)
        out = out.reshape(n, hb, wb, ws, ws, c).transpose(0, 5, 1, 3, 2, 4).reshape(n, c, hb * ws, wb * ws)
        if ph or pw:
            out = out[:, :, :h, :w]
        return out


class DehazeBlock(Module):
    """Pre-norm window attention and pointwise MLP, each with a residual."""

    def __init__(self, rng, dim, window=4, heads=1, mlp_ratio=2, dtype=np.float32):
        self.norm1 = Norm(dim, dtype)
        self.attn = WindowAttention(rng.split("attn"), dim, window, heads, dtype)
        self.norm2 = Norm(dim, dtype)
        self.fc1 = Conv2d(rng.split("fc1"), dim, dim * mlp_ratio, k=1, dtype=dtype)
        self.fc2 = Conv2d(rng.split("fc2"), dim * mlp_ratio, dim, k=1, dtype=dtype)

    def __call__(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(ag.gelu(self.fc1(self.norm2(x))))


class Fusion(Module):
    """x = w1 * proj(f1) + w2 * f2 + f2 with per-channel softmax gates."""

    def __init__(self, rng, f1_dim, dim, dtype=np.float32):
        self.dim = dim
        self.proj = Conv2d(rng.split("proj"), f1_dim, dim, k=1, dtype=dtype)
        hidden = max(dim // 2, 1)
        self.fc1 = Linear(rng.split("fc1"), dim, hidden, dtype)
        self.fc2 = Linear(rng.split("fc2"), hidden, 2 * dim, dtype)
        self.last_weights = None

    def gates(self, f1p, f2):
        pooled = ag.mean(f1p + f2, axis=(2, 3))
        logits = self.fc2(ag.gelu(self.fc1(pooled))).reshape(-1, 2, self.dim)
        return ag.softmax(logits, axis=1)

    def __call__(self, f1, f2):
        if f1.shape[2:] != f2.shape[2:] or f2.shape[1] != self.dim:
            raise ValueError(f"fusion shapes {f1.shape} and {f2.shape} are incompatible")
        f1p = self.proj(f1)
        w = self.gates(f1p, f2)
        self.last_weights = w.data
        n = f2.shape[0]
        w1 = w[:, 0, :].reshape(n, self.dim, 1, 1)
        w2 = w[:, 1, :].reshape(n, self.dim, 1, 1)
        return w1 * f1p + w2 * f2 + f2


@dataclass(frozen=True)
class NetConfig:
    widths: tuple = (8, 16, 32, 16, 8)
    blocks: int = 1
    window: int = 4
    heads: int = 1
    seed: int = 0
    zero_residual: bool = True
    dtype: str = "float32"

    def to_dict(self):
        d = asdict(self)
        d["widths"] = ",".join(str(w) for w in self.widths)
        return {k: str(v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(
            widths=tuple(int(w) for w in str(d["widths"]).split(",")),
            blocks=int(d["blocks"]),
            window=int(d["window"]),
            heads=int(d["heads"]),
            seed=int(d["seed"]),
            zero_residual=str(d["zero_residual"]) in ("True", "true", "1"),
            dtype=str(d["dtype"]),
        )


class DehazeUNet(Module):
    def __init__(self, config=None):
        self.config = cfg = config or NetConfig()
        if len(cfg.widths) != 5:
            raise ValueError("the network has exactly five stages")
        dt = np.dtype(cfg.dtype).type
        rng = Rng(cfg.seed, ("net",))
        w0, w1, w2, w3, w4 = cfg.widths

        def stage(name, dim):
            r = rng.split(name)
            return [DehazeBlock(r.split(i), dim, cfg.window, cfg.heads, dtype=dt) for i in range(cfg.blocks)]

        self.in_conv = Conv2d(rng.split("in"), 3, w0, 3, dtype=dt)
        self.stage0 = stage("s0", w0)
        self.down1 = Conv2d(rng.split("down1"), w0, w1, 3, stride=2, dtype=dt)
        self.stage1 = stage("s1", w1)
        self.down2 = Conv2d(rng.split("down2"), w1, w2, 3, stride=2, dtype=dt)
        self.stage2 = stage("s2", w2)
        self.up1 = Conv2d(rng.split("up1"), w2, w3, 3, dtype=dt)
        self.fuse1 = Fusion(rng.split("fuse1"), w1, w3, dtype=dt)
        self.stage3 = stage("s3", w3)
        self.up2 = Conv2d(rng.split("up2"), w3, w4, 3, dtype=dt)
        self.fuse2 = Fusion(rng.split("fuse2"), w0, w4, dtype=dt)
        self.stage4 = stage("s4", w4)
        self.out_conv = Conv2d(rng.split("out"), w4, 3, 3, zero=cfg.zero_residual, dtype=dt)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def astype(self, dtype):
        """Cast every parameter in place; returns self."""
        dtype = np.dtype(dtype)
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self.config = NetConfig(**{**asdict(self.config), "dtype": dtype.name})
        return self

    def residual(self, x):
        def run(blocks, h):
            for b in blocks:
                h = b(h)
            return h

        s0 = run(self.stage0, self.in_conv(x))
        s1 = run(self.stage1, self.down1(s0))
        h = run(self.stage2, self.down2(s1))
        h = self.fuse1(s1, self.up1(ag.upsample2x(h)))
        h = run(self.stage3, h)
        h = self.fuse2(s0, self.up2(ag.upsample2x(h)))
        h = run(self.stage4, h)
        return self.out_conv(h)

    def __call__(self, x):
        n, c, h, w = x.shape
        if c != 3:
            raise ValueError(f"network input must have 3 channels, got {c}")
        ph, pw = (-h) % 4, (-w) % 4
        r = self.residual(ag.pad_reflect(x, 0, ph, 0, pw))
        if ph or pw:
            r = r[:, :, :h, :w]
        return x + r


def as_batch(hazy, dtype):
    """Images, lists of images, arrays or tensors -> (N, 3, H, W) tensor."""
    if isinstance(hazy, Tensor):
        return hazy
    if isinstance(hazy, Image):
        arr = hazy.data[None]
    elif isinstance(hazy, (list, tuple)):
        arr = np.stack([im.data for im in hazy])
    else:
        arr = np.asarray(hazy)
        if arr.ndim == 3:
            arr = arr[None]
    return Tensor(arr.astype(dtype))


def forward(net, hazy):
    """Run the network; returns the unclamped output node."""
    return net(as_batch(hazy, net.dtype))


def dehaze(net, hazy):
    """Inference on one image with the output clamped to [0, 1]."""
    y = forward(net, hazy)
    return Image.clamped(y.data[0])
