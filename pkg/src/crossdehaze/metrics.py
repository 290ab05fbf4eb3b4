"""Training losses and image-quality metrics (PSNR, SSIM)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .nnet import autograd as ag
from .nnet.autograd import TapeError


def _target_array(y, like):
    if isinstance(y, (list, tuple)):
        arr = np.stack([im.data for im in y])
    else:
        arr = np.asarray(y.data if hasattr(y, "data") else y)
    if arr.shape != like.shape:
        if arr.size != like.size:
            raise ValueError(f"shapes differ: {like.shape} vs {arr.shape}")
        arr = arr.reshape(like.shape)
    return arr.astype(like.dtype, copy=False)


def l1_loss(y_hat, y):
    """Mean absolute error between a tape node and a target image batch."""
    return ag.mean(ag.abs_(y_hat - _target_array(y, y_hat)))


def total_loss(external, internal):
    if external.tape is not None and internal.tape is not None and external.tape is not internal.tape:
        raise TapeError("external and internal losses were recorded on different tapes")
    return external + internal


def mse(a, b):
    da, db = _data(a), _data(b)
    if da.shape != db.shape:
        raise ValueError(f"image shapes differ: {da.shape} vs {db.shape}")
    d = da.astype(np.float64) - db.astype(np.float64)
    return float(np.mean(d * d))


def _data(img):
    return img.data if hasattr(img, "data") else np.asarray(img)


def psnr(a, b, max_value=1.0):
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are equal."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / err)


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    @property
    def c1(self):
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self):
        return (self.k2 * self.dynamic_range) ** 2

    def kernel1d(self):
        r = self.window // 2
        i = np.arange(-r, r + 1, dtype=np.float64)
        k = np.exp(-(i * i) / (2 * self.sigma ** 2))
        return k / k.sum()


DEFAULT_SSIM = SsimParams()


def ssim_map(a, b, params=DEFAULT_SSIM):
    """Per-channel SSIM at every valid window position, shape (3, H-10, W-10)."""
    da = _data(a).astype(np.float64)
    db = _data(b).astype(np.float64)
    if da.shape != db.shape:
        raise ValueError(f"image shapes differ: {da.shape} vs {db.shape}")
    if da.shape[-1] < params.window or da.shape[-2] < params.window:
        raise ValueError(f"images smaller than the {params.window}x{params.window} SSIM window")
    k = params.kernel1d()

    def filt(x):
        return kernels.sep_filter_valid(x, k, k)

    mu_a, mu_b = filt(da), filt(db)
    saa = filt(da * da) - mu_a * mu_a
    sbb = filt(db * db) - mu_b * mu_b
    sab = filt(da * db) - mu_a * mu_b
    c1, c2 = params.c1, params.c2
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))


def ssim(a, b, params=DEFAULT_SSIM):
    return float(np.mean(ssim_map(a, b, params)))


def ssim_naive(a, b, params=DEFAULT_SSIM):
    """Unoptimised per-window SSIM with explicit centred moments (test oracle)."""
    da = _data(a).astype(np.float64)
    db = _data(b).astype(np.float64)
    k = params.kernel1d()
    w2 = np.outer(k, k)
    n = params.window
    c1, c2 = params.c1, params.c2
    vals = []
    for c in range(da.shape[0]):
        for y in range(da.shape[1] - n + 1):
            for x in range(da.shape[2] - n + 1):
                pa = da[c, y:y + n, x:x + n]
                pb = db[c, y:y + n, x:x + n]
                ma = float((w2 * pa).sum())
                mb = float((w2 * pb).sum())
                va = float((w2 * (pa - ma) ** 2).sum())
                vb = float((w2 * (pb - mb) ** 2).sum())
                cov = float((w2 * (pa - ma) * (pb - mb)).sum())
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def format_psnr(value):
    return "inf" if math.isinf(value) else f"{value:.6f}"


__all__ = [
    "SsimParams",
    "format_psnr",
    "l1_loss",
    "mse",
    "psnr",
    "ssim",
    "ssim_naive",
    "total_loss",
]
