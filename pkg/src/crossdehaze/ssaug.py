"""Strong-weak self-supervised consistency on the network output.

The weak view is a random crop of the prediction, the strong view is a
Gaussian blur of the weak view, and the loss is their scaled mean squared
difference. The weight follows a cosine decay over the training run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .imgdata import Image, crop
from .nnet import autograd as ag

MIN_CROP = 8


@dataclass(frozen=True)
class AugPolicy:
    crop_fraction: float = 0.75
    blur_radius: int = 2
    blur_sigma: float = 1.0
    reduction: str = "mean"  # "sum" restores the un-normalised squared norm
    detach_strong: bool = False

    def __post_init__(self):
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ValueError("crop_fraction must lie in (0, 1]")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be non-negative")
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")

    def crop_size(self, width, height):
        return _round_half_up(width * self.crop_fraction), _round_half_up(height * self.crop_fraction)


@dataclass(frozen=True)
class DecaySchedule:
    alpha0: float = 0.1
    total_steps: int = 1

    def __post_init__(self):
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be non-negative")
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    w: int
    h: int


def _round_half_up(v):
    return int(math.floor(v + 0.5))


def gaussian_kernel1d(radius, sigma):
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(i * i) / (2.0 * sigma * sigma))
    return k / k.sum()


def draw_crop(rng, width, height, policy):
    cw, ch = policy.crop_size(width, height)
    if cw < MIN_CROP or ch < MIN_CROP:
        raise ValueError(f"crop {cw}x{ch} from {width}x{height} is below the {MIN_CROP}x{MIN_CROP} minimum")
    x = int(rng.integers(0, width - cw + 1))
    y = int(rng.integers(0, height - ch + 1))
    return CropRect(x, y, cw, ch)


def weak_aug(rng, img, policy):
    rect = draw_crop(rng, img.width, img.height, policy)
    return crop(img, rect.x, rect.y, rect.w, rect.h), rect


def _check_blur_fits(h, w, policy):
    width = 2 * policy.blur_radius + 1
    if width > h or width > w:
        raise ValueError(f"blur kernel of width {width} does not fit a {w}x{h} image")


def blur_array(x, policy):
    """Separable Gaussian blur over the last two axes.

    Borders are mirror-padded with the edge sample repeated (numpy's
    "symmetric"). With that extension the blur is a symmetric operator whose
    rows sum to one, so it keeps constant images fixed and preserves the
    image mean exactly.
    """
    h, w = x.shape[-2], x.shape[-1]
    _check_blur_fits(h, w, policy)
    r = policy.blur_radius
    k = gaussian_kernel1d(r, policy.blur_sigma).astype(x.dtype)
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    return kernels.sep_filter_valid(np.pad(x, pad, mode="symmetric"), k, k)


def strong_aug(img, policy):
    return Image.clamped(blur_array(img.data.astype(np.float64), policy))


def internal_loss(i_weak, i_aggr, alpha, reduction="mean"):
    a, b = i_weak.data.astype(np.float64), i_aggr.data.astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"weak {a.shape} and strong {b.shape} views differ in size")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    sq = (a - b) ** 2
    return float(alpha * (sq.mean() if reduction == "mean" else sq.sum()))


def alpha_at(schedule, step):
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    return schedule.alpha0 * 0.5 * (math.cos(math.pi * step / schedule.total_steps) + 1.0)


def blur_node(x, policy):
    r = policy.blur_radius
    _check_blur_fits(x.shape[-2], x.shape[-1], policy)
    k = gaussian_kernel1d(r, policy.blur_sigma)
    return ag.sep_filter(ag.pad_reflect(x, r, r, r, r, mode="symmetric"), k, k)


def internal_term(rng, y_hat, policy, alpha):
    """Record crop -> blur -> weighted squared difference on ``y_hat``'s tape.

    One crop rectangle is drawn per call and shared by every image in the
    batch. Returns ``(loss node, rect)``.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    h, w = y_hat.shape[-2], y_hat.shape[-1]
    rect = draw_crop(rng, w, h, policy)
    weak = y_hat[..., rect.y:rect.y + rect.h, rect.x:rect.x + rect.w]
    strong = blur_node(ag.detach(weak) if policy.detach_strong else weak, policy)
    sq = ag.square(weak - strong)
    reduced = ag.mean(sq) if policy.reduction == "mean" else ag.sum_(sq)
    return reduced * float(alpha), rect
