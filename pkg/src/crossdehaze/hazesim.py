"""Atmospheric scattering haze synthesis.

``I = J * t + A * (1 - t)`` per channel. In depth mode the transmission is
spatially varying, ``t(x) = clamp(exp(-s * k * d(x)), t_min, 1)``, with the
sampled thickness ``s`` acting as the attenuation coefficient.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .imgdata import Dataset, Image, Pair, gen_scene, smooth_noise

AMBIENT_RANGE = (0.7, 1.0)
TRANSMISSION_RANGE = (0.25, 0.65)
THICKNESS_RANGE = (0.35, 0.75)
DEPTH_SCALE = 3.0
T_MIN = 0.05


@dataclass(frozen=True)
class HazeParams:
    ambient: tuple
    transmission: float
    thickness: float

    def __post_init__(self):
        if len(self.ambient) != 3:
            raise ValueError("ambient light needs three components")
        if not 0.0 <= self.transmission <= 1.0:
            raise ValueError(f"transmission {self.transmission} outside [0, 1]")
        if self.thickness <= 0:
            raise ValueError("thickness must be positive")


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


def sample_haze_params(rng):
    ambient = tuple(float(a) for a in rng.uniform(*AMBIENT_RANGE, size=3))
    t = float(rng.uniform(*TRANSMISSION_RANGE))
    s = float(rng.uniform(*THICKNESS_RANGE))
    return HazeParams(ambient, t, s)


def transmission_map(params, depth, depth_scale=DEPTH_SCALE, t_min=T_MIN):
    return np.clip(np.exp(-params.thickness * depth_scale * depth.values), t_min, 1.0)


def apply_haze(clean, params, depth=None, depth_scale=DEPTH_SCALE, t_min=T_MIN):
    j = clean.data.astype(np.float64)
    a = np.asarray(params.ambient, dtype=np.float64)[:, None, None]
    if depth is None:
        t = params.transmission
    else:
        if (depth.height, depth.width) != (clean.height, clean.width):
            raise ValueError(
                f"depth map {depth.width}x{depth.height} does not match image {clean.width}x{clean.height}"
            )
        t = transmission_map(params, depth, depth_scale, t_min)[None]
    return Image(np.clip(j * t + a * (1.0 - t), 0.0, 1.0))


def gen_depth(rng, width, height):
    if width < 8 or height < 8:
        raise ValueError("depth maps must be at least 8x8")
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    angle = rng.uniform(0.0, 2 * np.pi)
    ramp = np.cos(angle) * xx / (width - 1) + np.sin(angle) * yy / (height - 1)
    field = ramp + 0.35 * smooth_noise(rng, height, width, cells=2)
    lo, hi = field.min(), field.max()
    return DepthMap((field - lo) / (hi - lo))


def _synth_pair(rng, index, width, height, mode, complexity):
    sub = rng.split(f"pair{index}")
    clean = gen_scene(sub.split("scene"), width, height, complexity)
    params = sample_haze_params(sub.split("haze"))
    depth = gen_depth(sub.split("depth"), width, height) if mode == "depth" else None
    return Pair(f"{index:05d}", apply_haze(clean, params, depth), clean, "synthetic"), params


def synth_dataset(rng, n, width, height, mode="constant_t", complexity=6, workers=1, return_params=False):
    """Generate ``n`` (hazy, clean) pairs; each pair draws from its own split stream."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if mode not in ("constant_t", "depth"):
        raise ValueError(f"unknown haze mode {mode!r}")
    job = lambda i: _synth_pair(rng, i, width, height, mode, complexity)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, range(n)))
    else:
        results = [job(i) for i in range(n)]
    ds = Dataset([r[0] for r in results])
    if return_params:
        return ds, [r[1] for r in results]
    return ds
