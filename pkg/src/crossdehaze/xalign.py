"""Dataset-level gamma alignment between two hazy-image collections.

One gamma per channel is solved so that the source dataset's channel mean,
raised to ``1/gamma``, lands on the target dataset's channel mean. The same
power law is then applied to every hazy and clean image of the source.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .imgdata import CHANNELS, Dataset, Image, Pair

HIST_BINS = 64
MEAN_EPS = 1e-4


class SingularStatisticsError(ValueError):
    """A channel mean sits at 0 or 1, where the gamma solve is undefined."""

    def __init__(self, channel, value, which):
        self.channel = channel
        self.value = value
        super().__init__(f"{which} mean of channel {channel} is {value:.6g}; gamma is undefined near 0 or 1")


@dataclass(frozen=True)
class GammaTriple:
    r: float
    g: float
    b: float

    def __post_init__(self):
        for v in self.as_tuple():
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"gamma components must be positive and finite, got {self.as_tuple()}")

    def as_tuple(self):
        return (self.r, self.g, self.b)

    def __str__(self):
        return " ".join(f"{c}={v:.6f}" for c, v in zip(CHANNELS, self.as_tuple()))


IDENTITY = GammaTriple(1.0, 1.0, 1.0)


@dataclass(frozen=True)
class ChannelStats:
    means: tuple
    histogram: np.ndarray  # (3, bins) integer counts
    sample_count: int

    @property
    def bins(self):
        return self.histogram.shape[1]

    def frequencies(self):
        return self.histogram / self.histogram.sum(axis=1, keepdims=True)


def dataset_channel_means(images, bins=HIST_BINS):
    """Pixel-weighted channel means over all images, plus a histogram.

    Per-image sums go through ``math.fsum`` so the result does not depend on
    image order or how the list was partitioned.
    """
    images = list(images)
    if not images:
        raise ValueError("cannot compute statistics of an empty image list")
    sums = [[], [], []]
    hist = np.zeros((3, bins), dtype=np.int64)
    count = 0
    for img in images:
        d = img.data.astype(np.float64)
        count += img.width * img.height
        for c in range(3):
            sums[c].append(math.fsum(d[c].ravel()))
            idx = np.minimum((d[c] * bins).astype(np.int64), bins - 1)
            hist[c] += np.bincount(idx.ravel(), minlength=bins)
    means = tuple(math.fsum(s) / count for s in sums)
    return ChannelStats(means, hist, count)


def solve_gamma(source, target, eps=MEAN_EPS):
    gammas = []
    for c, (ms, mt) in enumerate(zip(source.means, target.means)):
        if not eps < ms < 1 - eps:
            raise SingularStatisticsError(CHANNELS[c], ms, "source")
        if not eps < mt < 1 - eps:
            raise SingularStatisticsError(CHANNELS[c], mt, "target")
        gammas.append(math.log(ms) / math.log(mt))
    return GammaTriple(*gammas)


def apply_gamma(img, gamma):
    inv = 1.0 / np.asarray(gamma.as_tuple(), dtype=np.float64)[:, None, None]
    out = np.power(img.data.astype(np.float64), inv)
    return Image(np.clip(out, 0.0, 1.0))


def align_dataset(source, target_stats):
    """Return an aligned copy of ``source`` and the gamma triple used."""
    if len(source) == 0:
        raise ValueError("source dataset is empty")
    gamma = solve_gamma(dataset_channel_means(source.hazy), target_stats)
    pairs = [
        replace(p, hazy=apply_gamma(p.hazy, gamma), clean=apply_gamma(p.clean, gamma), provenance="aligned")
        for p in source
    ]
    meta = dict(source.meta)
    meta.update(gamma_r=f"{gamma.r:.9g}", gamma_g=f"{gamma.g:.9g}", gamma_b=f"{gamma.b:.9g}")
    return Dataset(pairs, meta), gamma


def mean_gaps(a, b):
    return tuple(abs(x - y) for x, y in zip(a.means, b.means))


def channel_histogram_csv(stats_a, stats_b, path):
    if stats_a.bins != stats_b.bins:
        raise ValueError("histograms use different bin counts")
    fa, fb = stats_a.frequencies(), stats_b.frequencies()
    bins = stats_a.bins
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "a_r", "a_g", "a_b", "b_r", "b_g", "b_b"])
        for i in range(bins):
            w.writerow(
                [f"{i / bins:.6f}", f"{(i + 1) / bins:.6f}"]
                + [repr(float(fa[c, i])) for c in range(3)]
                + [repr(float(fb[c, i])) for c in range(3)]
            )
    return path


def shift_colors(ds, gamma):
    """Push a dataset off its natural color distribution (builds auxiliary domains)."""
    return Dataset(
        [Pair(p.id, apply_gamma(p.hazy, gamma), apply_gamma(p.clean, gamma), "external") for p in ds],
        dict(ds.meta),
    )
