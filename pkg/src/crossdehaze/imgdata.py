"""Images, datasets, file I/O and procedural clean scenes.

Pixels live in float32 ``[0, 1]`` everywhere; the 8-bit convention only
appears when reading or writing PPM files.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHANNELS = ("R", "G", "B")
PROVENANCES = ("synthetic", "aligned", "external")
IMGF_MAGIC = b"IMGF1\n"


class ImageFormatError(ValueError):
    """Base class for unreadable image files."""


class MalformedHeaderError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class ChannelCountError(ImageFormatError):
    pass


class Image:
    """Immutable planar RGB raster, shape ``(3, height, width)``, float32 in [0, 1]."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32, copy=True)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"expected a (3, H, W) array, got shape {arr.shape}")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image samples must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image samples must lie in [0, 1]; use Image.clamped for raw values")
        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def clamped(cls, data):
        """Build an image from unconstrained values by clamping into [0, 1]."""
        arr = np.asarray(data, dtype=np.float64)
        arr = np.nan_to_num(arr, nan=0.0, posinf=1.0, neginf=0.0)
        return cls(np.clip(arr, 0.0, 1.0))

    @classmethod
    def constant(cls, width, height, value):
        v = np.broadcast_to(np.asarray(value, dtype=np.float32).reshape(-1, 1, 1), (3, height, width))
        return cls(v)

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


# ---------------------------------------------------------------------------
# file I/O


def _read_ppm_header(buf):
    """Return (width, height, maxval, payload offset) of a P6 header."""
    tokens = []
    pos = 2
    n = len(buf)
    while len(tokens) < 3:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeaderError("PPM header ended early")
        tokens.append(buf[start:pos])
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise MalformedHeaderError("PPM header must end in a single whitespace byte")
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise MalformedHeaderError(f"non-numeric PPM header field: {exc}") from None
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad PPM dimensions {width}x{height}")
    if maxval != 255:
        raise MalformedHeaderError(f"only 8-bit PPM (maxval 255) is supported, got {maxval}")
    return width, height, maxval, pos + 1


def _load_ppm(buf):
    width, height, _, off = _read_ppm_header(buf)
    need = width * height * 3
    payload = buf[off:]
    if len(payload) < need:
        raise TruncatedPayloadError(f"PPM payload has {len(payload)} bytes, expected {need}")
    px = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width, 3)
    return Image(px.transpose(2, 0, 1).astype(np.float64) / 255.0)


def _load_imgf(buf):
    rest = buf[len(IMGF_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise MalformedHeaderError("IMGF dimension line missing")
    fields = rest[:nl].split()
    if len(fields) != 2:
        raise MalformedHeaderError("IMGF dimension line must be 'width height'")
    try:
        width, height = int(fields[0]), int(fields[1])
    except ValueError:
        raise MalformedHeaderError("non-numeric IMGF dimensions") from None
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad IMGF dimensions {width}x{height}")
    payload = rest[nl + 1:]
    plane = width * height * 4
    need = plane * 3
    if len(payload) < need:
        if len(payload) in (plane, plane * 2):
            raise ChannelCountError(f"IMGF payload holds {len(payload) // plane} channel(s), expected 3")
        raise TruncatedPayloadError(f"IMGF payload has {len(payload)} bytes, expected {need}")
    if len(payload) > need:
        if len(payload) % plane == 0:
            raise ChannelCountError(f"IMGF payload holds {len(payload) // plane} channels, expected 3")
        raise MalformedHeaderError("IMGF payload longer than the header declares")
    arr = np.frombuffer(payload, dtype="<f4").reshape(3, height, width)
    return Image(arr)


def load_image(path):
    """Read a PPM (P6, 8-bit) or IMGF file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    buf = path.read_bytes()
    if buf.startswith(IMGF_MAGIC):
        return _load_imgf(buf)
    if buf[:2] == b"P6":
        return _load_ppm(buf)
    if buf[:2] in (b"P5", b"P2", b"P1", b"P4"):
        raise ChannelCountError(f"{buf[:2].decode()} files are not 3-channel")
    raise MalformedHeaderError(f"unrecognised image magic in {path}")


def quantize_8bit(data):
    """round(v*255) with halves away from zero, clamped to [0, 255]."""
    scaled = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def save_image(img, path, format=None):
    path = Path(path)
    if format is None:
        format = "ppm" if path.suffix.lower() == ".ppm" else "imgf"
    if format == "ppm":
        body = quantize_8bit(img.data).transpose(1, 2, 0).tobytes()
        blob = f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + body
    elif format == "imgf":
        blob = IMGF_MAGIC + f"{img.width} {img.height}\n".encode("ascii") + img.data.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown image format {format!r}")
    path.write_bytes(blob)


# ---------------------------------------------------------------------------
# pixel helpers


def channel_index(channel):
    if isinstance(channel, str):
        try:
            return CHANNELS.index(channel.upper())
        except ValueError:
            raise ValueError(f"channel must be one of {CHANNELS}, got {channel!r}") from None
    c = int(channel)
    if c not in (0, 1, 2):
        raise ValueError(f"channel index out of range: {c}")
    return c


def channel_mean(img, channel):
    return float(np.mean(img.data[channel_index(channel)], dtype=np.float64))


def crop(img, x, y, w, h):
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise ValueError(f"crop rectangle ({x}, {y}, {w}, {h}) outside {img.width}x{img.height} image")
    return Image(img.data[:, y:y + h, x:x + w])


def smooth_noise(rng, height, width, cells=4):
    """Bilinearly interpolated random lattice in [-1, 1], shape (height, width)."""
    grid = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
    gy = np.linspace(0.0, cells, height)
    gx = np.linspace(0.0, cells, width)
    y0 = np.minimum(gy.astype(int), cells - 1)
    x0 = np.minimum(gx.astype(int), cells - 1)
    fy = (gy - y0)[:, None]
    fx = (gx - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx + g10 * fy * (1 - fx) + g11 * fy * fx)


def gen_scene(rng, width, height, complexity=6):
    """Procedural clean scene: gradient, rectangles and disks, low-frequency noise."""
    if width < 8 or height < 8:
        raise ValueError("scenes must be at least 8x8")
    if complexity < 0:
        raise ValueError("complexity must be non-negative")
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    c0 = rng.uniform(0.05, 0.95, size=3)
    c1 = rng.uniform(0.05, 0.95, size=3)
    angle = rng.uniform(0.0, 2 * np.pi)
    proj = np.cos(angle) * xx / max(width - 1, 1) + np.sin(angle) * yy / max(height - 1, 1)
    ramp = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-12)
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp

    for _ in range(complexity):
        color = rng.uniform(0.0, 1.0, size=3)
        if rng.uniform() < 0.5:
            w = int(rng.integers(2, max(3, width // 2) + 1))
            h = int(rng.integers(2, max(3, height // 2) + 1))
            x0 = int(rng.integers(0, width - w + 1))
            y0 = int(rng.integers(0, height - h + 1))
            img[:, y0:y0 + h, x0:x0 + w] = color[:, None, None]
        else:
            cx = rng.uniform(0, width)
            cy = rng.uniform(0, height)
            r = rng.uniform(1.5, max(2.0, min(width, height) / 3))
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
            img[:, mask] = color[:, None]

    for c in range(3):
        img[c] += 0.06 * smooth_noise(rng, height, width, cells=3)
    return Image(np.clip(img, 0.0, 1.0))


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Pair:
    id: str
    hazy: Image
    clean: Image
    provenance: str = "synthetic"

    def __post_init__(self):
        if self.hazy.shape != self.clean.shape:
            raise ValueError(f"pair {self.id}: hazy {self.hazy.shape} and clean {self.clean.shape} differ")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass
class Dataset:
    pairs: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [p.id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise ValueError("pair identifiers must be unique within a dataset")

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def __iter__(self):
        return iter(self.pairs)

    @property
    def hazy(self):
        return [p.hazy for p in self.pairs]

    @property
    def clean(self):
        return [p.clean for p in self.pairs]

    def subset(self, indices):
        return Dataset([self.pairs[i] for i in indices], dict(self.meta))


MANIFEST_COLUMNS = ("id", "hazy_path", "clean_path", "provenance")


def save_dataset(ds, directory, format="imgf"):
    """Write images plus ``manifest.csv``; ``ds.meta`` keys become extra columns."""
    directory = Path(directory)
    ext = "ppm" if format == "ppm" else "imgf"
    (directory / "hazy").mkdir(parents=True, exist_ok=True)
    (directory / "clean").mkdir(parents=True, exist_ok=True)
    extra = sorted(ds.meta)
    manifest = directory / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(MANIFEST_COLUMNS) + extra)
        for p in ds.pairs:
            hp = f"hazy/{p.id}.{ext}"
            cp = f"clean/{p.id}.{ext}"
            save_image(p.hazy, directory / hp, format)
            save_image(p.clean, directory / cp, format)
            writer.writerow([p.id, hp, cp, p.provenance] + [ds.meta[k] for k in extra])
    return manifest


def load_dataset(directory):
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.is_file():
        raise FileNotFoundError(f"no manifest.csv in {directory}")
    pairs = []
    meta = {}
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"manifest missing columns: {sorted(missing)}")
        for row in reader:
            pairs.append(
                Pair(
                    row["id"],
                    load_image(directory / row["hazy_path"]),
                    load_image(directory / row["clean_path"]),
                    row["provenance"],
                )
            )
            for k, v in row.items():
                if k not in MANIFEST_COLUMNS:
                    meta[k] = v
    if not pairs:
        raise ValueError(f"dataset {directory} is empty")
    return Dataset(pairs, meta)


def is_dataset_dir(path):
    return os.path.isfile(os.path.join(path, "manifest.csv"))

