"""Image and mask arrays, PPM/PGM I/O, colour conversion and the feature pyramid.

Images are float64 arrays of shape (H, W, 3) with values in [0, 1]. Masks are
integer arrays of shape (H, W) holding class ids. Both are returned read-only
so they can be shared between workers.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PYRAMID_CHANNELS = ("luminance", "chroma_rg", "chroma_yb", "gradient")
PYRAMID_SIGMA = 1.0


class ImageFormatError(ValueError):
    """Base class for unreadable image or mask files."""


class MalformedHeaderError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class UnsupportedMaxValueError(ImageFormatError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def as_image(data) -> np.ndarray:
    """Validate ``data`` as an image and return a read-only float64 copy."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return _frozen(arr)


def as_mask(data) -> np.ndarray:
    arr = np.array(data)
    if arr.ndim != 2:
        raise ValueError(f"mask must have shape (H, W), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("mask class ids must be integers")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("mask class ids must be >= 0")
    return _frozen(arr)


def quantize(image: np.ndarray) -> np.ndarray:
    """Map [0, 1] intensities to bytes with round-half-away-from-zero."""
    # values are non-negative, so floor(x + 0.5) rounds ties away from zero
    return np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


# --------------------------------------------------------------------------
# PNM parsing
# --------------------------------------------------------------------------

def _parse_pnm(raw: bytes, magic: bytes, channels: int, path) -> np.ndarray:
    if len(raw) < 2 or raw[:2] != magic:
        found = raw[:2].decode("latin-1", "replace") if raw else "<empty>"
        raise MalformedHeaderError(f"{path}: expected magic {magic.decode()}, found {found!r}")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        # whitespace and comments are allowed between header fields
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            if end < 0:
                raise MalformedHeaderError(f"{path}: unterminated comment in header")
            pos = end + 1
            continue
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise MalformedHeaderError(f"{path}: expected a number in header at byte {start}")
        fields.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise MalformedHeaderError(f"{path}: missing whitespace after header")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"{path}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxValueError(f"{path}: max value {maxval} unsupported (need 255)")
    expected = width * height * channels
    payload = raw[pos : pos + expected]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, channels)


def read_image(path) -> np.ndarray:
    """Read an 8-bit binary PPM (P6). Intensities are exactly byte/255."""
    raw = Path(path).read_bytes()
    data = _parse_pnm(raw, b"P6", 3, path)
    return _frozen(data.astype(np.float64) / 255.0)


def write_image(image: np.ndarray, path) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {img.shape}")
    height, width = img.shape[:2]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + quantize(img).tobytes())


def read_mask(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) whose gray values are class ids."""
    raw = Path(path).read_bytes()
    data = _parse_pnm(raw, b"P5", 1, path)
    return _frozen(data.astype(np.int64))


def write_mask(mask: np.ndarray, path) -> None:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"mask must have shape (H, W), got {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError("mask class ids must fit in one byte for P5 output")
    height, width = arr.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.astype(np.uint8).tobytes())


def is_image_file(path) -> bool:
    return os.path.splitext(str(path))[1].lower() in (".ppm", ".pnm")


# --------------------------------------------------------------------------
# Colour space
# --------------------------------------------------------------------------

def to_perceptual(image: np.ndarray, clamp: bool = True) -> np.ndarray:
    """RGB -> (luminance, red-green chroma, yellow-blue chroma)."""
    img = np.asarray(image, dtype=np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    out = np.empty_like(img)
    out[..., 0] = 0.299 * r + 0.587 * g + 0.114 * b
    out[..., 1] = (r - g + 1.0) / 2.0
    out[..., 2] = (0.5 * r + 0.5 * g - b + 1.0) / 2.0
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def from_perceptual(perc: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Exact algebraic inverse of :func:`to_perceptual` (before clamping)."""
    p = np.asarray(perc, dtype=np.float64)
    y = p[..., 0]
    rg = 2.0 * p[..., 1] - 1.0  # R - G
    yb = 2.0 * p[..., 2] - 1.0  # (R + G)/2 - B
    g = y - 0.356 * rg + 0.114 * yb
    out = np.empty_like(p)
    out[..., 0] = g + rg
    out[..., 1] = g
    out[..., 2] = g + 0.5 * rg - yb
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def luminance(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


# --------------------------------------------------------------------------
# Filtering
# --------------------------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian truncated at 3 sigma."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="edge")
    n = arr.shape[axis]
    # accumulate deviations from the centre tap so constant regions stay exactly constant
    out = np.array(arr, dtype=np.float64)
    for i, w in enumerate(kernel):
        if i != radius:
            out += w * (np.take(padded, np.arange(i, i + n), axis=axis) - arr)
    return out


def gaussian_blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the two spatial axes, replicate edges."""
    kernel = gaussian_kernel(sigma)
    out = _convolve_axis(np.asarray(arr, dtype=np.float64), kernel, 0)
    return _convolve_axis(out, kernel, 1)


def gradient_magnitude(channel: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude (half-difference), clamped to [0, 1]."""
    padded = np.pad(np.asarray(channel, dtype=np.float64), 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return np.clip(np.hypot(gx, gy), 0.0, 1.0)


def resize(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img

    def coords(n_out, n_in):
        c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        c = np.clip(c, 0, n_in - 1)
        lo = np.floor(c).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, c - lo

    y0, y1, fy = coords(height, h)
    x0, x1, fx = coords(width, w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return np.clip(top * (1 - fy) + bottom * fy, 0.0, 1.0)


def resize_mask(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    m = np.asarray(mask)
    h, w = m.shape
    rows = np.minimum((np.arange(height) * h) // height, h - 1)
    cols = np.minimum((np.arange(width) * w) // width, w - 1)
    return m[rows][:, cols]


# --------------------------------------------------------------------------
# Feature pyramid
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeaturePyramid:
    """Per-level (H_l, W_l, 4) feature maps; level 0 is full resolution."""

    levels: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, index: int) -> np.ndarray:
        return self.levels[index]

    @property
    def sizes(self) -> list[tuple[int, int]]:
        return [lvl.shape[:2] for lvl in self.levels]


def _downsample(features: np.ndarray) -> np.ndarray:
    h, w = features.shape[:2]
    nh, nw = max(1, h // 2), max(1, w // 2)
    blurred = gaussian_blur(features, PYRAMID_SIGMA)
    return blurred[0 : 2 * nh : 2, 0 : 2 * nw : 2]


def build_pyramid(image: np.ndarray, levels: int = 4) -> FeaturePyramid:
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    perc = to_perceptual(image)
    base = np.empty(perc.shape[:2] + (4,), dtype=np.float64)
    base[..., :3] = perc
    base[..., 3] = gradient_magnitude(perc[..., 0])
    maps = [base]
    for _ in range(levels - 1):
        maps.append(np.clip(_downsample(maps[-1]), 0.0, 1.0))
    return FeaturePyramid(tuple(_frozen(m) for m in maps))
