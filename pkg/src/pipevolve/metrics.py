"""Paired-image objectives and distributional distances between embedding sets."""
from __future__ import annotations

import math
from typing import Union

import numpy as np

from .imagecore import build_pyramid, to_perceptual

DISTS_EPS = 1e-6
HIST_BINS = 16
EMBED_LEVELS = 4
EMBED_DIM = EMBED_LEVELS * 4 * 2 + HIST_BINS


def structure_texture(x_map: np.ndarray, y_map: np.ndarray, eps: float = DISTS_EPS) -> tuple[float, float]:
    """Structure (mean) and texture (covariance) similarity of two feature maps.

    Uses population statistics over every position of the map.
    """
    x = np.asarray(x_map, dtype=np.float64)
    y = np.asarray(y_map, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"feature maps differ in shape: {x.shape} vs {y.shape}")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    var_x, var_y = np.mean(dx * dx), np.mean(dy * dy)
    cov = np.mean(dx * dy)
    s = (2.0 * mx * my + eps) / (mx * mx + my * my + eps)
    t = (2.0 * cov + eps) / (var_x + var_y + eps)
    return float(s), float(t)


def dists(x: np.ndarray, y: np.ndarray, levels: int = 4, eps: float = DISTS_EPS) -> float:
    """Structure/texture distance in [0, 1]; 0 for identical images."""
    if np.shape(x) != np.shape(y):
        raise ValueError(f"image dimensions differ: {np.shape(x)} vs {np.shape(y)}")
    px, py = build_pyramid(x, levels), build_pyramid(y, levels)
    level_scores = []
    for fx, fy in zip(px.levels, py.levels):
        channel_scores = []
        for c in range(fx.shape[2]):
            s, t = structure_texture(fx[..., c], fy[..., c], eps)
            channel_scores.append(0.5 * (s + t))
        level_scores.append(sum(channel_scores) / len(channel_scores))
    similarity = sum(level_scores) / len(level_scores)
    return float(min(1.0, max(0.0, 1.0 - similarity)))


def luminance_histogram(channel: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    idx = np.minimum((np.asarray(channel).ravel() * bins).astype(np.int64), bins - 1)
    counts = np.bincount(np.maximum(idx, 0), minlength=bins).astype(np.float64)
    return counts / counts.sum()


def style_distance(x: np.ndarray, style: np.ndarray, levels: int = 4) -> float:
    """Deterministic style distance in [0, 1]: channel statistics plus luminance histogram.

    Stands in for a learned perceptual model; lower means closer style. The two
    images may differ in size.
    """
    px = to_perceptual(x).reshape(-1, 3)
    py = to_perceptual(style).reshape(-1, 3)
    mu_x, mu_y = px.mean(axis=0), py.mean(axis=0)
    sd_x, sd_y = px.std(axis=0), py.std(axis=0)
    per_channel = np.minimum(np.abs(mu_x - mu_y) + np.abs(sd_x - sd_y), 1.0)
    d_stats = float(per_channel.sum() / 3.0)

    coarse_x = build_pyramid(x, levels)[levels - 1][..., 0]
    coarse_y = build_pyramid(style, levels)[levels - 1][..., 0]
    d_hist = 0.5 * float(np.abs(luminance_histogram(coarse_x) - luminance_histogram(coarse_y)).sum())
    return float(min(1.0, max(0.0, 0.5 * d_stats + 0.5 * d_hist)))


def embed(image: np.ndarray) -> np.ndarray:
    """48-dim descriptor: per-level, per-channel (mean, std) plus a coarse luminance histogram."""
    pyr = build_pyramid(image, EMBED_LEVELS)
    parts = []
    for level in pyr.levels:
        flat = level.reshape(-1, level.shape[2])
        stats = np.stack([flat.mean(axis=0), flat.std(axis=0)], axis=1)
        parts.append(stats.ravel())
    parts.append(luminance_histogram(pyr[EMBED_LEVELS - 1][..., 0]))
    return np.concatenate(parts)


def embed_all(images) -> np.ndarray:
    return np.stack([embed(img) for img in images])


# --------------------------------------------------------------------------
# Distributional metrics
# --------------------------------------------------------------------------

def _as_set(a, min_rows: int, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D (N, D) array")
    if arr.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _frechet_one_way(a: np.ndarray, b: np.ndarray) -> float:
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False, ddof=1))
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)


def frechet_distance(a, b) -> float:
    """Fréchet distance between Gaussian fits of two embedding sets."""
    a = _as_set(a, 2, "first set")
    b = _as_set(b, 2, "second set")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    # the two conjugation orders agree mathematically; averaging makes it exactly symmetric
    value = 0.5 * (_frechet_one_way(a, b) + _frechet_one_way(b, a))
    return max(value, 0.0)


def _sq_dists(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    for start in range(0, a.shape[0], chunk):
        diff = a[start : start + chunk, None, :] - b[None, :, :]
        out[start : start + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def median_bandwidth(a, b) -> float:
    """Median pairwise Euclidean distance over the pooled sets (1.0 if zero)."""
    pooled = np.concatenate([np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)])
    if pooled.ndim == 1:
        pooled = pooled[:, None]
    n = pooled.shape[0]
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, k=1)
    med = float(np.median(np.sqrt(_sq_dists(pooled, pooled)[iu])))
    return med if med > 0 else 1.0


def _kernel_mean(a: np.ndarray, b: np.ndarray, h: float) -> float:
    k = np.exp(-_sq_dists(a, b) / (2.0 * h * h))
    # exactly rounded sum: independent of summation order, so swapping sets is exact
    return math.fsum(k.ravel().tolist()) / k.size


def mmd_rbf(a, b, bandwidth: Union[float, str] = "median") -> float:
    """Biased squared MMD with a Gaussian RBF kernel, clipped at 0."""
    a = _as_set(a, 1, "first set")
    b = _as_set(b, 1, "second set")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    h = resolve_bandwidth(a, b, bandwidth)
    value = _kernel_mean(a, a, h) + _kernel_mean(b, b, h) - 2.0 * _kernel_mean(a, b, h)
    return max(value, 0.0)


def resolve_bandwidth(a, b, bandwidth: Union[float, str] = "median") -> float:
    if bandwidth == "median":
        return median_bandwidth(a, b)
    h = float(bandwidth)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth!r}")
    return h
