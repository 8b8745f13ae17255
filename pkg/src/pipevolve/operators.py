"""Image operators that make up a pipeline, plus the external plugin bridge."""
from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .imagecore import (
    ImageFormatError,
    from_perceptual,
    gaussian_blur,
    luminance,
    quantize,
    read_image,
    to_perceptual,
    write_image,
    write_mask,
)

STOP = "stop"
CLASSICAL = ("normalize", "blur", "brighten", "darken", "contrast", "sharpen")
STYLE_TRANSFER = ("adain", "cacti")
BUILTIN = CLASSICAL + STYLE_TRANSFER

BLUR_SIGMA = 2.0
BRIGHTEN_FACTOR = 1.5
DARKEN_FACTOR = 0.7
CONTRAST_FACTOR = 1.5
SHARPEN_FACTOR = 2.0
ADAIN_EPS = 1e-6
PLUGIN_TIMEOUT = 120.0
TMPDIR_ENV = "PIPEVOLVE_TMPDIR"
NORMALIZE_REFERENCE = "condition style image"


class OperatorError(RuntimeError):
    """An operator could not transform an image."""


class PluginError(OperatorError):
    def __init__(self, message: str, exit_code: Optional[int] = None):
        super().__init__(message)
        self.exit_code = exit_code


class DimensionMismatchError(OperatorError):
    pass


@dataclass(frozen=True)
class StyleContext:
    style_image: np.ndarray
    style_mask: Optional[np.ndarray] = None
    content_mask: Optional[np.ndarray] = None
    condition_name: str = "default"

    def __post_init__(self):
        if self.style_mask is not None and self.style_mask.shape != self.style_image.shape[:2]:
            raise ValueError(
                f"style mask {self.style_mask.shape} does not match style image "
                f"{self.style_image.shape[:2]}"
            )


@dataclass(frozen=True)
class PluginSpec:
    name: str
    command: tuple[str, ...]
    timeout: float = PLUGIN_TIMEOUT

    @classmethod
    def parse(cls, name: str, command: str, timeout: float = PLUGIN_TIMEOUT) -> "PluginSpec":
        argv = tuple(shlex.split(command))
        if not argv:
            raise ValueError(f"plugin {name!r} has an empty command")
        return cls(name, argv, float(timeout))


@dataclass
class PluginRunner:
    """Runs external operators with at most ``max_procs`` concurrent processes."""

    plugins: Mapping[str, PluginSpec] = field(default_factory=dict)
    max_procs: int = 1

    def __post_init__(self):
        self._slots = threading.BoundedSemaphore(max(1, self.max_procs))

    def __contains__(self, name: str) -> bool:
        return name in self.plugins

    def apply(self, name: str, image: np.ndarray, ctx: StyleContext) -> np.ndarray:
        if name not in self.plugins:
            raise OperatorError(f"no plugin registered for operator {name!r}")
        with self._slots:
            return apply_external(name, image, ctx, self.plugins[name])


def _clamp(arr: np.ndarray) -> np.ndarray:
    return np.clip(arr, 0.0, 1.0)


# --------------------------------------------------------------------------
# Classical operators
# --------------------------------------------------------------------------

def match_histograms(image: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Per-channel 256-bin CDF matching of ``image`` onto ``reference``."""
    ref = np.asarray(reference)
    if ref.size == 0:
        raise OperatorError("normalize: style reference image is empty")
    src_q = quantize(image)
    ref_q = quantize(ref).reshape(-1, 3)
    out = np.empty(src_q.shape, dtype=np.float64)
    for c in range(3):
        src_cdf = np.cumsum(np.bincount(src_q[..., c].ravel(), minlength=256)) / src_q[..., c].size
        ref_cdf = np.cumsum(np.bincount(ref_q[:, c], minlength=256)) / ref_q.shape[0]
        # smallest reference level whose CDF reaches the source CDF
        lut = np.searchsorted(ref_cdf, src_cdf - 1e-12, side="left")
        lut = np.minimum(lut, 255)
        out[..., c] = lut[src_q[..., c]] / 255.0
    return out


def apply_classical(op: str, image: np.ndarray, ctx: Optional[StyleContext] = None) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if op == "normalize":
        if ctx is None:
            raise OperatorError("normalize needs a style reference")
        out = match_histograms(img, ctx.style_image)
    elif op == "blur":
        out = gaussian_blur(img, BLUR_SIGMA)
    elif op == "brighten":
        out = img * BRIGHTEN_FACTOR
    elif op == "darken":
        out = img * DARKEN_FACTOR
    elif op == "contrast":
        pivot = luminance(img).mean()
        out = pivot + CONTRAST_FACTOR * (img - pivot)
    elif op == "sharpen":
        out = img + (SHARPEN_FACTOR - 1.0) * (img - gaussian_blur(img, BLUR_SIGMA))
    else:
        raise ValueError(f"{op!r} is not a classical operator")
    return _clamp(out)


# --------------------------------------------------------------------------
# Statistics alignment
# --------------------------------------------------------------------------

def adain_transfer(content: np.ndarray, style: np.ndarray, eps: float = ADAIN_EPS) -> np.ndarray:
    """Shift each column of ``content`` (N, C) to the mean/std of ``style`` (M, C).

    Standard deviations are population (ddof=0) statistics.
    """
    x = np.asarray(content, dtype=np.float64)
    y = np.asarray(style, dtype=np.float64)
    mu_x, sd_x = x.mean(axis=0), x.std(axis=0)
    mu_y, sd_y = y.mean(axis=0), y.std(axis=0)
    return sd_y * (x - mu_x) / (sd_x + eps) + mu_y


def apply_adain(image: np.ndarray, ctx: StyleContext) -> np.ndarray:
    x = to_perceptual(image)
    y = to_perceptual(ctx.style_image)
    out = adain_transfer(x.reshape(-1, 3), y.reshape(-1, 3)).reshape(x.shape)
    return from_perceptual(out, clamp=True)


def apply_cacti(image: np.ndarray, ctx: StyleContext) -> np.ndarray:
    """Class-wise statistics alignment guided by content and style masks."""
    if ctx.content_mask is None or ctx.style_mask is None:
        raise OperatorError("cacti needs both a content mask and a style mask")
    content_mask = np.asarray(ctx.content_mask)
    if content_mask.shape != image.shape[:2]:
        raise DimensionMismatchError(
            f"cacti: content mask {content_mask.shape} does not match image {image.shape[:2]}"
        )
    x = to_perceptual(image).reshape(-1, 3)
    y = to_perceptual(ctx.style_image).reshape(-1, 3)
    cm = content_mask.ravel()
    sm = np.asarray(ctx.style_mask).ravel()
    out = adain_transfer(x, y)  # global fallback for classes the style lacks
    style_classes = set(np.unique(sm).tolist())
    for cls in np.unique(cm):
        if int(cls) not in style_classes:
            continue
        sel = cm == cls
        out[sel] = adain_transfer(x[sel], y[sm == cls])
    return from_perceptual(out.reshape(image.shape), clamp=True)


# --------------------------------------------------------------------------
# External plugins
# --------------------------------------------------------------------------

def apply_external(name: str, image: np.ndarray, ctx: StyleContext, spec: PluginSpec) -> np.ndarray:
    """Run an out-of-process operator through the file-based plugin protocol."""
    tmp_root = os.environ.get(TMPDIR_ENV) or None
    with tempfile.TemporaryDirectory(prefix=f"pipevolve-{name}-", dir=tmp_root) as tmp:
        tmp = Path(tmp)
        content_path, style_path, out_path = tmp / "content.ppm", tmp / "style.ppm", tmp / "out.ppm"
        write_image(image, content_path)
        write_image(ctx.style_image, style_path)
        mask_arg = style_mask_arg = "none"
        if ctx.content_mask is not None:
            write_mask(ctx.content_mask, tmp / "mask.pgm")
            mask_arg = str(tmp / "mask.pgm")
        if ctx.style_mask is not None:
            write_mask(ctx.style_mask, tmp / "style_mask.pgm")
            style_mask_arg = str(tmp / "style_mask.pgm")
        argv = list(spec.command) + [
            "--content", str(content_path),
            "--style", str(style_path),
            "--mask", mask_arg,
            "--style-mask", style_mask_arg,
            "--out", str(out_path),
        ]
        try:
            proc = subprocess.run(
                argv,
                stdin=subprocess.DEVNULL,
                stdout=subprocess.DEVNULL,
                stderr=subprocess.PIPE,
                timeout=spec.timeout,
            )
        except subprocess.TimeoutExpired as exc:
            raise PluginError(f"plugin {name!r} timed out after {spec.timeout:g} s") from exc
        except OSError as exc:
            raise PluginError(f"plugin {name!r} could not be started: {exc}") from exc
        if proc.returncode != 0:
            tail = proc.stderr.decode("utf-8", "replace").strip().splitlines()[-1:] if proc.stderr else []
            detail = f": {tail[0]}" if tail else ""
            raise PluginError(
                f"plugin {name!r} exited with code {proc.returncode}{detail}",
                exit_code=proc.returncode,
            )
        if not out_path.exists():
            raise PluginError(f"plugin {name!r} produced no output image")
        try:
            result = read_image(out_path)
        except ImageFormatError as exc:
            raise PluginError(f"plugin {name!r} wrote a malformed image: {exc}") from exc
    if result.shape != np.shape(image):
        raise DimensionMismatchError(
            f"plugin {name!r} returned {result.shape[1]}x{result.shape[0]}, "
            f"expected {image.shape[1]}x{image.shape[0]}"
        )
    return result


# --------------------------------------------------------------------------
# Dispatch
# --------------------------------------------------------------------------

def apply_operator(
    op: str,
    image: np.ndarray,
    ctx: Optional[StyleContext],
    plugins: Optional[PluginRunner] = None,
) -> np.ndarray:
    if op == STOP:
        raise ValueError("the stop node is never applied to an image")
    if op in CLASSICAL:
        return apply_classical(op, image, ctx)
    if op in STYLE_TRANSFER:
        if ctx is None:
            raise OperatorError(f"{op} needs a style reference")
        return apply_adain(image, ctx) if op == "adain" else apply_cacti(image, ctx)
    if plugins is not None and op in plugins:
        return plugins.apply(op, image, ctx)
    raise OperatorError(f"unknown operator {op!r}")


def apply_pipeline(
    steps,
    image: np.ndarray,
    ctx: Optional[StyleContext],
    plugins: Optional[PluginRunner] = None,
) -> np.ndarray:
    out = np.asarray(image, dtype=np.float64)
    for op in steps:
        out = apply_operator(op, out, ctx, plugins)
    return out


def needs_style(steps) -> bool:
    return any(op == "normalize" or op in STYLE_TRANSFER or op not in BUILTIN for op in steps)
