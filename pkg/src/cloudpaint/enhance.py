"""Low-light enhancement stage and image quality metrics.

The enhancer is pluggable: anything with an ``enhance(Image) -> Image``
method satisfying the dimension/range contract can slot in (e.g. an
externally trained model). The built-in enhancer is a deterministic
gamma + percentile-stretch stage so the pipeline is fully testable
without one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from .errors import InvalidArgumentError, MalformedStreamError
from .framesync import luma, mean_brightness
from .geometry import Image, round_half_up

BRIGHTNESS_GATE = 0.12
DEFAULT_TARGET = 0.4
PSNR_CAP_DB = 100.0


@runtime_checkable
class Enhancer(Protocol):
    deterministic: bool

    def enhance(self, img: Image) -> Image: ...


def should_enhance(img: Image, threshold: float = BRIGHTNESS_GATE) -> bool:
    return mean_brightness(img) < threshold


def builtin_enhance(img: Image,
                    target_brightness: float = DEFAULT_TARGET
                    ) -> tuple[Image, bool]:
    """Deterministic low-light enhancement.

    Gamma-corrects toward the target mean brightness, applies a 1st-99th
    percentile contrast stretch, then nudges the mean back into the
    target band with further gamma steps. Returns (image, no_signal);
    absolute-black input is returned unchanged with no_signal=True.
    """
    m = mean_brightness(img)
    if m <= 0.0:
        return Image(img.pixels.copy(), img.timestamp, img.camera_id), True
    norm = img.pixels.astype(np.float64) / 255.0
    gamma = math.log(target_brightness) / math.log(m)
    out = norm ** gamma
    p1, p99 = np.percentile(out, [1.0, 99.0])
    if p99 - p1 > 0.05:
        out = np.clip((out - p1) / (p99 - p1), 0.0, 1.0)
    # percentile stretch can shift the mean; pull it back into the band
    for _ in range(8):
        cur = float(np.mean(out @ _LUMA))
        if abs(cur - target_brightness) <= 0.04 or cur <= 0.0 or cur >= 1.0:
            break
        out = out ** (math.log(target_brightness) / math.log(cur))
    quant = np.clip(round_half_up(out * 255.0), 0, 255).astype(np.uint8)
    return Image(quant, img.timestamp, img.camera_id), False


_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class BuiltinEnhancer:
    """Enhancer-contract wrapper around :func:`builtin_enhance`."""

    target_brightness: float = DEFAULT_TARGET
    deterministic: bool = True

    def enhance(self, img: Image) -> Image:
        out, _ = builtin_enhance(img, self.target_brightness)
        return out


@dataclass
class SmoothingState:
    """Per-camera temporal smoothing of the global luma level (EMA).

    Single-writer per camera stream; distinct cameras may be smoothed
    concurrently with separate states.
    """

    window: int = 4
    _gain: Optional[float] = None
    _last_ts: Optional[int] = None

    def __post_init__(self):
        if self.window < 1:
            raise InvalidArgumentError("window must be >= 1")


def temporal_smooth(state: SmoothingState, img: Image) -> Image:
    """Blend the frame's global luma level with the running EMA and
    rescale the frame accordingly. First frame passes through unchanged."""
    if state._last_ts is not None and img.timestamp < state._last_ts:
        raise MalformedStreamError("out-of-order frame in smoothing stream")
    state._last_ts = img.timestamp
    g = mean_brightness(img)
    if state._gain is None or g <= 0.0:
        state._gain = g if g > 0 else state._gain
        return img
    lam = 1.0 - 1.0 / state.window
    blended = lam * state._gain + (1.0 - lam) * g
    state._gain = blended
    scale = blended / g
    if scale == 1.0:
        return img
    out = np.clip(round_half_up(img.pixels.astype(np.float64) * scale),
                  0, 255).astype(np.uint8)
    return Image(out, img.timestamp, img.camera_id)


def _check_dims(a: Image, b: Image):
    if a.width != b.width or a.height != b.height:
        raise InvalidArgumentError("image dimensions differ")


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB over all channels; identical
    images return the 100 dB cap."""
    _check_dims(a, b)
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(255.0 ** 2 / mse))


def _window_stats(x: np.ndarray, w: int):
    """Mean of every w-by-w sliding window (stride 1) via integral image."""
    ii = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    ii[1:, 1:] = np.cumsum(np.cumsum(x, axis=0), axis=1)
    s = ii[w:, w:] - ii[:-w, w:] - ii[w:, :-w] + ii[:-w, :-w]
    return s / (w * w)


def ssim(a: Image, b: Image, window: int = 8) -> float:
    """Single-scale SSIM on luma, uniform sliding windows, standard
    constants."""
    _check_dims(a, b)
    if min(a.width, a.height) < window:
        raise InvalidArgumentError("image smaller than SSIM window")
    x = luma(a)
    y = luma(b)
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    mx = _window_stats(x, window)
    my = _window_stats(y, window)
    vx = _window_stats(x * x, window) - mx * mx
    vy = _window_stats(y * y, window) - my * my
    cxy = _window_stats(x * y, window) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def charbonnier(a: Image, b: Image, epsilon: float = 1e-3) -> float:
    """Mean Charbonnier penalty sqrt(d^2 + eps^2) on normalised values."""
    _check_dims(a, b)
    d = (a.pixels.astype(np.float64) - b.pixels.astype(np.float64)) / 255.0
    return float(np.mean(np.sqrt(d * d + epsilon * epsilon)))
