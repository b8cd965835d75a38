"""Per-camera colour calibration against a 24-patch reference chart.

Each channel is fitted by ordinary least squares mapping observed patch
means onto the reference palette; the six resulting values (slope and
intercept per channel) are applied to live frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFitError, InvalidArgumentError
from .geometry import Image, round_half_up

PATCH_COUNT = 24
CHANNELS = ("r", "g", "b")


@dataclass(frozen=True)
class ColorChart:
    """Reference RGB values plus the pixel rectangle locating each patch.

    Rectangles are (x, y, width, height) in pixels.
    """

    reference_rgb: np.ndarray
    patch_regions: tuple[tuple[int, int, int, int], ...]

    def __post_init__(self):
        ref = np.asarray(self.reference_rgb, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "reference_rgb", ref)
        ref.setflags(write=False)
        regions = tuple(tuple(int(v) for v in r) for r in self.patch_regions)
        object.__setattr__(self, "patch_regions", regions)
        if len(ref) != PATCH_COUNT or len(regions) != PATCH_COUNT:
            raise InvalidArgumentError("chart must have exactly 24 patches")
        if np.any(ref < 0) or np.any(ref > 255):
            raise InvalidArgumentError("reference values outside [0, 255]")
        for x, y, w, h in regions:
            if w * h < 4:
                raise InvalidArgumentError("patch region area must be >= 4 px")
        for i, a in enumerate(regions):
            for b in regions[i + 1:]:
                if _overlaps(a, b):
                    raise InvalidArgumentError("patch regions overlap")


def _overlaps(a, b) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


@dataclass(frozen=True)
class ChannelFit:
    slope: float
    intercept: float
    fit_r2: float


@dataclass(frozen=True)
class ColorCoefficients:
    r: ChannelFit
    g: ChannelFit
    b: ChannelFit

    def __post_init__(self):
        for ch in (self.r, self.g, self.b):
            if not ch.slope > 0:
                raise InvalidArgumentError("channel slope must be positive")

    @classmethod
    def identity(cls) -> "ColorCoefficients":
        one = ChannelFit(1.0, 0.0, 1.0)
        return cls(one, one, one)

    def channels(self) -> tuple[ChannelFit, ChannelFit, ChannelFit]:
        return (self.r, self.g, self.b)


def extract_patch_means(img: Image, chart: ColorChart) -> np.ndarray:
    """Arithmetic per-channel mean over each patch region; shape (24, 3)."""
    means = np.empty((PATCH_COUNT, 3))
    for i, (x, y, w, h) in enumerate(chart.patch_regions):
        if x < 0 or y < 0 or x + w > img.width or y + h > img.height:
            raise InvalidArgumentError(f"patch {i} outside image bounds")
        block = img.pixels[y:y + h, x:x + w].astype(np.float64)
        means[i] = block.reshape(-1, 3).mean(axis=0)
    return means


def fit_coefficients(observed, reference) -> ColorCoefficients:
    """Per-channel OLS of reference = slope * observed + intercept."""
    obs = np.asarray(observed, dtype=np.float64).reshape(-1, 3)
    ref = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    if len(obs) != PATCH_COUNT or len(ref) != PATCH_COUNT:
        raise InvalidArgumentError("need exactly 24 paired samples")
    fits = []
    for c in range(3):
        x, y = obs[:, c], ref[:, c]
        if np.var(x) <= 0:
            raise DegenerateFitError(f"zero variance in observed channel {CHANNELS[c]}")
        slope, intercept = np.polyfit(x, y, 1)
        pred = slope * x + intercept
        ss_res = float(np.sum((y - pred) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
        fits.append(ChannelFit(float(slope), float(intercept), r2))
    return ColorCoefficients(*fits)


def apply_correction(img: Image, c: ColorCoefficients) -> Image:
    """Affine per-channel correction, clamped to [0, 255]."""
    px = img.pixels.astype(np.float64)
    out = np.empty_like(px)
    for i, ch in enumerate(c.channels()):
        out[:, :, i] = ch.slope * px[:, :, i] + ch.intercept
    out = np.clip(round_half_up(out), 0, 255).astype(np.uint8)
    return Image(out, img.timestamp, img.camera_id)
