"""Sharpness gating, brightness measurement and LiDAR/camera frame pairing.

A camera frame joins a bundle only if it is sharp (Laplacian variance at
or above threshold) and within the sync window of the LiDAR timestamp.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError, MalformedStreamError
from .geometry import Image, PointCloud

BLUR_THRESHOLD = 150.0
SYNC_WINDOW_NS = 16_000_000  # 16 ms

_LAPLACIAN = np.array([[0.0, 1.0, 0.0],
                       [1.0, -4.0, 1.0],
                       [0.0, 1.0, 0.0]])

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])  # BT.601


def luma(img: Image) -> np.ndarray:
    return img.pixels.astype(np.float64) @ LUMA_WEIGHTS


def laplacian_variance(img: Image) -> float:
    """Population variance of the Laplacian response of the luma channel,
    replicate border."""
    if img.width < 3 or img.height < 3:
        raise InvalidArgumentError("image smaller than Laplacian kernel")
    resp = ndimage.convolve(luma(img), _LAPLACIAN, mode="nearest")
    return float(np.var(resp))


def is_blurry(img: Image, threshold: float = BLUR_THRESHOLD) -> bool:
    return laplacian_variance(img) < threshold


def mean_brightness(img: Image) -> float:
    """Mean luma normalised to [0, 1]."""
    return float(np.mean(luma(img))) / 255.0


@dataclass(frozen=True)
class FrameBundle:
    """One LiDAR frame with at most one sharp image per camera."""

    lidar: PointCloud
    images: dict[int, Image] = field(default_factory=dict)
    pairing_deltas_ms: dict[int, float] = field(default_factory=dict)

    def present_cameras(self) -> list[int]:
        return sorted(self.images)


def _check_monotonic(timestamps, what: str):
    for a, b in zip(timestamps, timestamps[1:]):
        if b < a:
            raise MalformedStreamError(f"non-monotonic {what} stream")


def pair_frames(lidar_stream, camera_streams,
                blur_threshold: float = BLUR_THRESHOLD,
                window_ns: int = SYNC_WINDOW_NS) -> list[FrameBundle]:
    """Pair each LiDAR frame with the temporally closest sharp frame from
    each camera, within the sync window.

    Blurry frames are skipped (the search continues to the next-nearest
    sharp frame); ties in |delta| resolve to the earlier frame. Cameras
    with no qualifying frame are absent from the bundle.
    """
    _check_monotonic([c.timestamp for c in lidar_stream], "lidar")
    sharp: dict[int, list[Image]] = {}
    for cam_id, frames in camera_streams.items():
        _check_monotonic([f.timestamp for f in frames], f"camera {cam_id}")
        sharp[cam_id] = [f for f in frames
                         if not is_blurry(f, blur_threshold)]
    bundles = []
    for cloud in lidar_stream:
        images: dict[int, Image] = {}
        deltas: dict[int, float] = {}
        for cam_id, frames in sharp.items():
            pick = _nearest(frames, cloud.timestamp, window_ns)
            if pick is not None:
                images[cam_id] = pick
                deltas[cam_id] = abs(pick.timestamp - cloud.timestamp) / 1e6
        bundles.append(FrameBundle(cloud, images, deltas))
    return bundles


def _nearest(frames: list[Image], t: int, window_ns: int) -> Optional[Image]:
    if not frames:
        return None
    ts = [f.timestamp for f in frames]
    i = bisect_left(ts, t)
    best = None
    best_delta = None
    for j in (i - 1, i):
        if 0 <= j < len(frames):
            d = abs(ts[j] - t)
            # ties resolve to the earlier frame: strict < keeps the first
            if d < window_ns and (best_delta is None or d < best_delta):
                best, best_delta = frames[j], d
    return best
