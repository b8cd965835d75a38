"""Core 3D / projective geometry: rigid transforms, pinhole projection,
distortion correction and reprojection error.

All geometry is float64; images are 8-bit RGB rasters. Types are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError

_ORTHO_TOL = 1e-9


def round_half_up(x):
    """Round to nearest integer, halves away from zero toward +inf."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) rotation + translation (metres)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        r.setflags(write=False)
        t.setflags(write=False)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-7):
            raise InvalidArgumentError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-7:
            raise InvalidArgumentError("rotation determinant is not +1")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying b first, then a: result.x == a(b(x))."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point outside image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class DistortionCoefficients:
    """Brown-Conrady model: 3 radial (k1,k2,k3) + 2 tangential (p1,p2)."""

    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    def __post_init__(self):
        for v in (self.k1, self.k2, self.p1, self.p2, self.k3):
            if not math.isfinite(v):
                raise InvalidArgumentError("distortion coefficient not finite")

    def is_zero(self) -> bool:
        return self.k1 == self.k2 == self.p1 == self.p2 == self.k3 == 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3])


@dataclass(frozen=True)
class PointCloud:
    """Timestamped set of 3D points (metres) with optional attributes."""

    points: np.ndarray
    timestamp: int = 0
    intensity: Optional[np.ndarray] = None
    rgb: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        pts.setflags(write=False)
        if pts.size and not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("non-finite point coordinates")
        for name in ("intensity", "rgb"):
            attr = getattr(self, name)
            if attr is not None:
                attr = np.asarray(attr)
                object.__setattr__(self, name, attr)
                if len(attr) != len(pts):
                    raise InvalidArgumentError(f"{name} length mismatch")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Image:
    """RGB8 raster, shape (height, width, 3)."""

    pixels: np.ndarray
    timestamp: int = 0
    camera_id: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidArgumentError("pixels must have shape (h, w, 3)")
        object.__setattr__(self, "pixels", px)
        px.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def transform_points(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    return PointCloud(t.apply(cloud.points), cloud.timestamp,
                      cloud.intensity, cloud.rgb)


def project_point(k: CameraIntrinsics, p_cam) -> tuple[float, float]:
    """Pinhole projection of a camera-frame point; requires z > 0."""
    x, y, z = float(p_cam[0]), float(p_cam[1]), float(p_cam[2])
    if z <= 0:
        raise BehindCamera(z)
    u = k.fx * (x / z) + k.skew * (y / z) + k.cx
    v = k.fy * (y / z) + k.cy
    return u, v


class BehindCamera(Exception):
    """Rejected-point signal: z <= 0. Callers filter these per the fusion
    algorithm rather than treating them as hard errors."""

    def __init__(self, z):
        super().__init__(f"point behind camera (z={z})")
        self.z = z


def project_points(k: CameraIntrinsics, points: np.ndarray):
    """Vectorised projection. Returns (uv array, valid mask); uv rows with
    z <= 0 are NaN."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    valid = z > 0
    zsafe = np.where(valid, z, 1.0)
    u = k.fx * (pts[:, 0] / zsafe) + k.skew * (pts[:, 1] / zsafe) + k.cx
    v = k.fy * (pts[:, 1] / zsafe) + k.cy
    uv = np.stack([u, v], axis=1)
    uv[~valid] = np.nan
    return uv, valid


def distort_normalized(xn: np.ndarray, yn: np.ndarray,
                       d: DistortionCoefficients):
    """Forward Brown-Conrady distortion on normalised coordinates."""
    r2 = xn * xn + yn * yn
    radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2 + d.k3 * r2 * r2 * r2
    xd = xn * radial + 2.0 * d.p1 * xn * yn + d.p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + d.p1 * (r2 + 2.0 * yn * yn) + 2.0 * d.p2 * xn * yn
    return xd, yd


def undistort_image(img: Image, k: CameraIntrinsics,
                    d: DistortionCoefficients) -> Image:
    """Inverse-mapping undistortion with bilinear sampling.

    Each output pixel is mapped through the forward distortion model to a
    source location in the distorted input; samples outside the source are
    black. Zero coefficients return the image unchanged byte-for-byte.
    """
    if d.is_zero():
        return Image(img.pixels.copy(), img.timestamp, img.camera_id)
    h, w = img.height, img.width
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    yn = (vv - k.cy) / k.fy
    xn = (uu - k.cx - k.skew * yn) / k.fx
    xd, yd = distort_normalized(xn, yn, d)
    us = k.fx * xd + k.skew * yd + k.cx
    vs = k.fy * yd + k.cy
    out = _bilinear_sample(img.pixels, us, vs)
    return Image(out, img.timestamp, img.camera_id)


def _bilinear_sample(pixels: np.ndarray, us: np.ndarray,
                     vs: np.ndarray) -> np.ndarray:
    h, w = pixels.shape[:2]
    u0 = np.floor(us).astype(np.int64)
    v0 = np.floor(vs).astype(np.int64)
    # clamp indices for gathering, zero out out-of-source samples afterwards
    inb = (us >= 0) & (us <= w - 1) & (vs >= 0) & (vs <= h - 1)
    u0c = np.clip(u0, 0, w - 2)
    v0c = np.clip(v0, 0, h - 2)
    fuc = np.where(inb, us - u0c, 0.0)[..., None]
    fvc = np.where(inb, vs - v0c, 0.0)[..., None]
    p = pixels.astype(np.float64)
    top = p[v0c, u0c] * (1 - fuc) + p[v0c, u0c + 1] * fuc
    bot = p[v0c + 1, u0c] * (1 - fuc) + p[v0c + 1, u0c + 1] * fuc
    res = top * (1 - fvc) + bot * fvc
    res[~inb] = 0.0
    return np.clip(round_half_up(res), 0, 255).astype(np.uint8)


def reprojection_error(k: CameraIntrinsics, t: RigidTransform,
                       points: PointCloud, observed) -> float:
    """RMS pixel distance between projected transformed points and
    observations."""
    obs = np.asarray(observed, dtype=np.float64).reshape(-1, 2)
    if len(points) == 0 or len(obs) != len(points):
        raise InvalidArgumentError("points/observations length mismatch")
    cam_pts = t.apply(points.points)
    if np.any(cam_pts[:, 2] <= 0):
        raise InvalidArgumentError("point behind camera in reprojection set")
    uv, _ = project_points(k, cam_pts)
    d2 = np.sum((uv - obs) ** 2, axis=1)
    return float(np.sqrt(np.mean(d2)))


def estimate_rigid(src: np.ndarray, dst: np.ndarray,
                   weights: Optional[np.ndarray] = None) -> RigidTransform:
    """Least-squares rigid transform mapping src onto dst (Kabsch)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) < 3 or len(src) != len(dst):
        raise InvalidArgumentError("need >= 3 paired points")
    if weights is None:
        weights = np.ones(len(src))
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    cs = (src * w[:, None]).sum(axis=0)
    cd = (dst * w[:, None]).sum(axis=0)
    h = ((src - cs) * w[:, None]).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cd - r @ cs)


def rotation_angle_deg(r: np.ndarray) -> float:
    """Geodesic rotation angle of a rotation matrix, in degrees."""
    c = (np.trace(np.asarray(r)) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map from axis-angle vector to rotation."""
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        return np.eye(3) + skew(omega)
    k = omega / theta
    kx = skew(k)
    return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * kx @ kx


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
