"""Synthetic ground-truth scene and sensor simulator.

Scenes are built from analytic primitives (room shell, boxes,
cylinders) so every ray-surface intersection has a closed form; the
simulator therefore doubles as an exact oracle for the pipeline.
Lighting is a global luma multiplier applied to surface colour before
RGB8 quantisation — a desk-scale analog of dark vs well-lit capture.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError
from .geometry import (
    CameraIntrinsics,
    DistortionCoefficients,
    Image,
    PointCloud,
    RigidTransform,
    compose,
    invert,
    round_half_up,
    so3_exp,
)

BACKGROUND = (0, 0, 0)
_MISS = np.inf


def _check_rgb(rgb):
    r = tuple(int(c) for c in rgb)
    if len(r) != 3 or any(c < 0 or c > 255 for c in r):
        raise InvalidArgumentError(f"invalid RGB8 colour {rgb!r}")
    return r


@dataclass(frozen=True)
class ObjectSpec:
    """A coloured primitive placed in the room.

    extents: box → (sx, sy, sz) full side lengths; cylinder →
    (radius, height). The pose maps object coordinates (origin at the
    object centre) to world coordinates.
    """

    kind: str  # "box" | "cylinder"
    pose: RigidTransform
    extents: tuple
    rgb: tuple

    def __post_init__(self):
        if self.kind not in ("box", "cylinder"):
            raise InvalidArgumentError(f"unknown primitive {self.kind!r}")
        n = 3 if self.kind == "box" else 2
        if len(self.extents) != n or any(e <= 0 for e in self.extents):
            raise InvalidArgumentError("extents must be positive")
        object.__setattr__(self, "extents",
                           tuple(float(e) for e in self.extents))
        object.__setattr__(self, "rgb", _check_rgb(self.rgb))

    def aabb_half(self) -> np.ndarray:
        """World-frame axis-aligned bounding-box half extents."""
        r = self.pose.rotation
        if self.kind == "box":
            half = np.asarray(self.extents) / 2.0
            return np.abs(r) @ half
        rad, h = self.extents
        axis = r[:, 2]
        return rad * np.sqrt(np.maximum(1.0 - axis * axis, 0.0)) \
            + 0.5 * h * np.abs(axis)

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "pose": self.pose.matrix().tolist(),
                "extents": list(self.extents),
                "rgb": list(self.rgb)}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectSpec":
        return cls(d["kind"],
                   RigidTransform.from_matrix(np.asarray(d["pose"])),
                   tuple(d["extents"]), tuple(d["rgb"]))


@dataclass(frozen=True)
class SceneSpec:
    """Declarative scene description; ``generate_scene`` realises it.

    The room is axis-aligned with the floor at z = 0, centred at the
    origin in x/y.
    """

    seed: int
    room: tuple  # (width_x, depth_y, height_z) metres
    objects: tuple = ()
    lighting: float = 1.0
    floor_rgb: tuple = (90, 90, 90)
    ceiling_rgb: tuple = (245, 245, 245)
    wall_rgb: tuple = (200, 190, 170)

    def __post_init__(self):
        if len(self.room) != 3 or any(r <= 0 for r in self.room):
            raise InvalidArgumentError("room dimensions must be positive")
        if not 0.0 < self.lighting <= 1.0:
            raise InvalidArgumentError("lighting multiplier must be in (0, 1]")
        object.__setattr__(self, "room", tuple(float(r) for r in self.room))
        object.__setattr__(self, "objects", tuple(self.objects))
        for name in ("floor_rgb", "ceiling_rgb", "wall_rgb"):
            object.__setattr__(self, name, _check_rgb(getattr(self, name)))
        w, d, h = self.room
        for obj in self.objects:
            c = obj.pose.translation
            hx, hy, hz = obj.aabb_half()
            if (abs(c[0]) + hx > w / 2 or abs(c[1]) + hy > d / 2
                    or c[2] - hz < -1e-12 or c[2] + hz > h):
                raise InvalidArgumentError(
                    f"{obj.kind} at {c.tolist()} extends outside the room")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "room": list(self.room),
                "objects": [o.to_dict() for o in self.objects],
                "lighting": self.lighting,
                "floor_rgb": list(self.floor_rgb),
                "ceiling_rgb": list(self.ceiling_rgb),
                "wall_rgb": list(self.wall_rgb)}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(seed=d["seed"], room=tuple(d["room"]),
                   objects=tuple(ObjectSpec.from_dict(o)
                                 for o in d["objects"]),
                   lighting=d.get("lighting", 1.0),
                   floor_rgb=tuple(d.get("floor_rgb", (90, 90, 90))),
                   ceiling_rgb=tuple(d.get("ceiling_rgb", (245, 245, 245))),
                   wall_rgb=tuple(d.get("wall_rgb", (200, 190, 170))))


# --------------------------------------------------------------------------
# analytic primitives


class _Primitive:
    rgb: tuple

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Smallest positive ray parameter per direction, inf on miss."""
        raise NotImplementedError


class _Box(_Primitive):
    def __init__(self, spec: ObjectSpec):
        self.half = np.asarray(spec.extents) / 2.0
        self.inv = invert(spec.pose)
        self.rgb = spec.rgb

    def intersect(self, origin, dirs):
        o = self.inv.apply(origin[None, :])[0]
        d = dirs @ self.inv.rotation.T
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_d = 1.0 / d
            t1 = (-self.half - o) * inv_d
            t2 = (self.half - o) * inv_d
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        # axis-parallel rays: hit iff the origin lies inside the slab
        par = d == 0.0
        inside = np.abs(o) <= self.half
        lo[par] = np.where(inside[None, :].repeat(len(d), 0)[par],
                           -np.inf, np.inf)
        hi[par] = np.where(inside[None, :].repeat(len(d), 0)[par],
                           np.inf, -np.inf)
        t_near = lo.max(axis=1)
        t_far = hi.min(axis=1)
        hit = (t_near <= t_far) & (t_far > 1e-12)
        t = np.where(t_near > 1e-12, t_near, t_far)
        return np.where(hit, t, _MISS)


class _Cylinder(_Primitive):
    """Finite cylinder with axis +z in the object frame, closed caps."""

    def __init__(self, spec: ObjectSpec):
        self.radius, self.height = spec.extents
        self.inv = invert(spec.pose)
        self.rgb = spec.rgb

    def intersect(self, origin, dirs):
        o = self.inv.apply(origin[None, :])[0]
        d = dirs @ self.inv.rotation.T
        hh = self.height / 2.0
        n = len(d)
        best = np.full(n, _MISS)
        # lateral surface: quadratic in the xy-plane
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2.0 * (o[0] * d[:, 0] + o[1] * d[:, 1])
        c = o[0] ** 2 + o[1] ** 2 - self.radius ** 2
        disc = b * b - 4.0 * a * c
        ok = (disc >= 0) & (a > 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            for sign in (-1.0, 1.0):
                t = (-b + sign * sq) / (2.0 * a)
                z = o[2] + t * d[:, 2]
                good = ok & (t > 1e-12) & (np.abs(z) <= hh)
                best = np.where(good & (t < best), t, best)
        # caps
        with np.errstate(divide="ignore", invalid="ignore"):
            for zc in (-hh, hh):
                t = (zc - o[2]) / d[:, 2]
                x = o[0] + t * d[:, 0]
                y = o[1] + t * d[:, 1]
                good = ((d[:, 2] != 0) & (t > 1e-12)
                        & (x * x + y * y <= self.radius ** 2))
                best = np.where(good & (t < best), t, best)
        return best


class _RoomShell(_Primitive):
    """Inward-facing walls/floor/ceiling of the room box. Rays cast from
    inside hit the exit face; the face determines the colour."""

    def __init__(self, room, floor_rgb, ceiling_rgb, wall_rgb):
        w, d, h = room
        self.lo = np.array([-w / 2.0, -d / 2.0, 0.0])
        self.hi = np.array([w / 2.0, d / 2.0, h])
        self.floor_rgb = floor_rgb
        self.ceiling_rgb = ceiling_rgb
        self.wall_rgb = wall_rgb
        self.rgb = wall_rgb  # overridden per ray via face()

    def intersect(self, origin, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_d = 1.0 / dirs
            t1 = (self.lo - origin) * inv_d
            t2 = (self.hi - origin) * inv_d
        hi = np.maximum(t1, t2)
        hi[dirs == 0.0] = np.inf
        t_exit = hi.min(axis=1)
        return np.where(t_exit > 1e-12, t_exit, _MISS)

    def face_colours(self, origin, dirs, t):
        pts = origin[None, :] + t[:, None] * dirs
        out = np.tile(np.asarray(self.wall_rgb, dtype=np.float64),
                      (len(dirs), 1))
        eps = 1e-9
        out[pts[:, 2] <= self.lo[2] + eps] = self.floor_rgb
        out[pts[:, 2] >= self.hi[2] - eps] = self.ceiling_rgb
        return out


@dataclass
class Scene:
    spec: SceneSpec
    shell: Optional[_RoomShell]
    primitives: list

    def cast(self, origin: np.ndarray, dirs: np.ndarray):
        """Nearest hit per ray: (range, rgb_float64 (n,3), hit mask)."""
        origin = np.asarray(origin, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        n = len(dirs)
        best = np.full(n, _MISS)
        rgb = np.tile(np.asarray(BACKGROUND, dtype=np.float64), (n, 1))
        if self.shell is not None:
            t = self.shell.intersect(origin, dirs)
            hit = t < best
            if np.any(hit):
                rgb[hit] = self.shell.face_colours(
                    origin, dirs[hit], t[hit])
                best = np.where(hit, t, best)
        for prim in self.primitives:
            t = prim.intersect(origin, dirs)
            hit = t < best
            rgb[hit] = prim.rgb
            best = np.where(hit, t, best)
        return best, rgb, np.isfinite(best)

    def serialise(self) -> str:
        """Canonical JSON; equal scenes serialise identically."""
        return json.dumps(self.spec.to_dict(), sort_keys=True)


def generate_scene(spec: SceneSpec) -> Scene:
    shell = _RoomShell(spec.room, spec.floor_rgb, spec.ceiling_rgb,
                       spec.wall_rgb)
    prims = []
    for obj in spec.objects:
        prims.append(_Box(obj) if obj.kind == "box" else _Cylinder(obj))
    return Scene(spec, shell, prims)


_PALETTE = [(230, 30, 30), (30, 200, 40), (40, 60, 230), (240, 220, 30),
            (230, 40, 220), (30, 220, 220), (250, 140, 20), (150, 70, 200)]

# near-white palette for dark-capture analogs: every channel survives
# RGB8 quantisation at strong lighting attenuation (250 x 0.002 -> 1)
_BRIGHT_PALETTE = [(255, 250, 250), (250, 255, 250), (250, 250, 255),
                   (255, 255, 250), (250, 255, 255), (255, 250, 255),
                   (255, 255, 255), (252, 252, 252)]

_BRIGHT_SURFACES = {"floor_rgb": (250, 250, 250),
                    "ceiling_rgb": (255, 255, 255),
                    "wall_rgb": (252, 252, 252)}


def random_scene_spec(seed: int, n_objects: int = 5,
                      room: tuple = (8.0, 8.0, 3.0),
                      lighting: float = 1.0,
                      palette: str = "default") -> SceneSpec:
    """Seeded random arrangement of boxes and cylinders on the floor.

    palette "bright" uses near-white surfaces throughout, the analog of
    a reflective scene that stays measurable under heavy attenuation.
    """
    if palette not in ("default", "bright"):
        raise InvalidArgumentError(f"unknown palette {palette!r}")
    colours = _PALETTE if palette == "default" else _BRIGHT_PALETTE
    surfaces = {} if palette == "default" else _BRIGHT_SURFACES
    rng = np.random.default_rng(seed)
    w, d, h = room
    objects = []
    for i in range(n_objects):
        kind = "box" if rng.random() < 0.6 else "cylinder"
        if kind == "box":
            ext = tuple(float(e) for e in rng.uniform(0.3, 0.9, 3))
            margin = 0.5 * math.hypot(ext[0], ext[1]) + 0.05
            cz = ext[2] / 2.0
        else:
            ext = (float(rng.uniform(0.15, 0.4)),
                   float(rng.uniform(0.4, 1.2)))
            margin = ext[0] + 0.05
            cz = ext[1] / 2.0
        cx = float(rng.uniform(-w / 2 + margin, w / 2 - margin))
        cy = float(rng.uniform(-d / 2 + margin, d / 2 - margin))
        yaw = float(rng.uniform(0.0, 2.0 * math.pi))
        pose = RigidTransform(so3_exp(np.array([0.0, 0.0, yaw])),
                              np.array([cx, cy, cz]))
        rgb = colours[int(rng.integers(len(colours)))]
        objects.append(ObjectSpec(kind, pose, ext, rgb))
    return SceneSpec(seed=seed, room=room, objects=tuple(objects),
                     lighting=lighting, **surfaces)


# --------------------------------------------------------------------------
# sensors


@dataclass(frozen=True)
class CameraModel:
    camera_id: int
    intrinsics: CameraIntrinsics
    distortion: DistortionCoefficients
    extrinsic: RigidTransform  # rig -> camera


@dataclass(frozen=True)
class SensorRig:
    """LiDAR spinning scanner plus rigidly mounted cameras.

    Camera extrinsics map rig coordinates to camera coordinates and are
    the ground truth the calibration pipeline must recover.
    """

    channels: int = 16
    vertical_fov_deg: float = 20.0
    azimuth_step_deg: float = 0.2
    max_range_m: float = 100.0
    spin_rate_hz: float = 10.0
    cameras: tuple = ()

    def __post_init__(self):
        if self.channels < 1:
            raise InvalidArgumentError("channel count must be >= 1")
        if self.azimuth_step_deg <= 0 or self.max_range_m <= 0:
            raise InvalidArgumentError("invalid scan parameters")


def _scan_directions(rig: SensorRig) -> np.ndarray:
    elev = (np.linspace(-rig.vertical_fov_deg / 2.0,
                        rig.vertical_fov_deg / 2.0, rig.channels)
            if rig.channels > 1 else np.zeros(1))
    az = np.arange(0.0, 360.0, rig.azimuth_step_deg)
    e = np.deg2rad(elev)[:, None]
    a = np.deg2rad(az)[None, :]
    dirs = np.stack([np.cos(e) * np.cos(a),
                     np.cos(e) * np.sin(a),
                     np.broadcast_to(np.sin(e), (len(elev), len(az)))],
                    axis=-1)
    return dirs.reshape(-1, 3)


def simulate_lidar(scene: Scene, rig: SensorRig, pose: RigidTransform,
                   t: int, noise_sigma: float = 0.0,
                   rng: Optional[np.random.Generator] = None,
                   with_ground_truth: bool = False):
    """Spin the scanner once at the given rig pose (rig -> world).

    Points come back in the sensor (rig) frame, as a real scanner
    reports them. Misses and returns beyond max range are dropped. With
    ``with_ground_truth`` the per-point surface colour is returned as a
    sidecar array (never part of the cloud the pipeline consumes).
    """
    dirs_local = _scan_directions(rig)
    dirs = dirs_local @ pose.rotation.T
    origin = pose.translation
    rng_t, rgb, hit = scene.cast(origin, dirs)
    if noise_sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        rng_t = rng_t + rng.normal(0.0, noise_sigma, len(rng_t))
    keep = hit & (rng_t <= rig.max_range_m) & (rng_t > 0.0)
    pts = rng_t[keep, None] * dirs_local[keep]
    cloud = PointCloud(pts, timestamp=t)
    if with_ground_truth:
        gt = np.clip(round_half_up(rgb[keep]), 0, 255).astype(np.uint8)
        return cloud, gt
    return cloud


def default_rig(width: int = 320, height: int = 240,
                half_fov_deg: float = 50.0, offset_m: float = 0.1,
                n_cameras: int = 4) -> SensorRig:
    """Default scanner with a symmetric outward-facing camera ring."""
    fx = (width / 2.0) / math.tan(math.radians(half_fov_deg))
    k = CameraIntrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                         width=width, height=height)
    cams = []
    for i in range(n_cameras):
        az = 2.0 * math.pi * i / n_cameras
        ca, sa = math.cos(az), math.sin(az)
        # optical axis along the azimuth, image y pointing down
        z_cam = np.array([ca, sa, 0.0])
        y_cam = np.array([0.0, 0.0, -1.0])
        x_cam = np.cross(y_cam, z_cam)
        r = np.stack([x_cam, y_cam, z_cam])
        centre = offset_m * np.array([ca, sa, 0.0])
        cams.append(CameraModel(i, k, DistortionCoefficients(),
                                RigidTransform(r, -r @ centre)))
    return SensorRig(cameras=tuple(cams))


def camera_wedges(rig: SensorRig, half_fov_deg: float = 50.0,
                  offset_m: float = 0.1):
    """CameraWedge layout entries matching :func:`default_rig` order."""
    from .coverage import CameraWedge
    n = len(rig.cameras)
    return [CameraWedge(360.0 * i / n, offset_m, half_fov_deg)
            for i in range(n)]


def ground_truth_bundle(rig: SensorRig, half_fov_deg: float = 50.0,
                        offset_m: float = 0.1):
    """Calibration bundle with the simulator's exact extrinsics (the
    LiDAR frame coincides with the rig frame)."""
    from .colorcal import ColorCoefficients
    from .fuse import CalibrationBundle, CameraCalibration
    wedges = camera_wedges(rig, half_fov_deg, offset_m)
    cams = {
        cam.camera_id: CameraCalibration(
            cam.camera_id, cam.intrinsics, cam.distortion, cam.extrinsic,
            ColorCoefficients.identity(), wedges[i])
        for i, cam in enumerate(rig.cameras)
    }
    return CalibrationBundle(cams)


def _undistort_normalized(xd, yd, dist: DistortionCoefficients,
                          iters: int = 8):
    """Invert the Brown-Conrady forward model by fixed-point iteration."""
    from .geometry import distort_normalized
    xu, yu = xd.copy(), yd.copy()
    for _ in range(iters):
        xdd, ydd = distort_normalized(xu, yu, dist)
        xu = xu - (xdd - xd)
        yu = yu - (ydd - yd)
    return xu, yu


def simulate_camera(scene: Scene, cam: CameraModel, pose: RigidTransform,
                    t: int, lighting: Optional[float] = None) -> Image:
    """Ray-cast one camera frame. ``pose`` is the rig pose (rig -> world);
    the camera's own extrinsic is applied on top. Surface colour is
    scaled by the lighting multiplier, then quantised half-up to RGB8."""
    if lighting is None:
        lighting = scene.spec.lighting
    if lighting <= 0.0:
        raise InvalidArgumentError("lighting multiplier must be positive")
    k = cam.intrinsics
    cam_to_world = compose(pose, invert(cam.extrinsic))
    u = np.arange(k.width, dtype=np.float64)
    v = np.arange(k.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    yn = (vv - k.cy) / k.fy
    xn = (uu - k.cx - k.skew * yn) / k.fx
    if not cam.distortion.is_zero():
        xn, yn = _undistort_normalized(xn.ravel(), yn.ravel(),
                                       cam.distortion)
        xn = xn.reshape(vv.shape)
        yn = yn.reshape(vv.shape)
    dirs_cam = np.stack([xn, yn, np.ones_like(xn)], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ cam_to_world.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    _, rgb, _ = scene.cast(cam_to_world.translation, dirs)
    quant = np.clip(round_half_up(rgb * lighting), 0, 255).astype(np.uint8)
    return Image(quant.reshape(k.height, k.width, 3), t, cam.camera_id)
