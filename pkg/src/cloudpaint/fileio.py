"""File formats: PLY point clouds (ASCII and binary little-endian),
binary PPM images, calibration bundles (JSON), and frame directories.

PLY clouds carry x,y,z plus optional intensity and optional colour
(red, green, blue, camera_id). camera_id is a uchar with 255 meaning
"no source camera"; in memory that is ``fuse.NO_CAMERA`` (-1).
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Optional

import numpy as np

from .colorcal import ChannelFit, ColorCoefficients
from .coverage import CameraWedge
from .errors import ConfigurationError, InvalidArgumentError, MalformedStreamError
from .fuse import NO_CAMERA, CalibrationBundle, CameraCalibration, ColourisedCloud
from .geometry import (
    CameraIntrinsics,
    DistortionCoefficients,
    Image,
    PointCloud,
    RigidTransform,
)

PLY_NO_CAMERA = 255


# --------------------------------------------------------------------------
# PLY


def _cloud_fields(cloud) -> tuple:
    """(points, intensity | None, rgb | None, camera | None, timestamp)."""
    if isinstance(cloud, ColourisedCloud):
        cam = cloud.source_camera.astype(np.int64)
        cam = np.where(cam == NO_CAMERA, PLY_NO_CAMERA, cam)
        return cloud.points, None, cloud.rgb, cam.astype(np.uint8), \
            cloud.timestamp
    rgb = cloud.rgb
    cam = None
    if rgb is not None:
        cam = np.full(len(cloud.points), PLY_NO_CAMERA, dtype=np.uint8)
    return cloud.points, cloud.intensity, rgb, cam, cloud.timestamp


def write_ply(path, cloud, binary: bool = True) -> None:
    """Write a PointCloud or ColourisedCloud; timestamp goes in a comment."""
    pts, intensity, rgb, cam, ts = _cloud_fields(cloud)
    n = len(pts)
    header = ["ply",
              "format binary_little_endian 1.0" if binary
              else "format ascii 1.0",
              f"comment timestamp_ns {ts}",
              f"element vertex {n}",
              "property double x",
              "property double y",
              "property double z"]
    if intensity is not None:
        header.append("property float intensity")
    if rgb is not None:
        header += ["property uchar red", "property uchar green",
                   "property uchar blue", "property uchar camera_id"]
    header.append("end_header")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if intensity is not None:
                fields.append(("intensity", "<f4"))
            if rgb is not None:
                fields += [("red", "u1"), ("green", "u1"),
                           ("blue", "u1"), ("camera_id", "u1")]
            rec = np.zeros(n, dtype=fields)
            rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
            if intensity is not None:
                rec["intensity"] = intensity
            if rgb is not None:
                rec["red"], rec["green"], rec["blue"] = \
                    rgb[:, 0], rgb[:, 1], rgb[:, 2]
                rec["camera_id"] = cam
            fh.write(rec.tobytes())
        else:
            lines = []
            for i in range(n):
                parts = [repr(float(pts[i, 0])), repr(float(pts[i, 1])),
                         repr(float(pts[i, 2]))]
                if intensity is not None:
                    parts.append(repr(float(intensity[i])))
                if rgb is not None:
                    parts += [str(int(rgb[i, 0])), str(int(rgb[i, 1])),
                              str(int(rgb[i, 2])), str(int(cam[i]))]
                lines.append(" ".join(parts))
            fh.write(("\n".join(lines) + ("\n" if lines else ""))
                     .encode("ascii"))


_PLY_TYPES = {"double": "<f8", "float": "<f4", "uchar": "u1",
              "uint8": "u1", "float64": "<f8", "float32": "<f4"}


def read_ply(path):
    """Read a PLY written by :func:`write_ply` (or compatible).

    Returns ColourisedCloud when colour properties are present, else
    PointCloud.
    """
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MalformedStreamError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii", "replace").splitlines()
    body = data[end + len(b"end_header\n"):]
    fmt = None
    n = 0
    ts = 0
    props: list[tuple[str, str]] = []
    for line in header[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "comment" and len(tok) >= 3 \
                and tok[1] == "timestamp_ns":
            ts = int(tok[2])
        elif tok[0] == "element":
            if tok[1] != "vertex":
                raise MalformedStreamError(
                    f"{path}: unsupported element {tok[1]}")
            n = int(tok[2])
        elif tok[0] == "property":
            if tok[1] not in _PLY_TYPES:
                raise MalformedStreamError(
                    f"{path}: unsupported property type {tok[1]}")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    names = [p[0] for p in props]
    if fmt not in ("ascii", "binary_little_endian") or \
            names[:3] != ["x", "y", "z"]:
        raise MalformedStreamError(f"{path}: unsupported PLY layout")
    dtype = np.dtype(props)
    if fmt == "binary_little_endian":
        expect = dtype.itemsize * n
        if len(body) < expect:
            raise MalformedStreamError(f"{path}: truncated PLY body")
        rec = np.frombuffer(body[:expect], dtype=dtype)
    else:
        text = body.decode("ascii", "replace").split()
        if len(text) != n * len(props):
            raise MalformedStreamError(f"{path}: bad ASCII vertex count")
        cols = np.array(text, dtype=object).reshape(n, len(props))
        rec = np.zeros(n, dtype=dtype)
        for i, (name, dt) in enumerate(props):
            rec[name] = cols[:, i].astype(np.float64 if "f" in dt
                                          else np.uint8)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1) \
        .astype(np.float64)
    if "red" in names:
        rgb = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1) \
            .astype(np.uint8)
        if "camera_id" in names:
            cam = rec["camera_id"].astype(np.int16)
            cam[cam == PLY_NO_CAMERA] = NO_CAMERA
        else:
            cam = np.full(n, NO_CAMERA, dtype=np.int16)
        return ColourisedCloud(pts, rgb, cam, ts)
    intensity = rec["intensity"].astype(np.float32) \
        if "intensity" in names else None
    return PointCloud(pts, timestamp=ts, intensity=intensity)


# --------------------------------------------------------------------------
# PPM


def write_ppm(path, img: Image) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(img.pixels.tobytes())


def read_ppm(path, timestamp: int = 0, camera_id: int = 0) -> Image:
    data = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise MalformedStreamError(f"{path}: not a binary PPM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise MalformedStreamError(f"{path}: only 8-bit PPM supported")
    body = data[m.end():]
    if len(body) < w * h * 3:
        raise MalformedStreamError(f"{path}: truncated PPM body")
    px = np.frombuffer(body[:w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return Image(px.copy(), timestamp, camera_id)


# --------------------------------------------------------------------------
# calibration bundle JSON


def _intrinsics_to_dict(k: CameraIntrinsics) -> dict:
    return {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height, "skew": k.skew}


def _intrinsics_from_dict(d: dict) -> CameraIntrinsics:
    return CameraIntrinsics(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                            width=int(d["width"]), height=int(d["height"]),
                            skew=d.get("skew", 0.0))


def _distortion_to_dict(d: DistortionCoefficients) -> dict:
    return {"k1": d.k1, "k2": d.k2, "p1": d.p1, "p2": d.p2, "k3": d.k3}


def _coeffs_to_dict(c: ColorCoefficients) -> dict:
    return {ch: {"slope": f.slope, "intercept": f.intercept,
                 "fit_r2": f.fit_r2}
            for ch, f in (("r", c.r), ("g", c.g), ("b", c.b))}


def _coeffs_from_dict(d: dict) -> ColorCoefficients:
    def fit(x):
        return ChannelFit(x["slope"], x["intercept"], x.get("fit_r2", 1.0))
    return ColorCoefficients(fit(d["r"]), fit(d["g"]), fit(d["b"]))


def bundle_to_dict(bundle: CalibrationBundle) -> dict:
    cams = []
    for cam_id in bundle.camera_ids():
        c = bundle.cameras[cam_id]
        entry = {
            "id": c.camera_id,
            "intrinsics": _intrinsics_to_dict(c.intrinsics),
            "distortion": _distortion_to_dict(c.distortion),
            "extrinsic_4x4_row_major":
                [float(v) for v in c.extrinsic.matrix().ravel()],
            "color_coefficients": _coeffs_to_dict(c.color),
        }
        if c.layout is not None:
            entry["layout"] = {"azimuth_deg": c.layout.azimuth_deg,
                               "offset_m": c.layout.offset_m,
                               "half_fov_deg": c.layout.half_fov_deg}
        cams.append(entry)
    return {"cameras": cams}


def bundle_from_dict(d: dict) -> CalibrationBundle:
    try:
        cameras = {}
        for entry in d["cameras"]:
            mat = np.asarray(entry["extrinsic_4x4_row_major"],
                             dtype=np.float64).reshape(4, 4)
            layout = None
            if "layout" in entry:
                lay = entry["layout"]
                layout = CameraWedge(lay["azimuth_deg"], lay["offset_m"],
                                     lay["half_fov_deg"])
            dist = entry.get("distortion", {})
            cam = CameraCalibration(
                camera_id=int(entry["id"]),
                intrinsics=_intrinsics_from_dict(entry["intrinsics"]),
                distortion=DistortionCoefficients(
                    k1=dist.get("k1", 0.0), k2=dist.get("k2", 0.0),
                    p1=dist.get("p1", 0.0), p2=dist.get("p2", 0.0),
                    k3=dist.get("k3", 0.0)),
                extrinsic=RigidTransform.from_matrix(mat),
                color=_coeffs_from_dict(entry["color_coefficients"])
                if "color_coefficients" in entry
                else ColorCoefficients.identity(),
                layout=layout)
            cameras[cam.camera_id] = cam
        return CalibrationBundle(cameras)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid calibration bundle: {exc}") \
            from exc


def save_bundle(path, bundle: CalibrationBundle) -> None:
    Path(path).write_text(json.dumps(bundle_to_dict(bundle), indent=2)
                          + "\n")


def load_bundle(path) -> CalibrationBundle:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"calibration bundle not found: {path}")
    try:
        return bundle_from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"calibration bundle is not valid JSON: "
                                 f"{exc}") from exc


# --------------------------------------------------------------------------
# frame directories: lidar/<t_ns>.ply + cam<k>/<t_ns>.ppm


def write_frame_dir(root, clouds, camera_streams,
                    gt_colours: Optional[dict] = None) -> None:
    """Lay out streams on disk: lidar/<t>.ply and cam<k>/<t>.ppm.

    gt_colours optionally maps a LiDAR timestamp to the ground-truth RGB
    sidecar, written as lidar/<t>.gt.ply for oracle checks.
    """
    root = Path(root)
    lidar_dir = root / "lidar"
    lidar_dir.mkdir(parents=True, exist_ok=True)
    for cloud in clouds:
        write_ply(lidar_dir / f"{cloud.timestamp}.ply", cloud)
        if gt_colours and cloud.timestamp in gt_colours:
            gt = ColourisedCloud(cloud.points,
                                 gt_colours[cloud.timestamp],
                                 np.full(len(cloud.points), NO_CAMERA,
                                         dtype=np.int16),
                                 cloud.timestamp)
            write_ply(lidar_dir / f"{cloud.timestamp}.gt.ply", gt)
    for cam_id, frames in camera_streams.items():
        cam_dir = root / f"cam{cam_id}"
        cam_dir.mkdir(parents=True, exist_ok=True)
        for img in frames:
            write_ppm(cam_dir / f"{img.timestamp}.ppm", img)


_TS_RE = re.compile(r"^(\d+)(\.gt)?\.(ply|ppm)$")


def read_frame_dir(root):
    """Load a frame directory back into (clouds, camera_streams).

    Ground-truth sidecars (*.gt.ply) are skipped. Streams come back
    timestamp-sorted. Unreadable files raise MalformedStreamError.
    """
    root = Path(root)
    clouds = []
    lidar_dir = root / "lidar"
    if lidar_dir.is_dir():
        for p in sorted(lidar_dir.iterdir()):
            m = _TS_RE.match(p.name)
            if not m or m.group(2):
                continue
            clouds.append(read_ply(p))
        clouds.sort(key=lambda c: c.timestamp)
    streams: dict[int, list[Image]] = {}
    for cam_dir in sorted(root.glob("cam*")):
        if not cam_dir.is_dir():
            continue
        try:
            cam_id = int(cam_dir.name[3:])
        except ValueError:
            continue
        frames = []
        for p in sorted(cam_dir.iterdir()):
            m = _TS_RE.match(p.name)
            if not m:
                continue
            frames.append(read_ppm(p, timestamp=int(m.group(1)),
                                   camera_id=cam_id))
        frames.sort(key=lambda f: f.timestamp)
        streams[cam_id] = frames
    return clouds, streams


def read_gt_sidecars(root) -> dict:
    """timestamp -> ground-truth RGB array for every lidar/<t>.gt.ply."""
    out = {}
    lidar_dir = Path(root) / "lidar"
    if lidar_dir.is_dir():
        for p in sorted(lidar_dir.glob("*.gt.ply")):
            cloud = read_ply(p)
            out[cloud.timestamp] = cloud.rgb
    return out
