"""Command-line interface chaining the full pipeline.

All reports are JSON on stdout (or ``--out``). Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical failure. PNG images
are accepted and emitted here at the CLI boundary only; the library
works in binary PPM.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import colorcal, coverage, enhance, fileio, sim
from .errors import (
    CloudpaintError,
    ConfigurationError,
    DataError,
    InvalidArgumentError,
    NumericalError,
)
from .framesync import BLUR_THRESHOLD, SYNC_WINDOW_NS, mean_brightness, pair_frames
from .fuse import (
    CalibrationBundle,
    CameraCalibration,
    FusionStrategy,
    benchmark_fusion,
)
from .geometry import (
    CameraIntrinsics,
    DistortionCoefficients,
    Image,
    PointCloud,
    RigidTransform,
)
from .pipeline import PipelineConfig, run_pipeline
from .register import calibrate_extrinsics
from .sfm import CameraPose

log = logging.getLogger("cloudpaint")

_STRATEGIES = {"batched": FusionStrategy.BATCHED,
               "per-point": FusionStrategy.PER_POINT}


def _emit(payload: dict, out) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


def _load_image(path, timestamp=0, camera_id=0) -> Image:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image as PILImage
        px = np.asarray(PILImage.open(path).convert("RGB"))
        return Image(px, timestamp, camera_id)
    return fileio.read_ppm(path, timestamp, camera_id)


def _save_image(path, img: Image) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image as PILImage
        PILImage.fromarray(img.pixels).save(path)
    else:
        fileio.write_ppm(path, img)


def _require_calib(ctx) -> CalibrationBundle:
    calib = ctx.obj.get("calib")
    if calib is None:
        raise ConfigurationError("this command requires --calib <bundle.json>")
    return fileio.load_bundle(calib)


@click.group(name="cloudpaint")
@click.version_option(__version__)
@click.option("--calib", type=click.Path(), default=None,
              help="Calibration bundle JSON.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for all randomised steps.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Worker count (accepted for compatibility; "
                   "the current implementation is serial).")
@click.option("--log-level", default="warning", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"]))
@click.pass_context
def cli(ctx, calib, seed, jobs, log_level):
    logging.basicConfig(level=getattr(logging, log_level.upper()))
    ctx.obj = {"calib": calib, "seed": seed, "jobs": jobs}


# --------------------------------------------------------------------------


@cli.command()
@click.option("--out", required=True, type=click.Path(),
              help="Output frame directory.")
@click.option("--frames", default=10, show_default=True)
@click.option("--objects", default=5, show_default=True)
@click.option("--lighting", default=1.0, show_default=True,
              help="Global luma multiplier in (0, 1].")
@click.option("--room", nargs=3, type=float, default=(8.0, 8.0, 3.0),
              show_default=True, help="Room width depth height (m).")
@click.option("--rate", default=10.0, show_default=True,
              help="LiDAR spin rate (Hz).")
@click.option("--noise", default=0.0, show_default=True,
              help="Gaussian range noise sigma (m).")
@click.option("--camera-offset-ms", default=2.0, show_default=True,
              help="Camera timestamp offset from the LiDAR frame.")
@click.option("--write-gt/--no-write-gt", default=True, show_default=True,
              help="Write ground-truth colour sidecars.")
@click.option("--palette", default="default", show_default=True,
              type=click.Choice(["default", "bright"]),
              help="'bright' = near-white surfaces for dark-capture "
                   "analogs.")
@click.pass_context
def simulate(ctx, out, frames, objects, lighting, room, rate, noise,
             camera_offset_ms, write_gt, palette):
    """Generate a synthetic scene and write a frame directory plus the
    ground-truth calibration bundle."""
    seed = ctx.obj["seed"]
    spec = sim.random_scene_spec(seed, objects, tuple(room), lighting,
                                 palette)
    scene = sim.generate_scene(spec)
    rig = sim.default_rig()
    pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, 1.0]))
    rng = np.random.default_rng(seed)
    clouds = []
    gt = {}
    streams = {cam.camera_id: [] for cam in rig.cameras}
    cam_offset_ns = int(camera_offset_ms * 1e6)
    for k in range(frames):
        t = int(k * 1e9 / rate)
        cloud, colours = sim.simulate_lidar(scene, rig, pose, t,
                                            noise_sigma=noise, rng=rng,
                                            with_ground_truth=True)
        clouds.append(cloud)
        gt[t] = colours
        for cam in rig.cameras:
            streams[cam.camera_id].append(
                sim.simulate_camera(scene, cam, pose, t + cam_offset_ns,
                                    lighting))
    out_dir = Path(out)
    fileio.write_frame_dir(out_dir, clouds, streams,
                           gt_colours=gt if write_gt else None)
    bundle = sim.ground_truth_bundle(rig)
    fileio.save_bundle(out_dir / "calibration.json", bundle)
    (out_dir / "scene.json").write_text(
        json.dumps(spec.to_dict(), indent=2) + "\n")
    _emit({"frames": frames,
           "points_per_frame": [len(c) for c in clouds],
           "cameras": sorted(streams),
           "lighting": lighting,
           "output_dir": str(out_dir),
           "calibration": str(out_dir / "calibration.json")}, None)


@cli.command("coverage")
@click.option("--radius", default=1.0, show_default=True,
              help="Query radius (m) for blind-sector analysis.")
@click.option("--cameras", default=4, show_default=True,
              help="Symmetric layout camera count (ignored with --calib).")
@click.option("--offset", default=0.1, show_default=True)
@click.option("--half-fov", default=50.0, show_default=True)
@click.option("--svg", type=click.Path(), default=None,
              help="Write a polar coverage plot to this SVG file.")
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def coverage_cmd(ctx, radius, cameras, offset, half_fov, svg, out):
    """Analyse ring-layout coverage (Eq. 1) and blind sectors."""
    layout = None
    if ctx.obj.get("calib"):
        layout = fileio.load_bundle(ctx.obj["calib"]).layout()
        if layout is None:
            raise ConfigurationError(
                "calibration bundle has no layout entries")
    if layout is None:
        wedges = [coverage.CameraWedge(360.0 * i / cameras, offset, half_fov)
                  for i in range(cameras)]
        layout = coverage.CameraLayout(tuple(wedges))
    report = coverage.analyse(layout, radius)
    if svg:
        Path(svg).write_text(coverage.polar_svg(layout, radius))
    _emit(report.to_dict(), out)


@cli.command("calibrate-color")
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--chart", "chart_path", required=True, type=click.Path(),
              help="Chart JSON: reference_rgb (24x3) + patch_regions "
                   "(24 x [x,y,w,h]).")
@click.option("--camera", type=int, default=None,
              help="Camera id to update in the --calib bundle.")
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def calibrate_color(ctx, image_path, chart_path, camera, out):
    """Regress per-channel colour coefficients from a chart photo."""
    chart_doc = json.loads(Path(chart_path).read_text())
    try:
        chart = colorcal.ColorChart(
            np.asarray(chart_doc["reference_rgb"], dtype=np.float64),
            tuple(tuple(r) for r in chart_doc["patch_regions"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"invalid chart JSON: {exc}") from exc
    img = _load_image(image_path)
    observed = colorcal.extract_patch_means(img, chart)
    coeffs = colorcal.fit_coefficients(observed, chart.reference_rgb)
    payload = fileio._coeffs_to_dict(coeffs)
    if camera is not None:
        bundle = _require_calib(ctx)
        if camera not in bundle.cameras:
            raise ConfigurationError(f"camera {camera} not in bundle")
        old = bundle.cameras[camera]
        bundle.cameras[camera] = CameraCalibration(
            old.camera_id, old.intrinsics, old.distortion, old.extrinsic,
            coeffs, old.layout)
        fileio.save_bundle(ctx.obj["calib"], bundle)
        payload = {"camera": camera, "coefficients": payload,
                   "updated": ctx.obj["calib"]}
    _emit(payload, out)


@cli.command("calibrate-extrinsic")
@click.option("--lidar", "lidar_path", required=True, type=click.Path(),
              help="Object-level LiDAR cloud (PLY).")
@click.option("--sfm", "sfm_path", required=True, type=click.Path(),
              help="Object-level SfM cloud (PLY, scale-free frame).")
@click.option("--poses", "poses_path", required=True, type=click.Path(),
              help="Camera poses in the SfM frame: "
                   '{"poses": [{"id": k, "matrix_4x4_row_major": [...]}]}.')
@click.option("--update-calib", is_flag=True,
              help="Write recovered extrinsics into the --calib bundle.")
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def calibrate_extrinsic(ctx, lidar_path, sfm_path, poses_path,
                        update_calib, out):
    """Targetless extrinsic calibration: cluster matching, scale
    recovery (Eq. 7) and registration."""
    lidar_cloud = fileio.read_ply(lidar_path)
    sfm_cloud = fileio.read_ply(sfm_path)
    if not isinstance(lidar_cloud, PointCloud):
        lidar_cloud = PointCloud(lidar_cloud.points)
    if not isinstance(sfm_cloud, PointCloud):
        sfm_cloud = PointCloud(sfm_cloud.points)
    doc = json.loads(Path(poses_path).read_text())
    try:
        poses = {}
        for i, entry in enumerate(doc["poses"]):
            mat = np.asarray(entry["matrix_4x4_row_major"],
                             dtype=np.float64).reshape(4, 4)
            poses[int(entry["id"])] = CameraPose(
                RigidTransform.from_matrix(mat), i)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"invalid poses JSON: {exc}") from exc
    result = calibrate_extrinsics(lidar_cloud, sfm_cloud, poses,
                                  seed=ctx.obj["seed"])
    payload = {
        "scale": result.scale,
        "joint_rms": result.joint_rms,
        "cluster_pairs": [list(p) for p in result.cluster_pairs],
        "correspondence_scores": result.correspondence_scores,
        "extrinsics": {
            str(cam_id): [float(v) for v in t.matrix().ravel()]
            for cam_id, t in sorted(result.extrinsics.items())
        },
    }
    if update_calib:
        bundle = _require_calib(ctx)
        for cam_id, t in result.extrinsics.items():
            if cam_id not in bundle.cameras:
                continue
            old = bundle.cameras[cam_id]
            bundle.cameras[cam_id] = CameraCalibration(
                old.camera_id, old.intrinsics, old.distortion, t,
                old.color, old.layout)
        fileio.save_bundle(ctx.obj["calib"], bundle)
        payload["updated"] = ctx.obj["calib"]
    _emit(payload, out)


@cli.command()
@click.option("--input", "input_dir", required=True, type=click.Path())
@click.option("--blur-threshold", default=BLUR_THRESHOLD, show_default=True)
@click.option("--window-ms", default=SYNC_WINDOW_NS / 1e6, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def sync(input_dir, blur_threshold, window_ms, out):
    """Pair LiDAR frames with sharp, in-window camera frames."""
    clouds, streams = fileio.read_frame_dir(input_dir)
    bundles = pair_frames(clouds, streams, blur_threshold=blur_threshold,
                          window_ns=int(window_ms * 1e6))
    payload = {
        "lidar_frames": len(clouds),
        "cameras": sorted(streams),
        "bundles": [{
            "timestamp_ns": b.lidar.timestamp,
            "cameras": b.present_cameras(),
            "deltas_ms": {str(k): v for k, v in
                          sorted(b.pairing_deltas_ms.items())},
        } for b in bundles],
    }
    _emit(payload, out)


@cli.command("enhance")
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--out-image", type=click.Path(), default=None,
              help="Write the (possibly enhanced) image here.")
@click.option("--target", default=enhance.DEFAULT_TARGET, show_default=True)
@click.option("--force", is_flag=True,
              help="Enhance even above the brightness gate.")
@click.option("--out", type=click.Path(), default=None)
def enhance_cmd(image_path, out_image, target, force, out):
    """Low-light enhance one image when it falls below the 0.12 gate."""
    img = _load_image(image_path)
    before = mean_brightness(img)
    enhanced = False
    no_signal = False
    if force or enhance.should_enhance(img):
        img, no_signal = enhance.builtin_enhance(img, target)
        enhanced = not no_signal
    if out_image:
        _save_image(out_image, img)
    _emit({"brightness_before": before,
           "brightness_after": mean_brightness(img),
           "enhanced": enhanced,
           "no_signal": no_signal,
           "gate": enhance.BRIGHTNESS_GATE}, out)


@cli.command("fuse")
@click.option("--input", "input_dir", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--strategy", default="batched", show_default=True,
              type=click.Choice(sorted(_STRATEGIES)))
@click.option("--ascii-ply", is_flag=True)
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def fuse_cmd(ctx, input_dir, out_dir, strategy, ascii_ply, out):
    """Colourise frames (sync + fuse only, no enhancement stage)."""
    calib = _require_calib(ctx)
    config = PipelineConfig(
        input_dir=Path(input_dir), output_dir=Path(out_dir),
        calibration=calib, strategy=_STRATEGIES[strategy],
        brightness_gate=-1.0,  # disable the enhancement stage
        smoothing_window=1,
        binary_ply=not ascii_ply)
    report = run_pipeline(config)
    _emit(report.to_dict(), out)


@cli.command()
@click.option("--points", default=300_000, show_default=True)
@click.option("--frames", default=50, show_default=True)
@click.option("--cameras", default=4, show_default=True)
@click.option("--per-point-frames", default=2, show_default=True,
              help="Frames timed with the per-point strategy.")
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def bench(ctx, points, frames, cameras, per_point_frames, out):
    """Benchmark both fusion strategies on a synthetic workload."""
    from .framesync import FrameBundle
    rng = np.random.default_rng(ctx.obj["seed"])
    rig = sim.default_rig(n_cameras=cameras)
    calib = sim.ground_truth_bundle(rig)
    width = rig.cameras[0].intrinsics.width
    height = rig.cameras[0].intrinsics.height
    bundles = []
    for k in range(frames):
        pts = rng.uniform(-6.0, 6.0, (points, 3))
        imgs = {cam.camera_id: Image(
            rng.integers(0, 256, (height, width, 3), dtype=np.uint8),
            k, cam.camera_id) for cam in rig.cameras}
        bundles.append(FrameBundle(PointCloud(pts, timestamp=k), imgs, {}))
    report = benchmark_fusion(bundles, calib,
                              per_point_frames=per_point_frames)
    _emit(report.to_dict(), out)


@cli.command()
@click.option("--input", "input_dir", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--strategy", default="batched", show_default=True,
              type=click.Choice(sorted(_STRATEGIES)))
@click.option("--blur-threshold", default=BLUR_THRESHOLD, show_default=True)
@click.option("--window-ms", default=SYNC_WINDOW_NS / 1e6, show_default=True)
@click.option("--gate", default=enhance.BRIGHTNESS_GATE, show_default=True)
@click.option("--smoothing-window", default=4, show_default=True)
@click.option("--no-color-correction", is_flag=True)
@click.option("--ascii-ply", is_flag=True)
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def run(ctx, input_dir, out_dir, strategy, blur_threshold, window_ms, gate,
        smoothing_window, no_color_correction, ascii_ply, out):
    """Full pipeline: sync, correct, enhance, smooth, fuse, report."""
    calib = _require_calib(ctx)
    config = PipelineConfig(
        input_dir=Path(input_dir), output_dir=Path(out_dir),
        calibration=calib, strategy=_STRATEGIES[strategy],
        blur_threshold=blur_threshold,
        sync_window_ns=int(window_ms * 1e6),
        brightness_gate=gate,
        smoothing_window=smoothing_window,
        apply_color_correction=not no_color_correction,
        binary_ply=not ascii_ply)
    report = run_pipeline(config)
    _emit(report.to_dict(), out)


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except ConfigurationError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(2)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(3)
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(4)
    except CloudpaintError as exc:  # pragma: no cover - safety net
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
