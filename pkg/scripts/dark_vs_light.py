#!/usr/bin/env python3
"""Run the full pipeline on a well-lit scene and on the same scene under
heavy lighting attenuation, and compare coloured fractions.

The dark run uses the simulator's bright (near-white) palette so surface
signal survives RGB8 quantisation at the attenuated level; every dark
frame should trigger the 0.12 enhancement gate while the final coloured
fraction stays within half a percentage point of the light run.
"""

import argparse
import json
import tempfile
from pathlib import Path

import numpy as np

from cloudpaint import fileio, sim
from cloudpaint.geometry import RigidTransform
from cloudpaint.pipeline import PipelineConfig, run_pipeline


def _simulate(root: Path, lighting: float, seed: int, frames: int) -> None:
    spec = sim.random_scene_spec(seed, 5, lighting=lighting,
                                 palette="bright")
    scene = sim.generate_scene(spec)
    rig = sim.default_rig()
    pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, 1.0]))
    clouds = []
    streams = {cam.camera_id: [] for cam in rig.cameras}
    for k in range(frames):
        t = int(k * 1e8)
        clouds.append(sim.simulate_lidar(scene, rig, pose, t))
        for cam in rig.cameras:
            streams[cam.camera_id].append(
                sim.simulate_camera(scene, cam, pose, t + 2_000_000,
                                    lighting))
    fileio.write_frame_dir(root, clouds, streams)
    fileio.save_bundle(root / "calibration.json",
                       sim.ground_truth_bundle(rig))


def _run(root: Path, out: Path):
    config = PipelineConfig(
        input_dir=root, output_dir=out,
        calibration=fileio.load_bundle(root / "calibration.json"),
        blur_threshold=-1.0)  # synthetic renders are noiseless/flat
    return run_pipeline(config)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--frames", type=int, default=5)
    ap.add_argument("--dark-lighting", type=float, default=0.002)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        results = {}
        for name, lighting in (("light", 1.0),
                               ("dark", args.dark_lighting)):
            root = tmp / name
            _simulate(root, lighting, args.seed, args.frames)
            report = _run(root, tmp / f"{name}_out")
            results[name] = {
                "lighting": lighting,
                "frames": report.frames_processed,
                "images_enhanced": report.images_enhanced,
                "coloured_fraction": report.coloured_fraction_mean,
            }
        delta = abs(results["light"]["coloured_fraction"]
                    - results["dark"]["coloured_fraction"])
        results["coloured_fraction_delta_pp"] = delta
        print(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
