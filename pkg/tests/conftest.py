"""Shared fixtures and synthetic-oracle builders for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from cloudpaint.geometry import (
    CameraIntrinsics,
    DistortionCoefficients,
    Image,
    PointCloud,
    RigidTransform,
    so3_exp,
)
from cloudpaint.sfm import CameraPose, Correspondence, Observation


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fx=500.0, fy=510.0, cx=320.0, cy=240.0,
                            width=640, height=480)


def random_rotation(rng, max_angle=math.pi):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def random_rigid(rng, max_angle=math.pi, max_t=1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng, max_angle),
                          rng.uniform(-max_t, max_t, 3))


def random_image(rng, h=32, w=32, timestamp=0, camera_id=0) -> Image:
    return Image(rng.integers(0, 256, (h, w, 3), dtype=np.uint8),
                 timestamp, camera_id)


def textured_image(rng, h=64, w=64, timestamp=0, camera_id=0) -> Image:
    """High-frequency texture: Laplacian variance far above the blur
    threshold."""
    base = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    base[::2] = 255 - base[::2]
    return Image(base, timestamp, camera_id)


def flat_image(value, h=32, w=32, timestamp=0, camera_id=0) -> Image:
    px = np.full((h, w, 3), value, dtype=np.uint8)
    return Image(px, timestamp, camera_id)


# ---------------------------------------------------------------------------
# synthetic multi-view SfM scene with exact pixels


def sfm_scene(n_points=20, n_views=3, seed=1):
    """Exact-pixel multi-view scene; returns (k, poses, points, pixels)
    where pixels[v][i] is the noiseless projection of point i in view v."""
    rng = np.random.default_rng(seed)
    k = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0,
                        width=640, height=480)
    points = np.column_stack([
        rng.uniform(-1.5, 1.5, n_points),
        rng.uniform(-1.0, 1.0, n_points),
        rng.uniform(4.0, 8.0, n_points),
    ])
    poses = [CameraPose(RigidTransform.identity(), 0)]
    for v in range(1, n_views):
        angle = 0.12 * v
        r = so3_exp(np.array([0.0, angle, 0.0]))
        t = np.array([-0.8 * v, 0.1 * v, 0.05 * v])
        poses.append(CameraPose(RigidTransform(r, t), v))
    pixels = []
    for pose in poses:
        t = pose.transform
        p = points @ t.rotation.T + t.translation
        assert np.all(p[:, 2] > 0)
        u = k.fx * p[:, 0] / p[:, 2] + k.cx
        v_ = k.fy * p[:, 1] / p[:, 2] + k.cy
        pixels.append(np.column_stack([u, v_]))
    return k, poses, points, pixels


def sfm_correspondences(pixels, a=0, b=1):
    return [Correspondence(tuple(pixels[a][i]), tuple(pixels[b][i]))
            for i in range(len(pixels[a]))]


def sfm_observations(pixels):
    return [Observation(i, v, tuple(pixels[v][i]))
            for v in range(len(pixels)) for i in range(len(pixels[v]))]


# ---------------------------------------------------------------------------
# synthetic object clouds for registration


def box_cloud(rng, centre, size, n=400):
    """Points uniformly on the surface of an axis-aligned box."""
    centre = np.asarray(centre, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-0.5, 0.5, (n, 2))
    pts = np.empty((n, 3))
    for f in range(6):
        m = face == f
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        others = [i for i in range(3) if i != axis]
        pts[m, axis] = sign * 0.5
        pts[m, others[0]] = uv[m, 0]
        pts[m, others[1]] = uv[m, 1]
    return centre + pts * size


def object_scene_clouds(rng, n_objects=3, n_per_object=400):
    """Several well-separated surface boxes; returns stacked points."""
    centres = [np.array([2.2 * i - 2.2, 0.4 * (i % 2), 0.5])
               for i in range(n_objects)]
    sizes = [np.array([0.6, 0.5, 0.8]) * (1.0 + 0.2 * i)
             for i in range(n_objects)]
    parts = [box_cloud(rng, c, s, n_per_object)
             for c, s in zip(centres, sizes)]
    return np.vstack(parts)
