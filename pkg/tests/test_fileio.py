import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudpaint import fileio
from cloudpaint.colorcal import ChannelFit, ColorCoefficients
from cloudpaint.coverage import CameraWedge
from cloudpaint.errors import ConfigurationError, MalformedStreamError
from cloudpaint.fuse import (
    NO_CAMERA,
    CalibrationBundle,
    CameraCalibration,
    ColourisedCloud,
)
from cloudpaint.geometry import (
    CameraIntrinsics,
    DistortionCoefficients,
    PointCloud,
    RigidTransform,
)
from conftest import random_image, random_rigid


def coloured_cloud(rng, n=50, ts=123):
    pts = rng.standard_normal((n, 3)) * 10
    rgb = rng.integers(0, 256, (n, 3), dtype=np.uint8)
    cam = rng.integers(0, 4, n).astype(np.int16)
    cam[rng.random(n) < 0.3] = NO_CAMERA
    return ColourisedCloud(pts, rgb, cam, ts)


class TestPly:
    @pytest.mark.parametrize("binary", [True, False])
    def test_colourised_round_trip_lossless(self, tmp_path, rng, binary):
        cloud = coloured_cloud(rng)
        path = tmp_path / "c.ply"
        fileio.write_ply(path, cloud, binary=binary)
        back = fileio.read_ply(path)
        assert isinstance(back, ColourisedCloud)
        assert np.array_equal(back.points, cloud.points)  # bit-exact
        assert np.array_equal(back.rgb, cloud.rgb)
        assert np.array_equal(back.source_camera, cloud.source_camera)
        assert back.timestamp == 123

    @pytest.mark.parametrize("binary", [True, False])
    def test_plain_cloud_round_trip(self, tmp_path, rng, binary):
        pts = rng.standard_normal((20, 3))
        inten = rng.random(20).astype(np.float32)
        cloud = PointCloud(pts, timestamp=9, intensity=inten)
        path = tmp_path / "p.ply"
        fileio.write_ply(path, cloud, binary=binary)
        back = fileio.read_ply(path)
        assert isinstance(back, PointCloud)
        assert np.array_equal(back.points, pts)
        assert np.array_equal(back.intensity, inten)
        assert back.timestamp == 9

    def test_sentinel_mapping(self, tmp_path):
        cloud = ColourisedCloud(np.zeros((2, 3)),
                                np.zeros((2, 3), dtype=np.uint8),
                                np.array([NO_CAMERA, 3], dtype=np.int16))
        path = tmp_path / "s.ply"
        fileio.write_ply(path, cloud)
        raw = path.read_bytes()
        # on disk the no-camera sentinel is uchar 255
        assert raw[-1] == 3 and raw[-29] == fileio.PLY_NO_CAMERA
        back = fileio.read_ply(path)
        assert list(back.source_camera) == [NO_CAMERA, 3]

    def test_header_structure(self, tmp_path, rng):
        path = tmp_path / "h.ply"
        fileio.write_ply(path, coloured_cloud(rng, n=7, ts=55), binary=False)
        text = path.read_text()
        head = text.split("end_header")[0]
        assert head.startswith("ply\nformat ascii 1.0\n")
        assert "comment timestamp_ns 55" in head
        assert "element vertex 7" in head

    def test_not_a_ply(self, tmp_path):
        bad = tmp_path / "x.ply"
        bad.write_bytes(b"hello world")
        with pytest.raises(MalformedStreamError):
            fileio.read_ply(bad)

    def test_truncated_binary_body(self, tmp_path, rng):
        path = tmp_path / "t.ply"
        fileio.write_ply(path, coloured_cloud(rng))
        data = path.read_bytes()
        path.write_bytes(data[:-10])
        with pytest.raises(MalformedStreamError):
            fileio.read_ply(path)

    @given(seed=st.integers(0, 10_000), binary=st.booleans())
    @settings(max_examples=25, deadline=None)
    def test_round_trip_fuzz(self, seed, binary):
        import tempfile
        from pathlib import Path
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 40))
        # extreme magnitudes must survive both formats bit-exactly
        pts = rng.standard_normal((n, 3)) * 10.0 ** rng.integers(-12, 12)
        cloud = PointCloud(pts, timestamp=int(rng.integers(0, 2 ** 62)))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "f.ply"
            fileio.write_ply(path, cloud, binary=binary)
            back = fileio.read_ply(path)
        assert np.array_equal(back.points, pts)
        assert back.timestamp == cloud.timestamp


class TestPpm:
    def test_round_trip(self, tmp_path, rng):
        img = random_image(rng, 17, 23)
        path = tmp_path / "i.ppm"
        fileio.write_ppm(path, img)
        back = fileio.read_ppm(path, timestamp=4, camera_id=2)
        assert np.array_equal(back.pixels, img.pixels)
        assert back.timestamp == 4 and back.camera_id == 2

    def test_rejects_non_ppm(self, tmp_path):
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(MalformedStreamError):
            fileio.read_ppm(path)

    def test_rejects_truncated(self, tmp_path, rng):
        img = random_image(rng, 8, 8)
        path = tmp_path / "t.ppm"
        fileio.write_ppm(path, img)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(MalformedStreamError):
            fileio.read_ppm(path)


def make_bundle(rng):
    cams = {}
    for i in range(3):
        cams[i] = CameraCalibration(
            i,
            CameraIntrinsics(fx=100.0 + i, fy=101.0, cx=32.0, cy=24.0,
                             width=64, height=48, skew=0.1 * i),
            DistortionCoefficients(k1=-0.01 * i, p1=0.001),
            random_rigid(rng),
            ColorCoefficients(ChannelFit(1.1, -2.0, 0.99),
                              ChannelFit(0.9, 1.0, 0.98),
                              ChannelFit(1.0, 0.0, 1.0)),
            CameraWedge(120.0 * i, 0.1, 50.0))
    return CalibrationBundle(cams)


class TestBundle:
    def test_round_trip(self, tmp_path, rng):
        bundle = make_bundle(rng)
        path = tmp_path / "calib.json"
        fileio.save_bundle(path, bundle)
        back = fileio.load_bundle(path)
        assert back.camera_ids() == [0, 1, 2]
        for i in back.camera_ids():
            a, b = bundle.cameras[i], back.cameras[i]
            assert a.intrinsics == b.intrinsics
            assert a.distortion == b.distortion
            assert np.allclose(a.extrinsic.matrix(), b.extrinsic.matrix(),
                               atol=1e-12)
            assert a.color == b.color
            assert a.layout == b.layout

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            fileio.load_bundle(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError):
            fileio.load_bundle(path)

    def test_missing_fields(self, tmp_path):
        path = tmp_path / "partial.json"
        path.write_text('{"cameras": [{"id": 0}]}')
        with pytest.raises(ConfigurationError):
            fileio.load_bundle(path)

    def test_defaults_for_optional_sections(self):
        d = {"cameras": [{
            "id": 2,
            "intrinsics": {"fx": 10.0, "fy": 10.0, "cx": 5.0, "cy": 5.0,
                           "width": 10, "height": 10},
            "extrinsic_4x4_row_major": list(np.eye(4).ravel()),
        }]}
        bundle = fileio.bundle_from_dict(d)
        cam = bundle.cameras[2]
        assert cam.distortion.is_zero()
        assert cam.color == ColorCoefficients.identity()
        assert cam.layout is None
        assert bundle.layout() is None


class TestFrameDir:
    def test_round_trip_with_gt(self, tmp_path, rng):
        clouds = [PointCloud(rng.standard_normal((10, 3)),
                             timestamp=int(1e8 * i)) for i in range(3)]
        streams = {k: [random_image(rng, 8, 8, timestamp=int(1e8 * i + 5),
                                    camera_id=k) for i in range(3)]
                   for k in (0, 1)}
        gt = {c.timestamp: rng.integers(0, 256, (10, 3), dtype=np.uint8)
              for c in clouds}
        fileio.write_frame_dir(tmp_path, clouds, streams, gt_colours=gt)
        back_clouds, back_streams = fileio.read_frame_dir(tmp_path)
        assert [c.timestamp for c in back_clouds] \
            == [c.timestamp for c in clouds]
        for a, b in zip(clouds, back_clouds):
            assert np.array_equal(a.points, b.points)
        assert set(back_streams) == {0, 1}
        for k in (0, 1):
            assert [f.timestamp for f in back_streams[k]] \
                == [f.timestamp for f in streams[k]]
            for a, b in zip(streams[k], back_streams[k]):
                assert np.array_equal(a.pixels, b.pixels)
        sidecars = fileio.read_gt_sidecars(tmp_path)
        assert set(sidecars) == set(gt)
        for t in gt:
            assert np.array_equal(sidecars[t], gt[t])

    def test_gt_sidecars_not_in_main_stream(self, tmp_path, rng):
        clouds = [PointCloud(rng.standard_normal((5, 3)), timestamp=10)]
        gt = {10: rng.integers(0, 256, (5, 3), dtype=np.uint8)}
        fileio.write_frame_dir(tmp_path, clouds, {}, gt_colours=gt)
        back_clouds, _ = fileio.read_frame_dir(tmp_path)
        assert len(back_clouds) == 1
        assert isinstance(back_clouds[0], PointCloud)

    def test_empty_dir(self, tmp_path):
        clouds, streams = fileio.read_frame_dir(tmp_path)
        assert clouds == [] and streams == {}
