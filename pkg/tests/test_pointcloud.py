import numpy as np
import pytest

from squash import PointCloud, load_hpc, save_hpc
from squash.errors import MagicMismatchError, TruncatedFileError, ValidationError
from squash.pointcloud import concat_clouds


def test_shape_validation():
    with pytest.raises(ValidationError):
        PointCloud(np.zeros((4, 2)))
    with pytest.raises(ValidationError):
        PointCloud(np.zeros((4, 3)), np.zeros((3, 1)))


def test_empty_cloud_ok():
    cloud = PointCloud(np.zeros((0, 3)))
    assert cloud.n == 0 and cloud.c == 0


def test_hpc_round_trip(tmp_path, rng):
    pts = rng.uniform(-100, 100, (200, 3)).astype(np.float32).astype(np.float64)
    ch = rng.standard_normal((200, 3)).astype(np.float32)
    cloud = PointCloud(pts, ch)
    path = tmp_path / "scan.hpc"
    save_hpc(cloud, path)
    loaded = load_hpc(path)
    assert loaded == cloud


def test_hpc_zero_channel_round_trip(tmp_path):
    cloud = PointCloud([[1.0, 2.0, 3.0]])
    save_hpc(cloud, tmp_path / "s.hpc")
    assert load_hpc(tmp_path / "s.hpc") == cloud


def test_hpc_bad_magic(tmp_path):
    path = tmp_path / "bad.hpc"
    path.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(MagicMismatchError):
        load_hpc(path)


def test_hpc_truncated(tmp_path, rng):
    cloud = PointCloud(rng.uniform(-1, 1, (10, 3)))
    path = tmp_path / "t.hpc"
    save_hpc(cloud, path)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(TruncatedFileError):
        load_hpc(path)


def test_concat_requires_matching_widths(rng):
    a = PointCloud(rng.uniform(-1, 1, (5, 3)), rng.standard_normal((5, 2)))
    b = PointCloud(rng.uniform(-1, 1, (5, 3)))
    with pytest.raises(ValidationError):
        concat_clouds([a, b])
    merged = concat_clouds([a, a])
    assert merged.n == 10 and merged.c == 2
