import numpy as np
import pytest

from conftest import random_pose
from squash import PointCloud, Pose6DoF, ValidationError, compose, transform_points
from squash.geometry import load_poses_csv, save_poses_csv


def test_identity_pose_is_noop(rng):
    cloud = PointCloud(rng.uniform(-10, 10, (50, 3)), rng.standard_normal((50, 2)))
    out = transform_points(cloud, Pose6DoF.identity())
    assert np.array_equal(out.points, cloud.points)
    assert np.array_equal(out.channels, cloud.channels)


def test_translation_moves_origin():
    cloud = PointCloud(np.zeros((1, 3)))
    pose = Pose6DoF(np.eye(3), np.array([1.0, 0.0, 0.0]))
    out = transform_points(cloud, pose)
    assert np.array_equal(out.points, np.array([[1.0, 0.0, 0.0]]))


def test_rotation_90deg_about_z():
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    out = transform_points(PointCloud([[1.0, 0.0, 0.0]]), Pose6DoF(rot, np.zeros(3)))
    assert np.allclose(out.points, [[0.0, 1.0, 0.0]], atol=1e-9)


def test_channels_pass_through_and_count_preserved(rng):
    cloud = PointCloud(rng.uniform(-1, 1, (30, 3)), rng.standard_normal((30, 4)))
    out = transform_points(cloud, random_pose(rng))
    assert out.n == 30
    assert np.array_equal(out.channels, cloud.channels)


def test_non_finite_points_rejected():
    with pytest.raises(ValidationError):
        PointCloud([[np.nan, 0.0, 0.0]])
    with pytest.raises(ValidationError):
        PointCloud([[np.inf, 0.0, 0.0]])


def test_rotation_validation():
    with pytest.raises(ValidationError):
        Pose6DoF(np.eye(3) * 2.0, np.zeros(3))
    # Reflection: orthonormal but det = -1.
    refl = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValidationError):
        Pose6DoF(refl, np.zeros(3))


def test_compose_identity_left_and_right(rng):
    p = random_pose(rng)
    for q in (compose(Pose6DoF.identity(), p), compose(p, Pose6DoF.identity())):
        assert np.allclose(q.rotation, p.rotation, atol=1e-15)
        assert np.allclose(q.translation, p.translation, atol=1e-15)


def test_compose_with_inverse_is_identity(rng):
    p = random_pose(rng)
    q = compose(p, p.inverse())
    assert np.allclose(q.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(q.translation, 0.0, atol=1e-9)


def test_compose_matches_double_application(rng):
    # Oracle: applying compose(a, b) equals applying b then a.
    for _ in range(10):
        a, b = random_pose(rng), random_pose(rng)
        cloud = PointCloud(rng.uniform(-20, 20, (100, 3)))
        via_compose = transform_points(cloud, compose(a, b))
        via_double = transform_points(transform_points(cloud, b), a)
        assert np.allclose(via_compose.points, via_double.points, atol=1e-9)


def test_rigid_transform_preserves_pairwise_distances(rng):
    pts = rng.uniform(-30, 30, (40, 3))
    pose = random_pose(rng)
    out = transform_points(PointCloud(pts), pose).points
    d_in = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    d_out = np.linalg.norm(out[:, None] - out[None, :], axis=-1)
    assert np.allclose(d_in, d_out, rtol=1e-6, atol=1e-9)


def test_transform_then_inverse_round_trips(rng):
    pts = rng.uniform(-30, 30, (40, 3))
    pose = random_pose(rng)
    back = transform_points(transform_points(PointCloud(pts), pose), pose.inverse())
    assert np.allclose(back.points, pts, atol=1e-9)


def test_pose_csv_round_trip(tmp_path, rng):
    rows = [(i, random_pose(rng)) for i in range(5)]
    path = tmp_path / "poses.csv"
    save_poses_csv(rows, path)
    loaded = load_poses_csv(path)
    assert len(loaded) == 5
    for (i, p), (j, q) in zip(rows, loaded):
        assert i == j
        assert np.array_equal(p.rotation, q.rotation)
        assert np.array_equal(p.translation, q.translation)


def test_pose_csv_requires_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0," + ",".join(["0"] * 12) + "\n")
    with pytest.raises(ValidationError):
        load_poses_csv(path)


def test_matrix34_round_trip(rng):
    p = random_pose(rng)
    q = Pose6DoF.from_matrix34(p.matrix34())
    assert np.array_equal(q.rotation, p.rotation)
    assert np.array_equal(q.translation, p.translation)
