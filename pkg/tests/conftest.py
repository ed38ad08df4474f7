import numpy as np
import pytest

from squash import PointCloud, Pose6DoF, SparseFeatureGrid, Traversal


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_grid(rng, n=64, d=1, delta_m=0.3, span=12, lo=None) -> SparseFeatureGrid:
    """Random sparse grid with occupied support inside a span^3 box."""
    if lo is None:
        lo = rng.integers(-20, 20, size=3)
    coords = rng.integers(0, span, size=(n, 3)) + lo
    coords = np.unique(coords, axis=0)
    feats = rng.standard_normal((coords.shape[0], d)).astype(np.float32)
    # Avoid exact-zero vectors so constructed support == requested support.
    feats[np.all(feats == 0.0, axis=1), 0] = 1.0
    return SparseFeatureGrid(coords, feats, delta_m)


def random_pose(rng) -> Pose6DoF:
    a, b, c = rng.uniform(-np.pi, np.pi, 3)

    def rot_z(t):
        return np.array([[np.cos(t), -np.sin(t), 0], [np.sin(t), np.cos(t), 0], [0, 0, 1]])

    def rot_x(t):
        return np.array([[1, 0, 0], [0, np.cos(t), -np.sin(t)], [0, np.sin(t), np.cos(t)]])

    rotation = rot_z(a) @ rot_x(b) @ rot_z(c)
    return Pose6DoF(rotation, rng.uniform(-50, 50, 3))


def straight_traversal(
    n_frames=9, step_m=2.5, points_per_frame=40, seed=0, name="t", timestamp=0.0
) -> Traversal:
    """Identity-heading drive along +x with small random clouds."""
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(n_frames):
        pose = Pose6DoF(np.eye(3), np.array([i * step_m, 0.0, 1.5]))
        pts = rng.uniform(-5, 5, size=(points_per_frame, 3))
        frames.append((PointCloud(pts), pose))
    return Traversal(frames=tuple(frames), name=name, timestamp=timestamp)
