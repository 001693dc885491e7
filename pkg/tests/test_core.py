import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radarsplat.core import (
    REORTHO_CHAIN,
    Camera,
    RadarFrame,
    Se3Pose,
    Trajectory,
    from_euler,
    matrix_to_quat,
    pose_error,
    quat_to_matrix,
    to_euler,
    transform_frame,
)
from radarsplat.errors import DimensionMismatch, GimbalLock

seeds = st.integers(0, 2**32 - 1)


def random_pose(seed, max_t=5.0):
    return Se3Pose.random(np.random.default_rng(seed), max_t)


def test_identity_compose():
    I = Se3Pose.identity()
    assert (I @ I).allclose(I, 0.0)


@given(seeds)
def test_compose_with_inverse_is_identity(seed):
    T = random_pose(seed)
    assert (T @ T.inverse()).allclose(Se3Pose.identity(), 1e-12)
    assert (T.inverse() @ T).allclose(Se3Pose.identity(), 1e-12)


@given(seeds)
def test_compose_matches_sequential_application(seed):
    rng = np.random.default_rng(seed)
    a, b = Se3Pose.random(rng, 5.0), Se3Pose.random(rng, 5.0)
    x = rng.uniform(-10, 10, (100, 3))
    np.testing.assert_allclose((a @ b).apply(x), a.apply(b.apply(x)), atol=1e-12, rtol=0)


@given(seeds)
def test_compose_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (Se3Pose.random(rng, 5.0) for _ in range(3))
    assert ((a @ b) @ c).allclose(a @ (b @ c), 1e-12)


@given(seeds)
def test_rotation_is_orthonormal(seed):
    R = random_pose(seed).rotation
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1) < 1e-9


def test_long_chain_stays_on_so3(rng):
    step = Se3Pose.random(rng, 0.1, 0.05)
    pose = Se3Pose.identity()
    for _ in range(3 * REORTHO_CHAIN):
        pose = pose @ step
    assert pose.chain <= REORTHO_CHAIN
    np.testing.assert_allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-9)


def test_euler_identity():
    assert to_euler(np.eye(3)) == (0.0, 0.0, 0.0)


def test_euler_yaw_90():
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(to_euler(R), (0.0, 0.0, math.pi / 2), atol=1e-15)


def test_euler_is_intrinsic_zyx():
    r, p, y = 0.3, -0.2, 1.1
    Rx = np.array([[1, 0, 0], [0, math.cos(r), -math.sin(r)], [0, math.sin(r), math.cos(r)]])
    Ry = np.array([[math.cos(p), 0, math.sin(p)], [0, 1, 0], [-math.sin(p), 0, math.cos(p)]])
    Rz = np.array([[math.cos(y), -math.sin(y), 0], [math.sin(y), math.cos(y), 0], [0, 0, 1]])
    np.testing.assert_allclose(from_euler(r, p, y), Rz @ Ry @ Rx, atol=1e-15)


def test_euler_round_trip_200_random():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        R = Se3Pose.random(rng).rotation
        worst = max(worst, np.abs(from_euler(*to_euler(R)) - R).max())
    assert worst < 1e-9


@pytest.mark.parametrize("pitch", [math.pi / 2, -math.pi / 2, math.pi / 2 - 1e-8])
def test_gimbal_lock(pitch):
    with pytest.raises(GimbalLock):
        to_euler(from_euler(0.1, pitch, 0.2))


def test_gimbal_margin_ok():
    to_euler(from_euler(0.1, math.pi / 2 - 1e-4, 0.2))


@given(seeds)
def test_quaternion_round_trip(seed):
    R = random_pose(seed).rotation
    q = matrix_to_quat(R)
    assert q[0] >= 0 and abs(np.linalg.norm(q) - 1) < 1e-12
    np.testing.assert_allclose(quat_to_matrix(q), R, atol=1e-12)


def test_transform_frame_identity_and_translation():
    f = RadarFrame.from_points([[1.0, 0.0, 0.0]], [2.0], [3.0], timestamp=1.5)
    g = transform_frame(f, Se3Pose.identity())
    np.testing.assert_array_equal(g.positions, f.positions)
    h = transform_frame(f, Se3Pose(np.eye(3), [0.0, 1.0, 0.0]))
    np.testing.assert_array_equal(h.positions, [[1.0, 1.0, 0.0]])
    assert h.rrv[0] == 2.0 and h.rcs[0] == 3.0 and h.timestamp == 1.5


@given(seeds)
def test_transform_frame_matches_per_point_oracle(seed):
    rng = np.random.default_rng(seed)
    f = RadarFrame.from_points(rng.normal(size=(50, 3)) * 10, rng.normal(size=50), rng.normal(size=50))
    T = Se3Pose.random(rng, 5.0)
    g = transform_frame(f, T)
    for p, q in zip(f.positions, g.positions):
        np.testing.assert_allclose(q, T.rotation @ p + T.translation, atol=1e-12)
    np.testing.assert_array_equal(g.rrv, f.rrv)
    np.testing.assert_array_equal(g.rcs, f.rcs)
    d0 = np.linalg.norm(f.positions[:, None] - f.positions[None], axis=-1)
    d1 = np.linalg.norm(g.positions[:, None] - g.positions[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-9)


def test_frame_validation():
    with pytest.raises(DimensionMismatch):
        RadarFrame.from_points(np.zeros((3, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        RadarFrame.from_points([[np.nan, 0, 0]])
    f = RadarFrame.from_points(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        f.positions[0, 0] = 1.0


def test_trajectory_relative_round_trip(rng):
    rel = [Se3Pose.random(rng, 1.0, 0.2) for _ in range(9)]
    traj = Trajectory.from_relative(np.arange(10) * 0.1, rel)
    assert traj[0].allclose(Se3Pose.identity(), 0)
    for a, b in zip(traj.relative(), rel):
        assert a.allclose(b, 1e-12)


def test_trajectory_requires_increasing_time():
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], [Se3Pose.identity()] * 2)
    with pytest.raises(DimensionMismatch):
        Trajectory([0.0], [Se3Pose.identity()] * 2)


def test_trajectory_anchored_and_path_length():
    poses = [Se3Pose(np.eye(3), [x, 1.0, 0.0]) for x in (0.0, 3.0, 7.0)]
    traj = Trajectory([0, 1, 2], poses)
    assert traj.path_length() == 7.0
    anch = traj.anchored()
    assert anch[0].allclose(Se3Pose.identity(), 0)
    np.testing.assert_allclose(anch.positions[:, 0], [0, 3, 7])


def test_pose_error():
    a = Se3Pose.identity()
    b = Se3Pose.from_euler(0, 0, 0.25, (3.0, 4.0, 0.0))
    t, r = pose_error(a, b)
    assert t == pytest.approx(5.0) and r == pytest.approx(0.25)


def test_camera_optical_axis_projects_to_principal_point():
    cam = Camera(100.0, 120.0, 31.5, 17.25, 64, 48, Se3Pose.identity())
    uv, z = cam.project(np.array([[0.0, 0.0, 4.0]]))
    assert uv[0, 0] == 31.5 and uv[0, 1] == 17.25 and z[0] == 4.0


def test_camera_body_mount_looks_forward():
    body = Se3Pose.from_euler(0, 0, 0.4, (2.0, -1.0, 1.0))
    cam = Camera.from_body_pose(body, 64, 64, 90.0)
    ahead = body.apply(np.array([5.0, 0.0, 0.0]))
    uv, z = cam.project(ahead[None])
    np.testing.assert_allclose(uv[0], [32.0, 32.0], atol=1e-12)
    assert z[0] == pytest.approx(5.0)
    left = body.apply(np.array([5.0, 1.0, 0.0]))
    assert cam.project(left[None])[0][0, 0] < 32.0
    up = body.apply(np.array([5.0, 0.0, 1.0]))
    assert cam.project(up[None])[0][0, 1] < 32.0
    np.testing.assert_allclose(cam.center, [2.0, -1.0, 1.0], atol=1e-12)


@given(seeds)
def test_unproject_inverts_project(seed):
    rng = np.random.default_rng(seed)
    cam = Camera.from_body_pose(Se3Pose.random(rng, 3.0), 32, 24, 70.0)
    rows, cols = rng.integers(0, 24, 20), rng.integers(0, 32, 20)
    depth = rng.uniform(0.5, 30, 20)
    uv, z = cam.project(cam.unproject(rows, cols, depth))
    np.testing.assert_allclose(uv, np.column_stack([cols + 0.5, rows + 0.5]), atol=1e-9)
    np.testing.assert_allclose(z, depth, atol=1e-9)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(0.0, 1.0, 0, 0, 4, 4, Se3Pose.identity())
    with pytest.raises(ValueError):
        Camera(1.0, 1.0, 0, 0, 0, 4, Se3Pose.identity())
