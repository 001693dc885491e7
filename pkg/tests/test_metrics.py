import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radarsplat.core import Se3Pose, Trajectory, rotation_angle
from radarsplat.errors import DimensionMismatch, TooShort
from radarsplat.imaging import gaussian_kernel1d, psnr, ssim, ssim_and_grad
from radarsplat.metrics import (
    associate,
    ate,
    chamfer_l1,
    fscore,
    map_report,
    mhd,
    odom_report,
    rpe_framewise,
    rpe_kitti,
)

seeds = st.integers(0, 2**31)


def straight(n=200, step=1.0, yaw_rate=0.0):
    """Planar path with ``step`` m per pose and ``yaw_rate`` rad per metre."""
    poses = [Se3Pose.identity()]
    rel = Se3Pose.from_euler(0, 0, yaw_rate * step, (step, 0, 0))
    for _ in range(n - 1):
        poses.append(poses[-1] @ rel)
    return Trajectory(np.arange(n) * 0.1, poses)


def rpe_oracle(est, gt, lengths):
    """Independent double loop over (length, start) with explicit arc-length walking."""
    pos = gt.positions
    t_out, r_out = [], []
    for L in lengths:
        te, re = [], []
        for i in range(len(gt)):
            acc, j = 0.0, i
            while j + 1 < len(gt) and acc <= L:
                acc += float(np.linalg.norm(pos[j + 1] - pos[j]))
                j += 1
            if acc <= L:
                continue
            Tg = np.linalg.inv(gt[i].matrix) @ gt[j].matrix
            Te = np.linalg.inv(est[i].matrix) @ est[j].matrix
            E = np.linalg.inv(Te) @ Tg
            te.append(np.linalg.norm(E[:3, 3]) / L)
            re.append(math.degrees(rotation_angle(E[:3, :3])) / L)
        if te:
            t_out.append(math.sqrt(sum(x * x for x in te) / len(te)))
            r_out.append(math.sqrt(sum(x * x for x in re) / len(re)))
    return sum(t_out) / len(t_out), sum(r_out) / len(r_out)


def test_rpe_identical_is_zero():
    gt = straight()
    assert rpe_kitti(gt, gt) == (0.0, 0.0)
    assert rpe_framewise(gt, gt) == (0.0, 0.0)


def test_rpe_kitti_constant_yaw_bias():
    gt = straight(250, 1.0)
    est = straight(250, 1.0, math.radians(0.01))
    _, r_rel = rpe_kitti(est, gt)
    assert r_rel == pytest.approx(0.01, rel=0.05)


@pytest.mark.parametrize("seed", range(3))
def test_rpe_kitti_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    gt = straight(120, 1.3, 0.01)
    est = Trajectory(gt.timestamps, [p @ Se3Pose.random(rng, 0.2, 0.02) for p in gt.poses])
    got = rpe_kitti(est, gt, (20, 40, 60))
    np.testing.assert_allclose(got, rpe_oracle(est, gt, (20, 40, 60)), rtol=1e-12)


def test_rpe_kitti_too_short():
    with pytest.raises(TooShort):
        rpe_kitti(straight(10), straight(10))


def test_rpe_framewise_rigid_invariance(rng):
    gt = straight(50, 1.0, 0.02)
    shifted = gt.transformed(Se3Pose.random(rng, 10.0))
    t, r = rpe_framewise(shifted, gt)
    assert t < 1e-9 and r < 1e-6


def test_rpe_framewise_noise_model():
    rng = np.random.default_rng(0)
    sigma = 0.05
    gt = straight(1000, 1.0)
    est = Trajectory(gt.timestamps, [Se3Pose(p.rotation, p.translation + rng.normal(0, sigma, 3)) for p in gt.poses])
    t, _ = rpe_framewise(est, gt)
    # difference of two independent N(0, σ²I₃) offsets: E|e|² = 6σ²
    assert t == pytest.approx(math.sqrt(6) * sigma, rel=0.1)


def test_ate_cases(rng):
    gt = straight(30, 1.0, 0.03)
    assert ate(gt, gt) < 1e-12
    moved = gt.transformed(Se3Pose.random(rng, 20.0))
    assert ate(moved, gt) < 1e-9
    off = rng.normal(size=(30, 3))
    est = Trajectory(gt.timestamps, [Se3Pose(p.rotation, p.translation + o) for p, o in zip(gt.poses, off)])
    assert ate(est, gt, align=False) == pytest.approx(math.sqrt(np.mean((off**2).sum(1))), rel=1e-12)
    assert ate(est, gt, align=True) <= ate(est, gt, align=False)


@given(seeds)
def test_ate_aligned_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    gt = straight(20, 1.0, 0.05)
    est = Trajectory(gt.timestamps, [Se3Pose(p.rotation, p.translation + rng.normal(0, 0.3, 3)) for p in gt.poses])
    moved = est.transformed(Se3Pose.random(rng, 50.0))
    assert ate(moved, gt) == pytest.approx(ate(est, gt), abs=1e-9)


def test_pair_checks():
    with pytest.raises(DimensionMismatch):
        ate(straight(5), straight(6))
    with pytest.raises(TooShort):
        ate(straight(1), straight(1))


def test_associate_nearest_and_skew():
    gt = straight(10)
    est = Trajectory(gt.timestamps + 0.01, gt.poses)
    e, g = associate(est, gt, 0.05)
    assert len(e) == 10
    np.testing.assert_allclose(g.timestamps, gt.timestamps)
    late = Trajectory(gt.timestamps + 0.04, gt.poses)
    e, g = associate(late, gt, 0.03)
    assert len(e) == 0


def test_associate_interp():
    gt = straight(10, 1.0)
    est = Trajectory(gt.timestamps[:-1] + 0.05, gt.poses[:-1])
    e, g = associate(est, gt, interp=True)
    assert len(e) == 9
    np.testing.assert_allclose(g.positions[:, 0], np.arange(9) + 0.5, atol=1e-12)


def test_odom_report_short_path_gives_nan_drift():
    rep = odom_report(straight(5), straight(5))
    assert math.isnan(rep.t_rel) and rep.ate == 0.0


# ------------------------------------------------------------------ point maps


def test_point_metric_closed_forms():
    a = np.zeros((1, 3))
    b = np.array([[1.0, 0, 0]])
    assert chamfer_l1(a, b) == 1.0 and mhd(a, b) == 1.0 and fscore(a, b) == 0.0
    pts = np.random.default_rng(0).normal(size=(30, 3))
    assert chamfer_l1(pts, pts) == 0.0 and mhd(pts, pts) == 0.0 and fscore(pts, pts) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_point_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-2, 2, (int(rng.integers(50, 1000)), 3))
    b = rng.uniform(-2, 2, (int(rng.integers(50, 1000)), 3))
    D = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
    da, db = D.min(1), D.min(0)
    assert chamfer_l1(a, b) == pytest.approx(0.5 * (da.mean() + db.mean()), abs=1e-9)
    assert mhd(a, b) == pytest.approx(max(da.mean(), db.mean()), abs=1e-9)
    p, r = (da < 0.3).mean(), (db < 0.3).mean()
    assert fscore(a, b, 0.3) == pytest.approx(2 * p * r / (p + r), abs=1e-12)
    assert chamfer_l1(a, b, squared=True) == pytest.approx(0.5 * ((da**2).mean() + (db**2).mean()), abs=1e-9)


@given(seeds)
def test_point_metrics_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(40, 3)), rng.normal(size=(25, 3))
    assert chamfer_l1(a, b) == pytest.approx(chamfer_l1(b, a))
    assert mhd(a, b) == pytest.approx(mhd(b, a))
    assert 0 <= fscore(a, b) <= 1


def test_point_metrics_empty():
    with pytest.raises(ValueError):
        chamfer_l1(np.zeros((0, 3)), np.zeros((1, 3)))


def test_map_report():
    a = np.zeros((2, 3))
    img = np.full((16, 16, 3), 0.5)
    rep = map_report(a, a, image=img, reference=img + 0.1)
    assert rep.fscore == 1.0 and rep.psnr == pytest.approx(20.0)


# ------------------------------------------------------------------ images


def test_psnr_ssim_identical():
    img = np.random.default_rng(0).uniform(size=(20, 20, 3))
    assert psnr(img, img) == math.inf
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_psnr_offset():
    a = np.random.default_rng(0).uniform(0.2, 0.8, (16, 16, 3))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(32, 32, 3))
    n = rng.normal(size=a.shape)
    vals = [psnr(a, a + s * n) for s in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def ssim_oracle(a, b):
    """Per-pixel weighted window sums with zero padding outside the image."""
    k = gaussian_kernel1d(11, 1.5)
    w2 = np.outer(k, k)
    H, W = a.shape
    out = np.zeros((H, W))
    ap = np.pad(a, 5)
    bp = np.pad(b, 5)
    for i in range(H):
        for j in range(W):
            wa, wb = ap[i : i + 11, j : j + 11], bp[i : i + 11, j : j + 11]
            ma, mb = (w2 * wa).sum(), (w2 * wb).sum()
            va = (w2 * wa * wa).sum() - ma * ma
            vb = (w2 * wb * wb).sum() - mb * mb
            cov = (w2 * wa * wb).sum() - ma * mb
            c1, c2 = 0.01**2, 0.03**2
            out[i, j] = (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    return out.mean()


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_windowed_reference(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(18, 21))
    b = np.clip(a + rng.normal(scale=0.2, size=a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)


def test_ssim_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(9, 10, 3))
    y = rng.uniform(size=(9, 10, 3))
    val, g = ssim_and_grad(x, y)
    assert val == pytest.approx(ssim(x, y))
    h = 1e-6
    for idx in [(0, 0, 0), (4, 5, 1), (8, 9, 2), (3, 0, 1)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (ssim(xp, y) - ssim(xm, y)) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_image_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        ssim(np.zeros((2, 2)), np.zeros((3, 2)))
