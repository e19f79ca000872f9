import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigidloc.analysis import (
    SingularInformation, check_availability, crlb, epoch_error, fisher_information, rmse, rotation_constraint_basis,
)
from rigidloc.geometry import AnchorSet, Pose, TagLayout, TofMeasurementSet, tag_anchor_ranges, tag_positions
from rigidloc.pose_estimation import refine_pose
from rigidloc.scenes import scene_2d, scene_3d


def mask(counts, anchors=5):
    m = np.zeros((len(counts), anchors), bool)
    for i, c in enumerate(counts):
        m[i, :c] = True
    return m


def test_availability_examples():
    assert check_availability(mask([2, 1, 0]), 2)[0]
    ok, reason = check_availability(mask([3, 0, 0]), 2)
    assert not ok and "tags" in reason
    ok, reason = check_availability(mask([1, 1]), 2)
    assert not ok and "ranges" in reason


def test_availability_3d_rule():
    layout = TagLayout([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]])
    assert check_availability(mask([2, 2, 2, 0], 6), 3, layout)[0]
    assert not check_availability(mask([3, 3, 0, 0], 6), 3, layout)[0]
    assert not check_availability(mask([1, 1, 1, 1], 6), 3, layout)[0]
    ok, reason = check_availability(mask([2, 2, 0, 2], 6), 3, layout)
    assert not ok and "collinear" in reason


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_availability_monotone(seed, dim):
    rng = np.random.default_rng(seed)
    vis = rng.random((4, 6)) < 0.3
    before = check_availability(vis, dim)[0]
    i, j = rng.integers(4), rng.integers(6)
    vis[i, j] = True
    assert check_availability(vis, dim)[0] or not before


def log_likelihood(params, scene, visibility, sigma, measured):
    """Gaussian log-likelihood with ranges evaluated from raw parameters."""
    vis = np.asarray(visibility, bool)
    if scene.layout.dim == 2:
        pose = Pose(params[:2], params[2:])
        pts = tag_positions(pose, scene.layout)
    else:
        M = params[:9].reshape(3, 3).T  # columns mu_1..mu_3
        pts = scene.layout.local_positions @ M.T + params[9:]
    r = tag_anchor_ranges(pts, scene.anchors, scene.layout)
    return -0.5 * np.sum((measured[vis] - r[vis]) ** 2) / sigma**2


def numeric_hessian(f, x, h):
    n = len(x)
    H = np.zeros((n, n))
    for a in range(n):
        for b in range(a, n):
            ea = np.zeros(n)
            eb = np.zeros(n)
            ea[a] = h
            eb[b] = h
            H[a, b] = H[b, a] = (f(x + ea + eb) - f(x + ea - eb) - f(x - ea + eb) + f(x - ea - eb)) / (4 * h * h)
    return H


@pytest.mark.parametrize("seed", range(20))
def test_fim_matches_log_likelihood_curvature(seed):
    rng = np.random.default_rng(seed)
    sc = scene_2d() if seed % 2 == 0 else scene_3d()
    dim = sc.layout.dim
    pos = rng.uniform(-10, 10, dim)
    att = rng.uniform(-np.pi, np.pi, 1) if dim == 2 else rng.uniform([-1, -1, -np.pi], [1, 1, np.pi])
    pose = Pose(pos, att)
    vis = rng.random((sc.layout.count, sc.anchors.count)) < 0.8
    vis[:, :2] = True
    sigma = rng.uniform(0.1, 1.0)
    measured = tag_anchor_ranges(tag_positions(pose, sc.layout), sc.anchors, sc.layout)
    x0 = pose.as_vector() if dim == 2 else np.concatenate([pose.rotation.T.ravel(), pose.position])
    H = numeric_hessian(lambda x: log_likelihood(x, sc, vis, sigma, measured), x0, 1e-4)
    F = fisher_information(pose, sc.layout, sc.anchors, vis, sigma).matrix
    assert np.linalg.norm(-H - F) / np.linalg.norm(F) < 1e-4


def test_fim_zero_without_measurements_and_sigma_scaling():
    sc = scene_2d()
    vis = np.ones((4, 5), bool)
    assert not np.any(fisher_information(sc.pose, sc.layout, sc.anchors, ~vis, 0.1).matrix)
    F1 = fisher_information(sc.pose, sc.layout, sc.anchors, vis, 0.2).matrix
    F2 = fisher_information(sc.pose, sc.layout, sc.anchors, vis, 0.1).matrix
    np.testing.assert_allclose(F2, 4 * F1, rtol=1e-14)
    assert np.linalg.eigvalsh(F1).min() > -1e-9
    np.testing.assert_array_equal(F1, F1.T)


@pytest.mark.parametrize("make", [scene_2d, scene_3d])
def test_crlb_scales_with_sigma_squared(make):
    sc = make()
    vis = np.ones((sc.layout.count, sc.anchors.count), bool)
    a = crlb(sc.pose, sc.layout, sc.anchors, vis, 0.1)
    b = crlb(sc.pose, sc.layout, sc.anchors, vis, 0.2)
    np.testing.assert_allclose(b.covariance, 4 * a.covariance, rtol=1e-9, atol=1e-15)
    assert b.position_bound == pytest.approx(2 * a.position_bound)
    assert np.linalg.eigvalsh(a.covariance).min() > -1e-12


def test_rotation_constraint_basis_shape():
    sc = scene_3d()
    C = rotation_constraint_basis(sc.pose.rotation)
    assert C.shape == (12, 6)
    np.testing.assert_allclose(C.T @ C, np.eye(6), atol=1e-12)
    # moving along the basis keeps the columns orthonormal to first order
    R = sc.pose.rotation
    for k in range(6):
        dM = C[:9, k].reshape(3, 3).T
        np.testing.assert_allclose(R.T @ dM + dM.T @ R, 0, atol=1e-12)


def test_crlb_singular_when_unavailable():
    sc = scene_2d()
    vis = mask([3, 0, 0, 0])
    with pytest.raises(SingularInformation):
        crlb(sc.pose, sc.layout, sc.anchors, vis, 0.1)
    with pytest.raises(SingularInformation):
        crlb(sc.pose, sc.layout, sc.anchors, np.zeros((4, 5), bool), 0.1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_crlb_monotone_when_pairs_removed(seed):
    rng = np.random.default_rng(seed)
    sc = scene_2d() if seed % 2 else scene_3d()
    vis = rng.random((sc.layout.count, sc.anchors.count)) < 0.85
    vis[:, :3] = True
    full = crlb(sc.pose, sc.layout, sc.anchors, vis, 0.3)
    on = np.argwhere(vis)
    i, j = on[rng.integers(len(on))]
    vis[i, j] = False
    try:
        fewer = crlb(sc.pose, sc.layout, sc.anchors, vis, 0.3)
    except SingularInformation:
        return
    d0, d1 = np.diag(full.covariance), np.diag(fewer.covariance)
    assert np.all(d1 >= d0 - 1e-9 * max(d0.max(), 1e-12))


def test_crlb_matches_monte_carlo_of_refinement():
    sc = scene_2d()
    sigma = 0.1
    vis = np.ones((4, 5), bool)
    bound = crlb(sc.pose, sc.layout, sc.anchors, vis, sigma)
    truth = tag_anchor_ranges(tag_positions(sc.pose, sc.layout), sc.anchors, sc.layout)
    rng = np.random.default_rng(11)
    pos, yaw = [], []
    for _ in range(10000):
        tofs = TofMeasurementSet(truth + sigma * rng.standard_normal(truth.shape), sigma)
        est = refine_pose(sc.pose, tofs, sc.anchors, sc.layout).pose
        p, a = epoch_error(est, sc.pose)
        pos.append(p)
        yaw.append(a)
    assert rmse(pos) == pytest.approx(bound.position_bound, rel=0.15)
    assert rmse(yaw) == pytest.approx(bound.attitude_bound, rel=0.15)


def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
    assert rmse([[3.0, 4.0]]) == pytest.approx(5.0)
    assert rmse([2 * np.pi + 0.1], 0.0, angular=True) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        rmse([])


def test_rmse_rotation_uses_frobenius():
    R = np.eye(3)
    Q = np.diag([1.0, -1.0, -1.0])
    assert rmse([Q], R) == pytest.approx(np.sqrt(8.0))


def test_epoch_error_examples():
    p = Pose([1.0, 2.0], [0.3])
    assert epoch_error(p, p) == (0.0, 0.0)
    pos, att = epoch_error(Pose([1.0, 2.0], [0.3 + 2 * np.pi]), p)
    assert att == pytest.approx(0.0, abs=1e-12)
    pos, att = epoch_error(Pose([4.0, 6.0], [0.2]), p)
    assert pos == pytest.approx(5.0) and att == pytest.approx(0.1)
    with pytest.raises(ValueError):
        epoch_error(Pose([0.0, 0.0, 0.0], [0.0, 0.0, 0.0]), p)


def test_sparse_anchor_geometry_fim_rank():
    anchors = AnchorSet([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    layout = TagLayout([[0.0, 0.0], [1.0, 0.0]])
    pose = Pose([3.0, 3.0], [0.2])
    vis = np.array([[True, True, False], [True, False, False]])
    F = fisher_information(pose, layout, anchors, vis, 0.1).matrix
    assert np.linalg.matrix_rank(F) == 3
