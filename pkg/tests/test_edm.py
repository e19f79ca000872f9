import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigidloc.edm import (
    CompletionConfig, DisconnectedGraph, MeasuredEdm, build_measured_edm, complete_edm,
    completion_objective, dump_csv, edm_frobenius_error, estimate_bounds, is_edm, load_csv,
    shortest_path_bounds, true_edm,
)
from rigidloc.geometry import AnchorSet, Pose, TagLayout, TofMeasurementSet, tag_anchor_ranges, tag_positions
from rigidloc.scene import compute_visibility
from rigidloc.scenes import WAREHOUSE_ANCHORS_EN, scene_2d, scene_warehouse


def random_scene(rng, dim=2, missing=0.3):
    M = int(rng.integers(4, 9))
    T = int(rng.integers(2, 5))
    anchors = AnchorSet(rng.uniform(-30, 30, size=(M, dim)))
    layout = TagLayout(rng.uniform(-3, 3, size=(T, dim)))
    att = rng.uniform(-np.pi, np.pi, size=1 if dim == 2 else 3)
    if dim == 3:
        att[1] = rng.uniform(-1.2, 1.2)
    pose = Pose(rng.uniform(-10, 10, size=dim), att)
    pts = tag_positions(pose, layout)
    vis = rng.random((T, M)) > missing
    return anchors, layout, pose, pts, vis


def measurements(anchors, layout, pts, vis, sigma, rng):
    r = tag_anchor_ranges(pts, anchors, layout)
    noisy = np.where(vis, np.abs(r + sigma * rng.standard_normal(r.shape)), np.nan)
    return TofMeasurementSet(noisy, sigma)


def test_noiseless_complete_measured_edm_is_exact():
    sc = scene_2d()
    pts = tag_positions(sc.pose, sc.layout)
    tofs = TofMeasurementSet(tag_anchor_ranges(pts, sc.anchors, sc.layout), 0.0)
    me = build_measured_edm(sc.anchors, sc.layout, tofs)
    np.testing.assert_allclose(np.sqrt(me.d_tilde), np.sqrt(true_edm(sc.anchors, sc.layout, pts)), atol=1e-12)
    assert np.all(me.weights == 1)


def test_warehouse_measured_edm_shape_and_anchor_block():
    sc = scene_warehouse()
    pts = tag_positions(sc.pose, sc.layout)
    tofs = TofMeasurementSet(tag_anchor_ranges(pts, sc.anchors, sc.layout), 0.1)
    me = build_measured_edm(sc.anchors, sc.layout, tofs)
    assert me.d_tilde.shape == (20, 20)
    a = WAREHOUSE_ANCHORS_EN
    expected = np.sum((a[:, None] - a[None]) ** 2, axis=2)
    np.testing.assert_allclose(me.d_tilde[:17, :17], expected, atol=1e-9)
    assert me.d_tilde[0, 3] == pytest.approx((47.0 - 0.5) ** 2)


def test_one_missing_tof_gives_symmetric_zero_pair():
    sc = scene_2d()
    r = tag_anchor_ranges(tag_positions(sc.pose, sc.layout), sc.anchors, sc.layout)
    r[1, 3] = np.nan
    me = build_measured_edm(sc.anchors, sc.layout, TofMeasurementSet(r, 0.0))
    off = ~np.eye(me.n_nodes, dtype=bool)
    zeros = np.argwhere((me.d_tilde == 0) & off)
    assert sorted(map(tuple, zeros)) == [(3, 6), (6, 3)]
    assert me.weights[3, 6] == 0 and me.weights[6, 3] == 0
    assert np.sum(me.weights == 0) == 2


def test_inconsistent_dimensions_rejected():
    sc = scene_2d()
    with pytest.raises(ValueError):
        build_measured_edm(sc.anchors, sc.layout, TofMeasurementSet(np.ones((3, 5)), 0.1))


def test_bounds_without_missing_are_bands():
    sc = scene_2d()
    pts = tag_positions(sc.pose, sc.layout)
    rng = np.random.default_rng(0)
    tofs = measurements(sc.anchors, sc.layout, pts, np.ones((4, 5), bool), 0.1, rng)
    me = build_measured_edm(sc.anchors, sc.layout, tofs)
    b = estimate_bounds(me, sc.layout)
    M = 5
    sd = np.sqrt(me.d_tilde[M:, :M])
    np.testing.assert_allclose(np.sqrt(b.lower[M:, :M]), sd - 0.3, atol=1e-12)
    np.testing.assert_allclose(np.sqrt(b.upper[M:, :M]), sd + 0.3, atol=1e-12)
    # midpoint of (d -+ 3 sigma)^2 is d^2 + 9 sigma^2
    assert np.max(np.abs(b.initial - me.d_tilde)) <= 9 * 0.1**2 + 1e-12
    np.testing.assert_array_equal(b.lower[:M, :M], b.upper[:M, :M])
    np.testing.assert_array_equal(b.lower[M:, M:], b.upper[M:, M:])


def test_triangle_bound_hand_example():
    # tag 0 misses anchor 2; tag 1 sees it at 10 m and sits 2 m from tag 0
    anchors = AnchorSet([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    layout = TagLayout([[0.0, 0.0], [2.0, 0.0]])
    r = np.array([[5.0, 15.0, np.nan], [6.0, 14.0, 10.0]])
    me = build_measured_edm(anchors, layout, TofMeasurementSet(r, 0.1))
    b = estimate_bounds(me, layout)
    assert np.sqrt(b.lower[3, 2]) == pytest.approx(7.7)
    assert np.sqrt(b.upper[3, 2]) == pytest.approx(12.3)
    assert not b.unbounded.any()


def test_zero_noise_bounds_contain_truth_on_random_scenes():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        anchors, layout, pose, pts, vis = random_scene(rng, dim=int(rng.choice([2, 3])))
        me = build_measured_edm(anchors, layout, measurements(anchors, layout, pts, vis, 0.0, rng))
        b = estimate_bounds(me, layout)
        D = true_edm(anchors, layout, pts)
        assert np.all(np.sqrt(b.lower) <= np.sqrt(D) + 1e-9)
        assert np.all(np.sqrt(D) <= np.sqrt(b.upper) + 1e-9)


def test_noisy_bound_violation_rate_below_gaussian_tail():
    rng = np.random.default_rng(5)
    violations = entries = 0
    while entries < 12000:
        anchors, layout, pose, pts, vis = random_scene(rng)
        me = build_measured_edm(anchors, layout, measurements(anchors, layout, pts, vis, 0.2, rng))
        b = estimate_bounds(me, layout)
        M = anchors.count
        D = true_edm(anchors, layout, pts)[M:, :M]
        violations += int(np.sum((D < b.lower[M:, :M]) | (D > b.upper[M:, :M])))
        entries += D.size
    assert violations / entries < 0.003


def test_triangle_upper_never_exceeds_two_hop_shortest_path():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(300):
        anchors, layout, pose, pts, vis = random_scene(rng)
        me = build_measured_edm(anchors, layout, measurements(anchors, layout, pts, vis, 0.0, rng))
        try:
            sp = shortest_path_bounds(me)
        except DisconnectedGraph:
            continue
        tri = estimate_bounds(me, layout)
        M = anchors.count
        d = np.sqrt(me.d_tilde)
        for n, m in np.argwhere(me.missing[M:, :M]):
            others = [k for k in range(layout.count) if vis[k, m]]
            if not others:
                continue
            two_hop = min(d[M + n, M + k] + d[M + k, m] for k in others)
            if abs(two_hop - np.sqrt(sp.upper[M + n, m])) < 1e-9:
                checked += 1
                assert 0.0 <= np.sqrt(tri.lower[M + n, m])
                assert np.sqrt(tri.upper[M + n, m]) <= np.sqrt(sp.upper[M + n, m]) + 1e-9
    assert checked > 50


def test_shortest_path_chain_example():
    D = np.array([[0, 9, 0], [9, 0, 16], [0, 16, 0]], dtype=float)
    W = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=float)
    me = MeasuredEdm(D, W, 2, 2, 0.0)
    b = shortest_path_bounds(me)
    assert np.sqrt(b.upper[0, 2]) == pytest.approx(7.0)
    assert b.lower[0, 2] == 0.0
    assert b.initial[0, 2] == pytest.approx(49.0 / 2)


def test_shortest_path_complete_measurements_keep_bands():
    sc = scene_2d()
    pts = tag_positions(sc.pose, sc.layout)
    me = build_measured_edm(sc.anchors, sc.layout, measurements(sc.anchors, sc.layout, pts, np.ones((4, 5), bool), 0.1,
                                                                np.random.default_rng(1)))
    sp = shortest_path_bounds(me)
    tri = estimate_bounds(me, sc.layout)
    np.testing.assert_allclose(sp.upper, tri.upper)


def test_shortest_path_disconnected_graph():
    D = np.zeros((3, 3))
    D[0, 1] = D[1, 0] = 4.0
    W = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1]], dtype=float)
    with pytest.raises(DisconnectedGraph):
        shortest_path_bounds(MeasuredEdm(D, W, 2, 2, 0.0))


def warehouse_epoch(epoch, sigma=0.1, seed=0):
    sc = scene_warehouse()
    pose = sc.trajectory.poses[epoch]
    vis = compute_visibility(sc, pose)
    pts = tag_positions(pose, sc.layout)
    rng = np.random.default_rng([seed, epoch])
    tofs = measurements(sc.anchors, sc.layout, pts, vis, sigma, rng)
    return sc, build_measured_edm(sc.anchors, sc.layout, tofs), pts


def test_shortest_path_bounds_wider_on_warehouse_epoch():
    sc, me, _ = warehouse_epoch(60)
    tri = estimate_bounds(me, sc.layout)
    sp = shortest_path_bounds(me)
    miss = me.missing
    assert miss.sum() > 0
    wider = sp.width[miss] > tri.width[miss]
    assert wider.mean() >= 0.9


def test_completion_fixed_point_on_exact_edm():
    sc = scene_2d()
    pts = tag_positions(sc.pose, sc.layout)
    me = build_measured_edm(sc.anchors, sc.layout, TofMeasurementSet(tag_anchor_ranges(pts, sc.anchors, sc.layout), 0.0))
    out = complete_edm(me, estimate_bounds(me, sc.layout))
    assert np.linalg.norm(out.d_hat - me.d_tilde) < 1e-6


def rank_violation(D, dim):
    n = D.shape[0]
    J = np.eye(n) - np.ones((n, n)) / n
    w = np.linalg.eigvalsh(-J @ D @ J / 2)
    return np.sum(np.abs(w[:-dim]))


def test_single_missing_entry_recovered():
    anchors = AnchorSet([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
    layout = TagLayout([[0.0, 0.0], [2.0, 1.0]])
    pose = Pose([4.0, 3.0], [0.4])
    pts = tag_positions(pose, layout)
    r = tag_anchor_ranges(pts, anchors, layout)
    r[1, 2] = np.nan
    me = build_measured_edm(anchors, layout, TofMeasurementSet(r, 0.0))
    b = estimate_bounds(me, layout)
    out = complete_edm(me, b)
    # oracle: sweep the unknown entry over its box and minimize the rank-2 violation
    grid = np.linspace(np.sqrt(b.lower[5, 2]), np.sqrt(b.upper[5, 2]), 200001)
    D = np.array(me.d_tilde)
    viol = []
    for s in grid[::100]:
        D[5, 2] = D[2, 5] = s**2
        viol.append(rank_violation(D, 2))
    k = int(np.argmin(viol)) * 100
    fine = grid[max(k - 100, 0):k + 101]
    viol = []
    for s in fine:
        D[5, 2] = D[2, 5] = s**2
        viol.append(rank_violation(D, 2))
    oracle = fine[int(np.argmin(viol))]
    assert oracle == pytest.approx(np.linalg.norm(pts[1] - anchors.positions[2]), abs=1e-3)
    assert np.sqrt(out.d_hat[5, 2]) == pytest.approx(oracle, abs=1e-3)


def test_completed_matrix_satisfies_box_and_edm_on_warehouse():
    for epoch in (0, 60, 121, 200):
        sc, me, pts = warehouse_epoch(epoch)
        b = estimate_bounds(me, sc.layout)
        out = complete_edm(me, b)
        D = out.d_hat
        np.testing.assert_allclose(D, D.T)
        assert np.all(np.diag(D) == 0)
        assert np.all(D >= b.lower - 1e-9) and np.all(D <= b.upper + 1e-9)
        check = is_edm(D, 2)
        assert check.is_edm, check.violations


def test_completion_objective_never_increases():
    for epoch in (10, 120, 250):
        sc, me, _ = warehouse_epoch(epoch)
        out = complete_edm(me, estimate_bounds(me, sc.layout))
        h = np.array(out.objective)
        assert len(h) == out.iterations_used + 1
        assert np.all(np.diff(h) <= 1e-9 * h[0])


def test_completion_reports_nonconvergence():
    sc, me, _ = warehouse_epoch(5)
    out = complete_edm(me, estimate_bounds(me, sc.layout), CompletionConfig(max_iters=1, convergence_tol=1e-12))
    assert out.iterations_used == 1 and not out.converged


def test_completion_config_validation():
    with pytest.raises(ValueError):
        CompletionConfig(max_iters=0)
    with pytest.raises(ValueError):
        CompletionConfig(convergence_tol=0.0)


def test_objective_matches_fidelity_on_exact_edm():
    sc = scene_2d()
    pts = tag_positions(sc.pose, sc.layout)
    me = build_measured_edm(sc.anchors, sc.layout, TofMeasurementSet(tag_anchor_ranges(pts, sc.anchors, sc.layout), 0.0))
    assert completion_objective(me.d_tilde, me, 2) == pytest.approx(0.0, abs=1e-12)


def test_is_edm_examples():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(5, 2))
    D = np.sum((p[:, None] - p[None]) ** 2, axis=2)
    check = is_edm(D, 2)
    assert check.is_edm
    assert np.sum(check.eigenvalues > 1e-9 * check.eigenvalues[0]) == 2
    bad = D.copy()
    bad[0, 1] = -bad[0, 1]
    assert not is_edm(bad, 2).is_edm
    assert not is_edm(D, 1).is_edm


def test_frobenius_error_examples():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(4, 2))
    D = np.sum((p[:, None] - p[None]) ** 2, axis=2)
    assert edm_frobenius_error(D, D) == 0.0
    E = np.sqrt(D)
    E[0, 1] += 1.0
    E[1, 0] += 1.0
    assert edm_frobenius_error(E**2, D) == pytest.approx(np.sqrt(2))
    with pytest.raises(ValueError):
        edm_frobenius_error(-D - 1, D)


def test_csv_dump_round_trip(tmp_path):
    sc, me, _ = warehouse_epoch(3)
    b = estimate_bounds(me, sc.layout)
    out = complete_edm(me, b)
    files = dump_csv(tmp_path, me, b, out)
    assert {f.name for f in files} == {"D_tilde.csv", "W.csv", "L.csv", "U.csv", "D_hat.csv"}
    assert (tmp_path / "L.csv").read_text().splitlines()[0] == "20,20"
    np.testing.assert_array_equal(load_csv(tmp_path / "D_hat.csv"), out.d_hat)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_completion_invariants_on_random_scenes(seed):
    rng = np.random.default_rng(seed)
    anchors, layout, pose, pts, vis = random_scene(rng, missing=0.25)
    vis[:, 0] = True
    me = build_measured_edm(anchors, layout, measurements(anchors, layout, pts, vis, 0.1, rng))
    b = estimate_bounds(me, layout)
    out = complete_edm(me, b)
    assert np.all(out.d_hat >= b.lower - 1e-9) and np.all(out.d_hat <= b.upper + 1e-9)
    assert is_edm(out.d_hat, 2).is_edm
