"""Comparison methods: divide-and-conquer (DAC) and the shortest-path-bound pipeline."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .edm import DisconnectedGraph, edm_frobenius_error, true_edm
from .geometry import Pose, procrustes, vertical_offsets
from .pose_estimation import PipelineConfig, PipelineStepError, erbl_edmc_estimate

DAC_MAX_ITERS = 20
DAC_STEP_TOL = 1e-8


@dataclass(frozen=True)
class DacEstimate:
    """Result of the DAC baseline; ``pose`` is ``None`` when infeasible."""

    pose: Pose | None
    feasible: bool
    used_tags: tuple
    tag_positions: np.ndarray
    iterations: tuple
    reason: str = ""


@dataclass(frozen=True)
class BaselineReport:
    method: str
    poses: tuple
    feasible: tuple


def _linear_position(ranges, anchor_pos, z):
    """Anchor-differenced least squares for one tag (horizontal ranges in planar scenes)."""
    rho2 = np.maximum(ranges**2 - z**2, 0.0)
    a = anchor_pos
    A = 2.0 * (a[1:] - a[0])
    rhs = rho2[0] - rho2[1:] + np.sum(a[1:] ** 2, axis=1) - np.sum(a[0] ** 2)
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return sol


def single_tag_position(ranges, anchor_pos, z, max_iters=DAC_MAX_ITERS, step_tol=DAC_STEP_TOL):
    """Gauss-Newton multilateration of one tag from its own ranges.

    Returns ``(position, iterations)``; raises ``LinAlgError`` on a singular system.
    """
    x = _linear_position(ranges, anchor_pos, z)
    it = 0
    for it in range(1, max_iters + 1):
        diff = x - anchor_pos
        rng = np.sqrt(np.sum(diff**2, axis=1) + z**2)
        H = diff / rng[:, None]
        N = H.T @ H
        s = np.linalg.svd(N, compute_uv=False)
        if s[-1] <= s[0] * 1e-12:
            raise np.linalg.LinAlgError("single-tag normal matrix is singular")
        step = np.linalg.solve(N, H.T @ (ranges - rng))
        x = x + step
        if np.linalg.norm(step) < step_tol:
            break
    return x, it


def dac_estimate(tofs, anchors, layout):
    """Localize each tag from its own ranges, then fit the pose to the survivors.

    Tags with fewer than ``dim + 1`` ranges are dropped; the estimate is
    infeasible when fewer than 2 (2D) or 3 non-collinear (3D) tags remain.
    """
    dim = anchors.dim
    z_all = vertical_offsets(anchors, layout)
    used, pts, iters = [], [], []
    for i in range(layout.count):
        vis = tofs.visible_anchors(i)
        if len(vis) < dim + 1:
            continue
        try:
            p, it = single_tag_position(tofs.ranges[i, vis], anchors.positions[vis], z_all[i, vis])
        except np.linalg.LinAlgError:
            continue
        used.append(i)
        pts.append(p)
        iters.append(it)
    pts = np.array(pts).reshape(-1, dim)
    need = 2 if dim == 2 else 3
    if len(used) < need:
        return DacEstimate(None, False, tuple(used), pts, tuple(iters), f"only {len(used)} tags localizable")
    local = layout.local_positions[used]
    if dim == 3:
        s = np.linalg.svd(local - local.mean(axis=0), compute_uv=False)
        if s[1] <= 1e-9 * max(s[0], 1.0):
            return DacEstimate(None, False, tuple(used), pts, tuple(iters), "surviving tags are collinear")
    R, t = procrustes(local, pts)
    return DacEstimate(Pose.from_rotation(t, R), True, tuple(used), pts, tuple(iters))


def pipeline_with_shortest_path_bounds(tofs, anchors, layout, config=PipelineConfig(), true_tags=None):
    """Main pipeline with shortest-path bounds in Step 1.

    Returns ``(PoseEstimate, diagnostics, edm_error)``; ``edm_error`` is the
    Frobenius error of the completed EDM against the truth when ``true_tags``
    (global tag positions) is given, else ``None``.
    """
    try:
        estimate, diag = erbl_edmc_estimate(tofs, anchors, layout, replace(config, bounds="shortest_path"))
    except PipelineStepError as exc:
        if isinstance(exc.cause, DisconnectedGraph):
            raise exc.cause from None
        raise
    err = None
    if true_tags is not None:
        err = edm_frobenius_error(diag.completed.d_hat, true_edm(anchors, layout, true_tags))
    return estimate, diag, err
