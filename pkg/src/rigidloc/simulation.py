"""Noise injection, Monte Carlo orchestration and warehouse trajectory runs."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import SingularInformation, check_availability, crlb, epoch_error, rotation_error, wrap_angle
from .baselines import dac_estimate
from .edm import edm_frobenius_error, true_edm
from .geometry import TofMeasurementSet, tag_anchor_ranges, tag_positions
from .pose_estimation import PipelineConfig, PipelineStepError, Unavailable, erbl_edmc_estimate
from .scene import compute_visibility
from .scenes import build_paper_scenes  # noqa: F401  re-exported for convenience

METHODS = ("erbl", "dac", "erbl_sp")
SIGMA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def stream(*key):
    """Independent PCG64 generator for a tuple of nonnegative integers."""
    return np.random.default_rng([int(k) for k in key])


def simulate_epoch(scene, pose, noise, seed=None, visibility=None):
    """Noisy TOFs for the visible pairs at ``pose``.

    One standard normal is drawn per (tag, anchor) slot regardless of
    visibility so occlusion never shifts the random stream.
    """
    rng = stream(noise.seed if seed is None else seed) if not isinstance(seed, np.random.Generator) else seed
    vis = compute_visibility(scene, pose) if visibility is None else np.asarray(visibility, dtype=bool)
    truth = tag_anchor_ranges(tag_positions(pose, scene.layout), scene.anchors, scene.layout)
    draw = rng.standard_normal(truth.shape)
    ranges = np.where(vis, np.maximum(truth + noise.sigma * draw, 0.0), np.nan)
    return TofMeasurementSet(ranges, noise.sigma)


def _run_method(method, tofs, scene, config, truth_tags=None):
    """``(pose or None, iterations, converged, seconds, edm_error)`` for one method."""
    t0 = time.perf_counter()
    if method == "dac":
        est = dac_estimate(tofs, scene.anchors, scene.layout)
        return est.pose, max(est.iterations, default=0), est.feasible, time.perf_counter() - t0, None
    bounds = "triangle" if method == "erbl" else "shortest_path"
    cfg = PipelineConfig(config.completion, config.tags, config.pose, bounds)
    try:
        est, diag = erbl_edmc_estimate(tofs, scene.anchors, scene.layout, cfg)
    except (Unavailable, PipelineStepError):
        return None, 0, False, time.perf_counter() - t0, None
    seconds = time.perf_counter() - t0
    err = None
    if truth_tags is not None:
        err = edm_frobenius_error(diag.completed.d_hat, true_edm(scene.anchors, scene.layout, truth_tags))
    return est.pose, est.iterations_used, est.converged, seconds, err


def _attitude_error(estimate, truth):
    if truth.dim == 2:
        return float(wrap_angle(estimate.attitude[0] - truth.attitude[0]))
    return rotation_error(estimate, truth)


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_monte_carlo(scene, noise_grid=SIGMA_GRID, runs=1000, methods=("erbl", "dac"), seed=0,
                    config=PipelineConfig(), threads=1):
    """RMSE of attitude and position per noise level and method, plus the CRLB.

    Attitude RMSE is the wrapped yaw error in 2D and the Frobenius norm of the
    rotation error in 3D. All methods share the noise draws of a run.
    """
    pose = scene.pose
    vis = compute_visibility(scene, pose)
    truth_tags = tag_positions(pose, scene.layout)
    rows = []
    for s_idx, sigma in enumerate(noise_grid):
        noise = NoiseModel(sigma, seed)

        def one(run, s_idx=s_idx, noise=noise):
            tofs = simulate_epoch(scene, pose, noise, stream(seed, s_idx, run), vis)
            out = {}
            for m in methods:
                est = _run_method(m, tofs, scene, config, None)[0]
                out[m] = None if est is None else (_attitude_error(est, pose), float(np.linalg.norm(est.position - pose.position)))
            return out

        results = _map(one, range(runs), threads)
        if sigma > 0:
            try:
                bound = crlb(pose, scene.layout, scene.anchors, vis, sigma)
                crlb_att, crlb_pos = bound.attitude_bound, bound.position_bound
            except SingularInformation:
                crlb_att = crlb_pos = float("nan")
        else:
            crlb_att = crlb_pos = 0.0
        for m in methods:
            errs = np.array([r[m] for r in results if r[m] is not None]).reshape(-1, 2)
            if len(errs):
                att = float(np.sqrt(np.mean(errs[:, 0] ** 2)))
                pos = float(np.sqrt(np.mean(errs[:, 1] ** 2)))
            else:
                att = pos = float("nan")
            rows.append({
                "sigma": float(sigma), "method": m, "rmse_attitude": att, "rmse_position": pos,
                "crlb_attitude": crlb_att, "crlb_position": crlb_pos, "feasible_runs": len(errs),
            })
    return rows


@dataclass
class EpochResult:
    epoch: int
    time: float
    counts: tuple
    available: bool
    estimates: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)
    converged: dict = field(default_factory=dict)
    wallclock: dict = field(default_factory=dict)
    edm_error_triangle: float = float("nan")
    edm_error_shortestpath: float = float("nan")

    def feasible(self, method):
        return self.errors.get(method) is not None


def run_epoch(scene, epoch, t, pose, noise, methods=METHODS, config=PipelineConfig()):
    """Simulate one trajectory epoch and run every requested method on it."""
    vis = compute_visibility(scene, pose)
    tofs = simulate_epoch(scene, pose, noise, stream(noise.seed, epoch), vis)
    truth_tags = tag_positions(pose, scene.layout)
    ok, _ = check_availability(vis, scene.dim, scene.layout)
    result = EpochResult(epoch, float(t), tuple(int(c) for c in vis.sum(axis=1)), ok)
    # both bound strategies are always completed so their EDM errors can be compared
    run = list(methods) + [m for m in ("erbl", "erbl_sp") if m not in methods]
    for m in run:
        est, it, conv, secs, edm_err = _run_method(m, tofs, scene, config, truth_tags)
        if m == "erbl" and edm_err is not None:
            result.edm_error_triangle = edm_err
        if m == "erbl_sp" and edm_err is not None:
            result.edm_error_shortestpath = edm_err
        if m not in methods:
            continue
        result.estimates[m] = est
        result.errors[m] = None if est is None else epoch_error(est, pose)
        result.iterations[m] = it
        result.converged[m] = conv
        result.wallclock[m] = secs
    return result


def run_trajectory(scene, trajectory=None, noise=NoiseModel(), methods=METHODS, config=PipelineConfig(), threads=1):
    """Per-epoch results along the scene trajectory (or ``trajectory`` if given)."""
    traj = scene.trajectory if trajectory is None else trajectory
    if traj is None:
        raise ValueError(f"scene {scene.name!r} has no trajectory")
    items = list(enumerate(zip(traj.times, traj.poses)))
    return _map(lambda item: run_epoch(scene, item[0], item[1][0], item[1][1], noise, methods, config), items, threads)
