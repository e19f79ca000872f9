"""Closed-form rigid fit of the tag positions and Gauss-Newton pose refinement."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .edm import CompletionConfig, build_measured_edm, complete_edm, estimate_bounds, shortest_path_bounds
from .geometry import (
    Pose, procrustes, rotation_derivatives, tag_positions, vertical_offsets, wrap_angle,
)
from .tag_localization import (
    SingularNormalMatrix, TagLocalizationConfig, coarse_tag_positions, refine_tag_positions,
)


class DegenerateLayout(ValueError):
    pass


class Unavailable(ValueError):
    pass


class PipelineStepError(RuntimeError):
    """A step of the estimation pipeline failed; ``step`` names which one."""

    def __init__(self, step, cause):
        super().__init__(f"{step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class PoseRefineConfig:
    step_tol: float = 1e-8
    max_iters: int = 20
    sigma: float | None = None
    weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.step_tol <= 0:
            raise ValueError("step_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose
    covariance: np.ndarray
    iterations_used: int
    converged: bool
    objective_value: float
    objective: tuple = ()


def closed_form_pose(positions, layout):
    """Rotation and translation best aligning the body-frame layout to ``positions``."""
    positions = np.asarray(positions, dtype=float)
    local = layout.local_positions
    if positions.shape != local.shape:
        raise ValueError(f"expected positions of shape {local.shape}, got {positions.shape}")
    if layout.dim == 3 and layout.is_collinear():
        raise DegenerateLayout("collinear tags leave the rotation about their axis undetermined")
    R, t = procrustes(local, positions)
    return Pose.from_rotation(t, R)


def _weights(tofs, config):
    vis = tofs.visibility
    if config.weights is not None:
        w = np.asarray(config.weights, dtype=float)
        return w[vis] if w.shape == vis.shape else w
    sigma = tofs.sigma if config.sigma is None else config.sigma
    return np.full(int(vis.sum()), 1.0 / sigma**2 if sigma > 0 else 1.0)


def pose_residuals(x, tofs, anchors, layout):
    """``delta - range(x)`` over the visible pairs, tag-major order."""
    dim = anchors.dim
    pose = Pose.from_vector(x, dim)
    tags, anch = np.nonzero(tofs.visibility)
    diff = tag_positions(pose, layout)[tags] - anchors.positions[anch]
    z = vertical_offsets(anchors, layout)[tags, anch]
    return tofs.ranges[tags, anch] - np.sqrt(np.sum(diff**2, axis=1) + z**2)


def pose_jacobian(x, tofs, anchors, layout):
    """Derivative of the predicted ranges with respect to ``[position, attitude]``."""
    dim = anchors.dim
    pose = Pose.from_vector(x, dim)
    tags, anch = np.nonzero(tofs.visibility)
    diff = tag_positions(pose, layout)[tags] - anchors.positions[anch]
    z = vertical_offsets(anchors, layout)[tags, anch]
    rng = np.sqrt(np.sum(diff**2, axis=1) + z**2)
    unit = diff / rng[:, None]
    dR = rotation_derivatives(pose.attitude, dim)
    # d(R l_i)/d(theta_k) for every visible row
    dpts = np.einsum("kab,nb->nka", dR, layout.local_positions[tags])
    return np.hstack([unit, np.einsum("na,nka->nk", unit, dpts)])


def refine_pose(initial, tofs, anchors, layout, config=PoseRefineConfig()):
    """Undamped Gauss-Newton on the weighted TOF residuals."""
    dim = anchors.dim
    x = initial.as_vector()
    w = _weights(tofs, config)
    r = pose_residuals(x, tofs, anchors, layout)
    history = [float(np.sum(w * r**2))]
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        G = pose_jacobian(x, tofs, anchors, layout)
        N = G.T @ (w[:, None] * G)
        s = np.linalg.svd(N, compute_uv=False)
        if s[-1] <= s[0] * 1e-12:
            raise SingularNormalMatrix("pose normal matrix is singular")
        step = np.linalg.solve(N, G.T @ (w * r))
        x = x + step
        r = pose_residuals(x, tofs, anchors, layout)
        history.append(float(np.sum(w * r**2)))
        if np.linalg.norm(step) < config.step_tol:
            converged = True
            break
    G = pose_jacobian(x, tofs, anchors, layout)
    N = G.T @ (w[:, None] * G)
    sigma = tofs.sigma if config.sigma is None else config.sigma
    if config.weights is None and sigma == 0:
        cov = np.zeros_like(N)
    else:
        cov = np.linalg.pinv(N)
    pose = Pose(x[:dim], wrap_angle(x[dim:]))
    return PoseEstimate(pose, (cov + cov.T) / 2, it, converged, history[-1], tuple(history))


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for the three-step estimator; ``bounds`` is ``triangle`` or ``shortest_path``."""

    completion: CompletionConfig = CompletionConfig()
    tags: TagLocalizationConfig = TagLocalizationConfig()
    pose: PoseRefineConfig = PoseRefineConfig()
    bounds: str = "triangle"

    def __post_init__(self):
        if self.bounds not in ("triangle", "shortest_path"):
            raise ValueError(f"unknown bound method {self.bounds!r}")


@dataclass
class PipelineDiagnostics:
    bounds: str = "triangle"
    unbounded_pairs: int = 0
    edm_iterations: int = 0
    edm_converged: bool = False
    edm_residual: float = float("nan")
    completed: object = field(default=None, repr=False)
    coarse_positions: np.ndarray | None = field(default=None, repr=False)
    tag_positions: np.ndarray | None = field(default=None, repr=False)
    tag_iterations: int = 0
    tag_converged: bool = False
    tag_suspicious: bool = False
    tag_residual: float = float("nan")
    closed_form: Pose | None = None
    pose_iterations: int = 0
    step_seconds: dict = field(default_factory=dict)


def _available(tofs, dim):
    from .analysis import check_availability

    return check_availability(tofs.visibility, dim)


def _fallback(initial, tofs, anchors, layout, config, iterations):
    r = pose_residuals(initial.as_vector(), tofs, anchors, layout)
    n = anchors.dim + len(initial.attitude)
    return PoseEstimate(initial, np.full((n, n), np.nan), iterations, False,
                        float(np.sum(_weights(tofs, config) * r**2)))


def mirrored_starts(positions, layout):
    """Closed-form poses for the tag estimates reflected across their principal planes.

    Ranges and inter-tag distances cannot tell a tag constellation from its
    mirror image; only the layout can. When the estimates fit the layout better
    with a reflection than with a rotation, each reflection restores the
    chirality and gives another start for the final refinement.
    """
    positions = np.asarray(positions, dtype=float)
    local = layout.local_positions
    fits = []
    for reflect in (False, True):
        R, t = procrustes(local, positions, allow_reflection=reflect)
        fits.append(np.sum((local @ R.T + t - positions) ** 2))
    if not fits[1] < fits[0]:
        return []
    centre = positions.mean(axis=0)
    _, _, Vt = np.linalg.svd(positions - centre)
    starts = []
    for normal in Vt:
        flipped = positions - 2.0 * np.outer((positions - centre) @ normal, normal)
        starts.append(closed_form_pose(flipped, layout))
    return starts


def _refine_best(initial, positions, tofs, anchors, layout, config):
    """Gauss-Newton from the closed form (and mirrored starts); lowest objective wins."""
    best = None
    for start in [initial] + mirrored_starts(positions, layout):
        try:
            est = refine_pose(start, tofs, anchors, layout, config)
        except np.linalg.LinAlgError:
            continue
        if not est.converged or not np.all(np.isfinite(est.pose.as_vector())):
            continue
        if best is None or est.objective_value < best.objective_value:
            best = est
    if best is None:
        return _fallback(initial, tofs, anchors, layout, config, config.max_iters)
    return best


def erbl_edmc_estimate(tofs, anchors, layout, config=PipelineConfig()):
    """Bounded EDM completion, joint tag localization, then rigid pose refinement.

    Returns ``(PoseEstimate, PipelineDiagnostics)``. If the final Gauss-Newton
    step fails from every start, the closed-form pose is returned with
    ``converged=False``.
    """
    ok, reason = _available(tofs, anchors.dim)
    if not ok:
        raise Unavailable(reason)
    diag = PipelineDiagnostics(bounds=config.bounds)

    t0 = time.perf_counter()
    try:
        measured = build_measured_edm(anchors, layout, tofs)
        if config.bounds == "triangle":
            bounds = estimate_bounds(measured, layout)
        else:
            bounds = shortest_path_bounds(measured)
        completed = complete_edm(measured, bounds, config.completion)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise PipelineStepError("edm completion", exc) from exc
    W = measured.weights[measured.n_anchors:, :measured.n_anchors] == 1
    M = measured.n_anchors
    fit = np.sqrt(completed.d_hat[M:, :M]) - np.sqrt(measured.d_tilde[M:, :M])
    diag.unbounded_pairs = int(bounds.unbounded.sum() // 2) if bounds.unbounded is not None else 0
    diag.edm_iterations = completed.iterations_used
    diag.edm_converged = completed.converged
    diag.edm_residual = float(np.sqrt(np.mean(fit[W] ** 2))) if W.any() else 0.0
    diag.completed = completed
    t1 = time.perf_counter()

    try:
        coarse = coarse_tag_positions(completed, anchors)
        tags = refine_tag_positions(coarse, tofs, anchors, layout, config.tags)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise PipelineStepError("tag localization", exc) from exc
    diag.coarse_positions = coarse
    diag.tag_positions = tags.positions
    diag.tag_iterations = tags.iterations_used
    diag.tag_converged = tags.converged
    diag.tag_suspicious = tags.suspicious
    from .tag_localization import residual_stack

    diag.tag_residual = float(np.sqrt(np.mean(residual_stack(tags.positions, tofs, anchors, layout) ** 2)))
    t2 = time.perf_counter()

    try:
        initial = closed_form_pose(tags.positions, layout)
    except ValueError as exc:
        raise PipelineStepError("closed-form pose", exc) from exc
    diag.closed_form = initial
    estimate = _refine_best(initial, tags.positions, tofs, anchors, layout, config.pose)
    diag.pose_iterations = estimate.iterations_used
    t3 = time.perf_counter()
    diag.step_seconds = {"edm": t1 - t0, "tags": t2 - t1, "pose": t3 - t2}
    return estimate, diag
