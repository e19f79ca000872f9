"""Availability test, Fisher information, CRLB and error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .geometry import rotation_from_angles, tag_positions, vertical_offsets, wrap_angle


class SingularInformation(np.linalg.LinAlgError):
    pass


def check_availability(visibility, dim, layout=None):
    """Whether the measurement counts admit a unique pose; returns ``(ok, reason)``.

    2D needs at least 3 ranges in total from at least 2 observing tags. 3D needs
    at least 6 ranges from at least 3 observing tags which, if ``layout`` is
    given, must not be collinear.
    """
    counts = np.asarray(visibility, dtype=bool).sum(axis=1)
    total = int(counts.sum())
    observing = np.flatnonzero(counts > 0)
    need_total, need_tags = (3, 2) if dim == 2 else (6, 3)
    if total < need_total:
        return False, f"only {total} ranges, need {need_total}"
    if len(observing) < need_tags:
        return False, f"only {len(observing)} observing tags, need {need_tags}"
    if dim == 3 and layout is not None:
        pts = layout.local_positions[observing]
        centred = pts - pts.mean(axis=0)
        s = np.linalg.svd(centred, compute_uv=False)
        if s[1] <= 1e-9 * max(s[0], 1.0):
            return False, "observing tags are collinear"
    return True, "available"


@dataclass(frozen=True)
class FisherInformation:
    """``matrix`` over ``[p_c, yaw]`` (2D) or ``[mu_1, mu_2, mu_3, p_c]`` (3D)."""

    matrix: np.ndarray
    parameterization: str


@dataclass(frozen=True)
class CrlbResult:
    """Lower bound ``C (C^T F C)^-1 C^T`` with RMSE-scale marginals."""

    covariance: np.ndarray
    position_bound: float
    attitude_bound: float
    parameterization: str


def _visible_geometry(pose, layout, anchors, visibility):
    tags, anch = np.nonzero(np.asarray(visibility, dtype=bool))
    diff = tag_positions(pose, layout)[tags] - anchors.positions[anch]
    z = vertical_offsets(anchors, layout)[tags, anch]
    rng = np.sqrt(np.sum(diff**2, axis=1) + z**2)
    return tags, diff, rng


def _range_gradients(pose, layout, anchors, visibility):
    """Rows of d(range)/d(parameters) for every visible pair."""
    tags, diff, rng = _visible_geometry(pose, layout, anchors, visibility)
    unit = diff / rng[:, None]
    if pose.dim == 2:
        psi = pose.attitude[0]
        dR = np.array([[-np.sin(psi), -np.cos(psi)], [np.cos(psi), -np.sin(psi)]])
        dpts = layout.local_positions[tags] @ dR.T
        return np.column_stack([unit, np.sum(unit * dpts, axis=1)]), "p_yaw"
    # p_i = (l_e^T kron I) chi with l_e = [l; 1]
    l_e = np.column_stack([layout.local_positions[tags], np.ones(len(tags))])
    rows = (l_e[:, :, None] * unit[:, None, :]).reshape(len(tags), -1)
    return rows, "chi"


def fisher_information(pose, layout, anchors, visibility, sigma):
    """Fisher information of Gaussian TOFs over the visible pairs."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = 3 if pose.dim == 2 else 12
    if not np.any(visibility):
        return FisherInformation(np.zeros((n, n)), "p_yaw" if pose.dim == 2 else "chi")
    G, kind = _range_gradients(pose, layout, anchors, visibility)
    F = G.T @ G / sigma**2
    return FisherInformation((F + F.T) / 2, kind)


def rotation_constraint_basis(R):
    """Orthonormal basis of the tangent space of the orthonormality constraints.

    The constraints ``mu_i^T mu_j = delta_ij`` on the columns of ``R`` are
    linearized at ``R``; the null space of their Jacobian (with the translation
    left free) is 12 x 6, the rotation and translation degrees of freedom.
    """
    mu = [R[:, k] for k in range(3)]
    rows = []
    for i in range(3):
        for j in range(i, 3):
            g = np.zeros(12)
            g[3 * i:3 * i + 3] += mu[j]
            g[3 * j:3 * j + 3] += mu[i]
            rows.append(g)
    return null_space(np.array(rows))


def crlb(pose, layout, anchors, visibility, sigma):
    """Cramér-Rao bound on the pose; raises ``SingularInformation`` when unobservable."""
    fim = fisher_information(pose, layout, anchors, visibility, sigma)
    F = fim.matrix
    if pose.dim == 2:
        C = np.eye(3)
    else:
        C = rotation_constraint_basis(pose.rotation)
    reduced = C.T @ F @ C
    s = np.linalg.svd(reduced, compute_uv=False)
    if s[0] == 0 or s[-1] <= s[0] * 1e-12:
        raise SingularInformation("Fisher information is singular on the constraint tangent space")
    cov = C @ np.linalg.inv(reduced) @ C.T
    cov = (cov + cov.T) / 2
    if pose.dim == 2:
        pos, att = np.trace(cov[:2, :2]), cov[2, 2]
    else:
        pos, att = np.trace(cov[9:, 9:]), np.trace(cov[:9, :9])
    return CrlbResult(cov, float(np.sqrt(pos)), float(np.sqrt(att)), fim.parameterization)


def rmse(estimates, truth=0.0, angular=False):
    """Root mean squared norm of ``estimate - truth`` over the first axis.

    Matrix-valued estimates (rotations) use the Frobenius norm; ``angular``
    wraps differences to (-pi, pi] first.
    """
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ValueError("rmse needs at least one estimate")
    diff = est - np.asarray(truth, dtype=float)
    if angular:
        diff = wrap_angle(diff)
    sq = diff.reshape(len(diff), -1) ** 2 if diff.ndim > 0 else diff.reshape(1, 1) ** 2
    return float(np.sqrt(np.mean(np.sum(sq, axis=1))))


def epoch_error(estimate, truth):
    """``(position_error, attitude_error)``; attitude is the norm of wrapped angle differences."""
    if estimate.dim != truth.dim:
        raise ValueError("poses of different dimension")
    pos = float(np.linalg.norm(estimate.position - truth.position))
    att = float(np.linalg.norm(wrap_angle(estimate.attitude - truth.attitude)))
    return pos, att


def rotation_error(estimate, truth):
    """Frobenius norm of the rotation matrix difference."""
    return float(np.linalg.norm(estimate.rotation - truth.rotation))


def rotation_matrix_error(attitude, truth_attitude, dim):
    return float(np.linalg.norm(rotation_from_angles(attitude, dim) - rotation_from_angles(truth_attitude, dim)))
