"""Tag positions from the completed EDM, refined jointly with the inter-tag distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import inter_tag_distances, vertical_offsets

COND_LIMIT = 1e10


class DegenerateAnchorGeometry(ValueError):
    pass


class SingularNormalMatrix(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class TagLocalizationConfig:
    """``inter_tag_weight`` multiplies the weight of the exact inter-tag distances."""

    inter_tag_weight: float = 10.0
    max_iters: int = 20
    step_tol: float = 1e-8
    sigma: float | None = None

    def __post_init__(self):
        if self.inter_tag_weight <= 1:
            raise ValueError("inter_tag_weight must exceed 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_tol <= 0:
            raise ValueError("step_tol must be positive")


@dataclass(frozen=True)
class TagPositionEstimate:
    positions: np.ndarray
    covariance: np.ndarray
    iterations_used: int
    converged: bool
    objective: tuple = ()
    suspicious: bool = False

    @property
    def stacked(self):
        """Positions as one vector ``[p_1, ..., p_T]``."""
        return self.positions.ravel()


def coarse_tag_positions(completed, anchors):
    """Linear least squares on anchor-differenced squared ranges.

    ``||x - a_j||^2 - ||x - a_0||^2 = d_j^2 - d_0^2`` is linear in ``x``;
    one system per tag, using the completed distances to every anchor.
    """
    M = anchors.count
    a = anchors.positions
    A = 2.0 * (a[1:] - a[0])
    if M < anchors.dim + 1:
        raise DegenerateAnchorGeometry(f"need at least {anchors.dim + 1} anchors, got {M}")
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > COND_LIMIT:
        raise DegenerateAnchorGeometry("anchors are collinear/coplanar; differenced system is rank-deficient")
    sq = np.sum(a**2, axis=1)
    D = np.asarray(completed.d_hat if hasattr(completed, "d_hat") else completed)
    rows = D[M:, :M]
    rhs = rows[:, :1] - rows[:, 1:] + (sq[1:] - sq[0])[None, :]
    sol, *_ = np.linalg.lstsq(A, rhs.T, rcond=None)
    return sol.T


def _jacobian(positions, anchors, layout, visibility):
    """Residuals and Jacobians of the TOF and inter-tag rows.

    Returns ``(pred_ranges, H_tof, pred_tag, H_tag, pairs)``.
    """
    T, dim = positions.shape
    z = vertical_offsets(anchors, layout)
    tags, anch = np.nonzero(visibility)
    diff = positions[tags] - anchors.positions[anch]
    rng = np.sqrt(np.sum(diff**2, axis=1) + z[tags, anch] ** 2)
    H_tof = np.zeros((len(tags), T * dim))
    for r, (i, e) in enumerate(zip(tags, diff / rng[:, None])):
        H_tof[r, i * dim:(i + 1) * dim] = e
    pairs = [(i, k) for i in range(T) for k in range(i + 1, T)]
    H_tag = np.zeros((len(pairs), T * dim))
    pred_tag = np.zeros(len(pairs))
    for r, (i, k) in enumerate(pairs):
        v = positions[i] - positions[k]
        n = np.linalg.norm(v)
        pred_tag[r] = n
        u = v / n if n > 0 else np.zeros(dim)
        H_tag[r, i * dim:(i + 1) * dim] = u
        H_tag[r, k * dim:(k + 1) * dim] = -u
    return rng, H_tof, pred_tag, H_tag, pairs


def residual_stack(positions, tofs, anchors, layout):
    """Measured-minus-predicted TOFs followed by inter-tag distance residuals."""
    positions = np.asarray(positions, dtype=float)
    vis = tofs.visibility
    rng, _, pred_tag, _, pairs = _jacobian(positions, anchors, layout, vis)
    d = inter_tag_distances(layout)
    d_pairs = np.array([d[i, k] for i, k in pairs])
    return np.concatenate([tofs.ranges[vis] - rng, d_pairs - pred_tag])


def jacobian_stack(positions, tofs, anchors, layout):
    """``[H_delta; H_d]``: derivative of the predicted rows with respect to ``y``."""
    _, H_tof, _, H_tag, _ = _jacobian(np.asarray(positions, dtype=float), anchors, layout, tofs.visibility)
    return np.vstack([H_tof, H_tag])


def refine_tag_positions(coarse, tofs, anchors, layout, config=TagLocalizationConfig()):
    """Gauss-Newton on TOFs plus weighted exact inter-tag distances.

    The TOF rows carry weight ``1/sigma^2`` and the inter-tag rows
    ``inter_tag_weight/sigma^2``; the common ``sigma`` cancels in the update.
    """
    sigma = tofs.sigma if config.sigma is None else config.sigma
    lam = config.inter_tag_weight
    y = np.array(coarse, dtype=float)
    T, dim = y.shape
    if T != layout.count:
        raise ValueError(f"{T} coarse positions for {layout.count} tags")
    d = inter_tag_distances(layout)
    vis = tofs.visibility
    delta = tofs.ranges[vis]

    def evaluate(pos):
        rng, H_tof, pred_tag, H_tag, pairs = _jacobian(pos, anchors, layout, vis)
        d_pairs = np.array([d[i, k] for i, k in pairs])
        r_tof = delta - rng
        r_tag = d_pairs - pred_tag
        return r_tof, r_tag, H_tof, H_tag

    def cost(r_tof, r_tag):
        return float(np.sum(r_tof**2) + lam * np.sum(r_tag**2))

    r_tof, r_tag, H_tof, H_tag = evaluate(y)
    history = [cost(r_tof, r_tag)]
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        N = H_tof.T @ H_tof + lam * H_tag.T @ H_tag
        g = H_tof.T @ r_tof + lam * H_tag.T @ r_tag
        step = _solve_normal(N, g)
        y = y + step.reshape(T, dim)
        r_tof, r_tag, H_tof, H_tag = evaluate(y)
        history.append(cost(r_tof, r_tag))
        if np.linalg.norm(step) < config.step_tol:
            converged = True
            break
    info = H_tof.T @ H_tof + H_tag.T @ H_tag / lam
    cov = sigma**2 * _inverse(info)
    suspicious = bool(r_tag.size and np.max(np.abs(r_tag)) > max(3 * sigma * np.sqrt(lam), 1e-9))
    return TagPositionEstimate(y, (cov + cov.T) / 2, it, converged, tuple(history), suspicious)


def _solve_normal(N, g):
    s = np.linalg.svd(N, compute_uv=False)
    if s[-1] <= s[0] * 1e-12:
        raise SingularNormalMatrix("normal matrix is singular: measurements do not fix the tags")
    return np.linalg.solve(N, g)


def _inverse(N):
    s = np.linalg.svd(N, compute_uv=False)
    if s[-1] <= s[0] * 1e-12:
        raise SingularNormalMatrix("information matrix is singular")
    return np.linalg.inv(N)
