"""Geometry primitives: anchors, tag layouts, attitudes and range measurements.

Conventions
-----------
* 2D attitude is the yaw angle ``psi``; ``R = [[cos, -sin], [sin, cos]]``.
* 3D attitude is ``[roll, pitch, yaw]`` and ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
* Angles are reported in ``(-pi, pi]``.
* Arrays are tag-major: ranges and visibility masks have shape ``(T, M)``
  with ``T`` tags and ``M`` anchors.

Planar scenes may carry constant heights for anchors and tags. The estimators
then solve for the horizontal coordinates and yaw only, but ranges are taken
in 3D: ``||p_i - q_j||^2 + (h_i - h_j)^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GIMBAL_TOL = 1e-8


class DegenerateRotation(ValueError):
    pass


def _frozen(a, ndim=None, name="array"):
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return w if w.ndim else float(w)


def attitude_size(dim):
    if dim == 2:
        return 1
    if dim == 3:
        return 3
    raise ValueError(f"dimension must be 2 or 3, got {dim}")


def _elemental(angles):
    phi, gamma, psi = angles
    cr, sr = np.cos(phi), np.sin(phi)
    cp, sp = np.cos(gamma), np.sin(gamma)
    cy, sy = np.cos(psi), np.sin(psi)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rx, ry, rz


def rotation_from_angles(attitude, dim):
    """Rotation matrix (body to global) for the given attitude angles."""
    att = np.atleast_1d(np.asarray(attitude, dtype=float))
    if att.shape != (attitude_size(dim),):
        raise ValueError(f"{dim}D rotation needs {attitude_size(dim)} angle(s), got {att.shape}")
    if dim == 2:
        c, s = np.cos(att[0]), np.sin(att[0])
        return np.array([[c, -s], [s, c]])
    rx, ry, rz = _elemental(att)
    return rz @ ry @ rx


def rotation_derivatives(attitude, dim):
    """Partial derivatives of ``rotation_from_angles`` with respect to each angle.

    Returns an array of shape ``(nu, dim, dim)``.
    """
    att = np.atleast_1d(np.asarray(attitude, dtype=float))
    if att.shape != (attitude_size(dim),):
        raise ValueError(f"{dim}D rotation needs {attitude_size(dim)} angle(s), got {att.shape}")
    if dim == 2:
        c, s = np.cos(att[0]), np.sin(att[0])
        return np.array([[[-s, -c], [c, -s]]])
    phi, gamma, psi = att
    rx, ry, rz = _elemental(att)
    cr, sr = np.cos(phi), np.sin(phi)
    cp, sp = np.cos(gamma), np.sin(gamma)
    cy, sy = np.cos(psi), np.sin(psi)
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sr, -cr], [0.0, cr, -sr]])
    dry = np.array([[-sp, 0.0, cp], [0.0, 0.0, 0.0], [-cp, 0.0, -sp]])
    drz = np.array([[-sy, -cy, 0.0], [cy, -sy, 0.0], [0.0, 0.0, 0.0]])
    return np.array([rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx])


def angles_from_rotation(R):
    """Inverse of :func:`rotation_from_angles`.

    Raises :class:`DegenerateRotation` at gimbal lock (``|cos pitch| < 1e-8``).
    """
    R = np.asarray(R, dtype=float)
    if R.shape == (2, 2):
        return np.array([np.arctan2(R[1, 0], R[0, 0])])
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 2x2 or 3x3, got {R.shape}")
    cos_pitch = np.hypot(R[0, 0], R[1, 0])
    if cos_pitch < GIMBAL_TOL:
        raise DegenerateRotation("pitch at +-pi/2 (gimbal lock); roll and yaw are not separable")
    roll = np.arctan2(R[2, 1], R[2, 2])
    pitch = np.arctan2(-R[2, 0], cos_pitch)
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def is_rotation(R, tol=1e-12):
    R = np.asarray(R, dtype=float)
    n = R.shape[0]
    return bool(
        np.max(np.abs(R.T @ R - np.eye(n))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol
    )


def pairwise_distances(a, b=None):
    """Euclidean distances between the rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=float)
    b = a if b is None else np.asarray(b, dtype=float)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def procrustes(source, target, allow_reflection=False):
    """Least-squares rigid fit ``target ~ source @ R.T + t``.

    Returns ``(R, t)``. Unless ``allow_reflection`` is set, ``det(R) = +1``
    is enforced by flipping the weakest singular direction.
    """
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if source.shape != target.shape:
        raise ValueError(f"point sets differ in shape: {source.shape} vs {target.shape}")
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    H = (target - mu_t).T @ (source - mu_s)
    U, _, Vt = np.linalg.svd(H)
    E = np.eye(source.shape[1])
    if not allow_reflection and np.linalg.det(U @ Vt) < 0:
        E[-1, -1] = -1.0
    R = U @ E @ Vt
    return R, mu_t - R @ mu_s


@dataclass(frozen=True)
class AnchorSet:
    """Anchor positions ``(M, dim)``; ``heights`` only for planar scenes."""

    positions: np.ndarray
    heights: np.ndarray | None = None

    def __post_init__(self):
        pos = _frozen(self.positions, 2, "anchor positions")
        if pos.shape[0] < 1 or pos.shape[1] not in (2, 3):
            raise ValueError(f"need M >= 1 anchors of dimension 2 or 3, got shape {pos.shape}")
        object.__setattr__(self, "positions", pos)
        if self.heights is not None:
            if pos.shape[1] != 2:
                raise ValueError("anchor heights are only meaningful for planar (2D) scenes")
            h = _frozen(self.heights, 1, "anchor heights")
            if h.shape != (pos.shape[0],):
                raise ValueError("one height per anchor required")
            object.__setattr__(self, "heights", h)

    @property
    def count(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def distances(self):
        """Anchor-anchor distances in the estimation plane/space."""
        return pairwise_distances(self.positions)


@dataclass(frozen=True)
class TagLayout:
    """Tag positions in the body frame ``(T, dim)``.

    ``heights`` are the known global heights of the tags in planar scenes.
    """

    local_positions: np.ndarray
    heights: np.ndarray | None = None

    def __post_init__(self):
        loc = _frozen(self.local_positions, 2, "tag positions")
        if loc.shape[0] < 2 or loc.shape[1] not in (2, 3):
            raise ValueError(f"need at least 2 tags of dimension 2 or 3, got shape {loc.shape}")
        object.__setattr__(self, "local_positions", loc)
        if self.heights is not None:
            if loc.shape[1] != 2:
                raise ValueError("tag heights are only meaningful for planar (2D) scenes")
            h = _frozen(self.heights, 1, "tag heights")
            if h.shape != (loc.shape[0],):
                raise ValueError("one height per tag required")
            object.__setattr__(self, "heights", h)

    @property
    def count(self):
        return self.local_positions.shape[0]

    @property
    def dim(self):
        return self.local_positions.shape[1]

    def is_collinear(self, tol=1e-9):
        centered = self.local_positions - self.local_positions.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        return bool(s.size < 2 or s[1] <= tol * max(s[0], 1.0))


def inter_tag_distances(layout):
    """Symmetric, hollow matrix of distances between tags.

    Rigid motion preserves these, so they are known exactly from the layout.
    In planar scenes the distances are horizontal, matching the estimation plane.
    """
    return pairwise_distances(layout.local_positions)


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    attitude: np.ndarray

    def __post_init__(self):
        pos = _frozen(np.atleast_1d(self.position), 1, "position")
        att = _frozen(np.atleast_1d(self.attitude), 1, "attitude")
        if att.shape != (attitude_size(pos.shape[0]),):
            raise ValueError(f"{pos.shape[0]}D pose needs {attitude_size(pos.shape[0])} angle(s)")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "attitude", att)

    @property
    def dim(self):
        return self.position.shape[0]

    @property
    def rotation(self):
        return rotation_from_angles(self.attitude, self.dim)

    @classmethod
    def from_rotation(cls, position, R):
        return cls(position, angles_from_rotation(R))

    def as_vector(self):
        return np.concatenate([self.position, self.attitude])

    @classmethod
    def from_vector(cls, x, dim):
        x = np.asarray(x, dtype=float)
        return cls(x[:dim], x[dim:])


def transform_tag(pose, local):
    """Global position ``p_c + R l`` of a body-frame point (or rows of points)."""
    local = np.asarray(local, dtype=float)
    if local.shape[-1] != pose.dim:
        raise ValueError(f"point dimension {local.shape[-1]} does not match pose dimension {pose.dim}")
    return pose.position + local @ pose.rotation.T


def tag_positions(pose, layout):
    return transform_tag(pose, layout.local_positions)


def vertical_offsets(anchors, layout):
    """Known height difference per (tag, anchor) pair; zeros for non-planar scenes."""
    ht = np.zeros(layout.count) if layout.heights is None else layout.heights
    ha = np.zeros(anchors.count) if anchors.heights is None else anchors.heights
    return ht[:, None] - ha[None, :]


def tag_anchor_ranges(points, anchors, layout):
    """True ranges ``(T, M)`` from global tag positions to every anchor."""
    points = np.asarray(points, dtype=float)
    diff = points[:, None, :] - anchors.positions[None, :, :]
    z = vertical_offsets(anchors, layout)
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff) + z**2)


@dataclass(frozen=True)
class TofMeasurementSet:
    """Noisy tag-anchor ranges; ``NaN`` marks an unavailable measurement."""

    ranges: np.ndarray
    sigma: float
    visibility: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = np.array(self.ranges, dtype=float)
        if r.ndim != 2:
            raise ValueError("ranges must be a (T, M) array")
        mask = ~np.isnan(r)
        if np.any(r[mask] < 0):
            raise ValueError("ranges must be nonnegative")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        r.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "ranges", r)
        object.__setattr__(self, "visibility", mask)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def counts(self):
        """Number of visible anchors per tag."""
        return self.visibility.sum(axis=1)

    def visible_anchors(self, tag):
        return np.flatnonzero(self.visibility[tag])

    @classmethod
    def from_lists(cls, n_anchors, per_tag, sigma):
        """Build from ``[{anchor_index: range, ...}, ...]`` (0-based indices)."""
        r = np.full((len(per_tag), n_anchors), np.nan)
        for i, obs in enumerate(per_tag):
            for j, value in obs.items():
                if not 0 <= j < n_anchors:
                    raise ValueError(f"anchor index {j} out of range for tag {i}")
                r[i, j] = value
        return cls(r, sigma)

    def without_tag(self, tag):
        r = np.array(self.ranges)
        r[tag] = np.nan
        return TofMeasurementSet(r, self.sigma)
