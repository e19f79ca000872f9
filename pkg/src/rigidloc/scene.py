"""Scene description, built-in scenes and line-of-sight computation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import AnchorSet, Pose, TagLayout, rotation_from_angles, tag_positions


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its center and full side lengths (meters)."""

    center: np.ndarray
    extents: np.ndarray

    def __post_init__(self):
        c = np.array(self.center, dtype=float)
        e = np.array(self.extents, dtype=float)
        if c.shape != (3,) or e.shape != (3,):
            raise ValueError("box center and extents must be 3-vectors")
        if np.any(e <= 0):
            raise ValueError(f"box extents must be positive, got {e}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "extents", e)

    @property
    def lower(self):
        return self.center - self.extents / 2

    @property
    def upper(self):
        return self.center + self.extents / 2

    def contains(self, point):
        p = np.asarray(point, dtype=float)
        return bool(np.all(p > self.lower) and np.all(p < self.upper))


def segment_hits_box(p0, p1, lower, upper):
    """Slab test: does the open segment ``p0 -> p1`` pass through the box interior?

    A segment that only grazes a face, edge or corner does not count as a hit.
    """
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    t_in, t_out = 0.0, 1.0
    for k in range(p0.shape[0]):
        if d[k] == 0.0:
            if not lower[k] < p0[k] < upper[k]:
                return False
            continue
        t0 = (lower[k] - p0[k]) / d[k]
        t1 = (upper[k] - p0[k]) / d[k]
        if t0 > t1:
            t0, t1 = t1, t0
        t_in = max(t_in, t0)
        t_out = min(t_out, t1)
        if t_out <= t_in:
            return False
    return True


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    poses: tuple

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        if t.ndim != 1 or len(t) != len(self.poses):
            raise ValueError("one timestamp per pose required")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self):
        return len(self.poses)


@dataclass(frozen=True)
class Scene:
    """Anchors, tags and obstacles.

    ``cargo`` is expressed in the body frame (3D, even for planar scenes) and moves
    with the vehicle. ``vehicle_height`` is the known global height of the body
    origin in planar scenes.
    """

    name: str
    anchors: AnchorSet
    layout: TagLayout
    obstacles: tuple = ()
    cargo: Box | None = None
    range_limit: float | None = None
    vehicle_height: float = 0.0
    pose: Pose | None = None
    trajectory: Trajectory | None = None
    extent: tuple | None = field(default=None)

    @property
    def dim(self):
        return self.anchors.dim

    def tag_points_3d(self, pose):
        """Global 3D tag positions for line-of-sight tests."""
        p = tag_positions(pose, self.layout)
        if self.dim == 3:
            return p
        h = np.zeros(self.layout.count) if self.layout.heights is None else self.layout.heights
        return np.column_stack([p, h])

    def anchor_points_3d(self):
        if self.dim == 3:
            return np.array(self.anchors.positions)
        h = np.zeros(self.anchors.count) if self.anchors.heights is None else self.anchors.heights
        return np.column_stack([self.anchors.positions, h])

    def body_transform_3d(self, pose):
        """``(R, t)`` mapping body-frame 3D points to global 3D points."""
        if self.dim == 3:
            return pose.rotation, pose.position
        R = rotation_from_angles([0.0, 0.0, pose.attitude[0]], 3)
        return R, np.array([pose.position[0], pose.position[1], self.vehicle_height])

    def local_tags_3d(self):
        if self.dim == 3:
            return np.array(self.layout.local_positions)
        h = np.zeros(self.layout.count) if self.layout.heights is None else self.layout.heights
        return np.column_stack([self.layout.local_positions, h - self.vehicle_height])


def compute_visibility(scene, pose):
    """Boolean ``(T, M)`` mask of unobstructed tag-anchor lines of sight."""
    tags = scene.tag_points_3d(pose)
    anchors = scene.anchor_points_3d()
    R, t = scene.body_transform_3d(pose)
    mask = np.ones((len(tags), len(anchors)), dtype=bool)
    for i, p in enumerate(tags):
        p_body = R.T @ (p - t)
        for j, q in enumerate(anchors):
            if scene.range_limit is not None and np.linalg.norm(q - p) > scene.range_limit:
                mask[i, j] = False
                continue
            if any(segment_hits_box(p, q, b.lower, b.upper) for b in scene.obstacles):
                mask[i, j] = False
                continue
            if scene.cargo is not None:
                q_body = R.T @ (q - t)
                if segment_hits_box(p_body, q_body, scene.cargo.lower, scene.cargo.upper):
                    mask[i, j] = False
    return mask
