"""Built-in scenes: the static 2D and 3D geometries and the unmanned warehouse."""

from __future__ import annotations

import numpy as np

from .geometry import AnchorSet, Pose, TagLayout, wrap_angle
from .scene import Box, Scene, Trajectory

WAREHOUSE_ANCHORS_EN = np.array([
    [0.5, 5.0], [4.8, 23.2], [0.5, 35.0], [47.0, 5.0], [41.2, 23.2], [47.0, 35.0],
    [10.0, 0.5], [31.0, 0.5], [20.8, 5.8], [20.8, 34.2], [10.0, 27.8], [31.0, 27.8],
    [10.0, 12.2], [31.0, 12.2], [15.2, 16.8], [4.8, 16.8], [41.2, 16.8],
])
WAREHOUSE_ANCHOR_HEIGHT = 6.0
WAREHOUSE_TAGS = np.array([[2.0, 1.0, -0.15], [2.0, -1.0, -0.15], [-2.0, 0.0, -0.15]])
VEHICLE_SIZE = (4.0, 2.0, 0.3)
CARGO_SIZE = (3.6, 1.6, 2.8)
SHELF_WIDTH = 6.0
SHELF_HEIGHT = 5.0

# Shelf rows as (east_min, east_max, north_center); every row is SHELF_WIDTH deep.
SHELF_ROWS = (
    (9.0, 16.0, 11.0),
    (31.0, 38.0, 11.0),
    (9.0, 16.0, 24.0),
    (31.0, 38.0, 24.0),
)

# Closed circuit along the aisles, visited in order.
WAREHOUSE_WAYPOINTS = np.array([
    [3.5, 3.5], [43.5, 3.5], [43.5, 18.0], [3.5, 18.0], [3.5, 31.0],
    [43.5, 31.0], [23.5, 31.0], [23.5, 3.5], [3.5, 3.5],
])
WAREHOUSE_DURATION = 300


def scene_2d():
    anchors = AnchorSet([[40, 50], [30, 20], [0, 10], [-50, -50], [-20, -30]])
    layout = TagLayout(np.array([[0, 5, 5, 0], [0, 0, 5, 5]], dtype=float).T)
    return Scene("paper-2d", anchors, layout, pose=Pose([2.0, 10.0], [1.047]))


def scene_3d():
    anchors = AnchorSet([
        [-50, -65, -70], [50, -35, -25], [-50, 5, -5],
        [15, -45, -15], [-15, 30, 30], [50, 45, 55],
    ])
    layout = TagLayout(np.array([
        [1.5, 4.5, 4.5, 4.5, 3.0],
        [0.0, 0.0, 4.5, 4.5, 3.0],
        [0.0, 0.0, 0.0, 0.0, 3.0],
    ]).T)
    return Scene("paper-3d", anchors, layout, pose=Pose([5.0, 5.0, 2.0], [-0.436, 0.349, 0.175]))


def shelf_boxes():
    boxes = []
    for e0, e1, n in SHELF_ROWS:
        boxes.append(Box([(e0 + e1) / 2, n, SHELF_HEIGHT / 2], [e1 - e0, SHELF_WIDTH, SHELF_HEIGHT]))
    return tuple(boxes)


def aisle_trajectory(waypoints=WAREHOUSE_WAYPOINTS, duration=WAREHOUSE_DURATION, rate=1.0):
    """Constant-speed traversal of a polyline, heading along the direction of travel."""
    waypoints = np.asarray(waypoints, dtype=float)
    seg = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    n = int(round(duration * rate))
    times = np.arange(n) / rate
    speed = cum[-1] / duration
    poses = []
    for t in times:
        s = speed * t
        k = min(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1)
        frac = (s - cum[k]) / seg_len[k]
        p = waypoints[k] + frac * seg[k]
        yaw = wrap_angle(np.arctan2(seg[k][1], seg[k][0]))
        poses.append(Pose(p, [yaw]))
    return Trajectory(times, poses)


def scene_warehouse():
    vehicle_height = VEHICLE_SIZE[2] / 2
    anchors = AnchorSet(WAREHOUSE_ANCHORS_EN, np.full(len(WAREHOUSE_ANCHORS_EN), WAREHOUSE_ANCHOR_HEIGHT))
    layout = TagLayout(WAREHOUSE_TAGS[:, :2], WAREHOUSE_TAGS[:, 2] + vehicle_height)
    # cargo sits on the vehicle deck
    cargo_center_z = VEHICLE_SIZE[2] / 2 + CARGO_SIZE[2] / 2
    cargo = Box([0.0, 0.0, cargo_center_z], CARGO_SIZE)
    traj = aisle_trajectory()
    return Scene(
        "paper-warehouse", anchors, layout,
        obstacles=shelf_boxes(), cargo=cargo, vehicle_height=vehicle_height,
        pose=traj.poses[0], trajectory=traj, extent=((0.0, 47.5), (0.0, 35.5)),
    )


def build_paper_scenes():
    return {"paper-2d": scene_2d(), "paper-3d": scene_3d(), "paper-warehouse": scene_warehouse()}


BUILTIN = {"paper-2d": scene_2d, "paper-3d": scene_3d, "paper-warehouse": scene_warehouse}


def builtin_scene(name):
    try:
        return BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown builtin scene {name!r}; choose from {sorted(BUILTIN)}") from None
