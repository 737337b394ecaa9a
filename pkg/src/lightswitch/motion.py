"""Swing doors and drawers: hinge, lever, gripper roll and the opening arc.

Box3D orientation columns are the box's local axes: column 0 spans the front
width (horizontal), column 1 is the outward front normal, column 2 points up.

Frame G is the gripper frame at the grasped handle: x points into the door
(the approach direction), z is world-up along the hinge, y = z cross x. With
this frame the opening arc is ``tau(alpha) = -l [sin a, s (1 - cos a), 0]``
and the hinge line passes through ``(0, -s l, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .affordance import ROTATION, TRANSLATION, MotionPrimitive
from .errors import AngleOutOfRange, HandleOutsideFront, NonPositiveLever, NotRevolute, TooFewSteps
from .geometry import principal_axis

ECCENTRICITY = 0.25  # fraction of the front half-width
FRONT_TOLERANCE = 0.10


@dataclass(frozen=True)
class Box3D:
    center: np.ndarray
    half_extents: np.ndarray
    orientation: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        h = np.asarray(self.half_extents, dtype=float).reshape(3)
        R = np.eye(3) if self.orientation is None else np.asarray(self.orientation, dtype=float).reshape(3, 3)
        if np.any(h <= 0):
            raise ValueError("half extents must be positive")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise ValueError("orientation must be orthonormal")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "orientation", R)

    @property
    def width_axis(self) -> np.ndarray:
        return self.orientation[:, 0]

    @property
    def normal_axis(self) -> np.ndarray:
        return self.orientation[:, 1]

    @property
    def up_axis(self) -> np.ndarray:
        return self.orientation[:, 2]

    def local(self, point) -> np.ndarray:
        return (np.asarray(point, dtype=float) - self.center) @ self.orientation

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.orientation.T

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "half_extents": self.half_extents.tolist(),
                "orientation": self.orientation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(d["center"], d["half_extents"], d.get("orientation"))


@dataclass(frozen=True)
class DoorPrimitive:
    base: MotionPrimitive
    hinge_axis_point: np.ndarray
    lever: float
    rotation_sense: str
    gripper_roll_axis: np.ndarray
    frame: np.ndarray  # columns: x, y, z of frame G in world coordinates

    @property
    def sign(self) -> int:
        return 1 if self.rotation_sense == "+" else -1

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "hinge_axis_point": self.hinge_axis_point.tolist(),
                "lever": self.lever, "rotation_sense": self.rotation_sense,
                "gripper_roll_axis": self.gripper_roll_axis.tolist(), "frame": self.frame.tolist()}


def _check_inside(handle: Box3D, front: Box3D) -> np.ndarray:
    local = front.local(handle.center)
    limit = front.half_extents * (1.0 + FRONT_TOLERANCE)
    # depth is not checked: handles protrude from the front face
    if abs(local[0]) > limit[0] or abs(local[2]) > limit[2]:
        raise HandleOutsideFront(f"handle center {handle.center.tolist()} is outside the front box")
    return local


def classify_interaction(handle: Box3D, front: Box3D) -> str:
    """Rotation if the handle sits off-center laterally, otherwise translation."""
    local = _check_inside(handle, front)
    if abs(local[0]) > ECCENTRICITY * front.half_extents[0]:
        return ROTATION
    return TRANSLATION


def build_door_primitive(handle: Box3D, front: Box3D, handle_points=None) -> DoorPrimitive:
    """Revolute primitive about the front edge farthest from the handle.

    The hinge line is vertical, at the far lateral edge, passing through the
    handle's depth so the lever is the purely lateral handle-to-edge distance.
    Without ``handle_points`` the handle box corners stand in for its cloud.
    """
    if classify_interaction(handle, front) != ROTATION:
        raise NotRevolute("handle is centered; this is a drawer")
    local = front.local(handle.center)
    side = 1.0 if local[0] > 0 else -1.0
    far_edge = -side * front.half_extents[0]
    lateral = far_edge - local[0]
    hinge_point = handle.center + lateral * front.width_axis
    lever = abs(lateral)

    x = -front.normal_axis
    z = front.up_axis
    y = np.cross(z, x)
    # hinge sits at -s * l along y
    s = 1 if np.dot(hinge_point - handle.center, y) < 0 else -1
    pts = handle.corners() if handle_points is None else np.asarray(handle_points, dtype=float)
    roll = principal_axis(pts)
    base = MotionPrimitive(ROTATION, z, handle.center)
    return DoorPrimitive(base, hinge_point, float(lever), "+" if s > 0 else "-", roll,
                         np.column_stack([x, y, z]))


def swing_trajectory_point(lever: float, alpha: float, sense: str | int = "+") -> np.ndarray:
    """Handle displacement in frame G after opening by ``alpha``."""
    if not lever > 0:
        raise NonPositiveLever(f"lever must be positive, got {lever}")
    if not 0.0 <= alpha <= math.pi / 2:
        raise AngleOutOfRange(f"alpha must lie in [0, pi/2], got {alpha}")
    s = 1.0 if sense in ("+", 1, +1.0) else -1.0
    return -lever * np.array([math.sin(alpha), s * (1.0 - math.cos(alpha)), 0.0])


def sample_trajectory(primitive: DoorPrimitive, n_steps: int = 20) -> list[np.ndarray]:
    if n_steps < 2:
        raise TooFewSteps(f"need at least 2 waypoints, got {n_steps}")
    origin = primitive.base.origin
    out = []
    for k in range(n_steps):
        alpha = (k / (n_steps - 1)) * math.pi / 2
        out.append(origin + primitive.frame @ swing_trajectory_point(primitive.lever, alpha,
                                                                     primitive.rotation_sense))
    return out


def distance_to_line(point, line_point, direction) -> float:
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    v = np.asarray(point, dtype=float) - np.asarray(line_point, dtype=float)
    return float(np.linalg.norm(v - np.dot(v, d) * d))
