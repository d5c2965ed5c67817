"""Cuboid world model and the analytical distance field.

Obstacles are vertical cuboids standing on the ground plane, posed by an
SE(2) pose: a 2-D ground origin plus a yaw angle.  The body frame puts x
along the facade normal, y along the facade tangent and z up, with its
origin at the volumetric center, so the exterior distance to the box is
the familiar ``norm(max(|q_body| - half_extents, 0))``.

Conventions
-----------
* yaw is the world angle of the facade normal, normalized to (-pi, pi].
* a cuboid of height h sits on the ground; its center is at z = h/2.
* distances are unsigned: 0 on or inside the cuboid, Euclidean meters
  outside.  Only the exterior distance matters downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(angle: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    return math.pi if wrapped <= -math.pi else wrapped


@dataclass
class GroundPose2D:
    """Pose of a facade on the ground plane.

    Attributes:
        origin: (2,) ground position of the cuboid center, meters.
        yaw: world heading of the facade normal, radians in (-pi, pi].
    """

    origin: np.ndarray
    yaw: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.yaw = wrap_angle(float(self.yaw))


@dataclass
class CuboidSize:
    """Extents of a cuboid: length along the tangent, height up, thickness
    along the normal.  All strictly positive."""

    length: float
    height: float
    thickness: float = 0.2

    def __post_init__(self):
        self.length = float(self.length)
        self.height = float(self.height)
        self.thickness = float(self.thickness)
        if min(self.length, self.height, self.thickness) <= 0.0:
            raise ValueError("cuboid extents must be strictly positive")

    @property
    def half_extents(self) -> np.ndarray:
        """Body-frame half extents ordered (normal, tangent, vertical)."""
        return np.array([self.thickness / 2.0, self.length / 2.0, self.height / 2.0])


@dataclass
class Cuboid:
    """A vertical cuboid standing on the ground plane."""

    pose: GroundPose2D
    size: CuboidSize

    @property
    def center(self) -> np.ndarray:
        """World position of the volumetric center."""
        return np.array([self.pose.origin[0], self.pose.origin[1], self.size.height / 2.0])

    def vertices(self) -> np.ndarray:
        """The 8 corner points in the world frame, shape (8, 3)."""
        h = self.size.half_extents
        signs = np.array(
            [[sx, sy, sz] for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)]
        )
        body = signs * h
        c, s = math.cos(self.pose.yaw), math.sin(self.pose.yaw)
        world = np.empty_like(body)
        world[:, 0] = c * body[:, 0] - s * body[:, 1]
        world[:, 1] = s * body[:, 0] + c * body[:, 1]
        world[:, 2] = body[:, 2]
        return world + self.center


@dataclass
class LocalTransform:
    """Rigid map from world coordinates into a cuboid's body frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, q: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(q, dtype=float) + self.translation

    def inverse(self) -> "LocalTransform":
        rot_t = self.rotation.T
        return LocalTransform(rotation=rot_t, translation=-rot_t @ self.translation)


def local_transform(cuboid: Cuboid) -> LocalTransform:
    """Build the world-to-body transform of a cuboid.

    The rotation is the z rotation by -yaw, so a unit step along the
    facade normal lands on the body x axis; the translation recenters on
    the volumetric center (ground origin lifted by height/2).
    """
    c, s = math.cos(cuboid.pose.yaw), math.sin(cuboid.pose.yaw)
    rotation = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    translation = -rotation @ cuboid.center
    return LocalTransform(rotation=rotation, translation=translation)


def sdf(cuboid: Cuboid, q) -> float:
    """Unsigned exterior distance from point q to the cuboid surface.

    Returns 0 exactly when q is inside or on the cuboid.
    """
    q = np.asarray(q, dtype=float).reshape(1, 3)
    return float(sdf_batch([cuboid], q)[0, 0])


def sdf_batch(cuboids, queries) -> np.ndarray:
    """Distances from every query point to every cuboid.

    Args:
        cuboids: non-empty list of Cuboid.
        queries: (n, 3) array-like of world points.

    Returns:
        (len(cuboids), n) array; element [c][q] equals ``sdf(cuboids[c], queries[q])``.
    """
    if len(cuboids) == 0:
        raise ValueError("sdf_batch needs at least one cuboid")
    pts = np.asarray(queries, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("sdf_batch needs at least one query point")
    out = np.empty((len(cuboids), pts.shape[0]))
    for i, cub in enumerate(cuboids):
        c, s = math.cos(cub.pose.yaw), math.sin(cub.pose.yaw)
        hx, hy, hz = cub.size.half_extents
        dx = pts[:, 0] - cub.pose.origin[0]
        dy = pts[:, 1] - cub.pose.origin[1]
        dz = pts[:, 2] - cub.size.height / 2.0
        bx = c * dx + s * dy
        by = -s * dx + c * dy
        ex = np.maximum(np.abs(bx) - hx, 0.0)
        ey = np.maximum(np.abs(by) - hy, 0.0)
        ez = np.maximum(np.abs(dz) - hz, 0.0)
        out[i] = np.sqrt(ex * ex + ey * ey + ez * ez)
    return out
