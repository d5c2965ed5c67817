"""Synthetic facade perception: noisy clouds to nominal cuboid estimates.

Stands in for a SLAM + segmentation front end.  Ground-truth building
faces are sampled into labeled, depth-noised point clouds; per face a
RANSAC plane fit plus corner back-projection recovers the nominal
facade pose and extent.  Segmentation masks are replaced by the true
face labels, with corner pixel noise re-injecting the uncertainty a
mask edge would carry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Cuboid, CuboidSize, GroundPose2D, wrap_angle
from .uncertainty import ErrorBank, UncertainCuboid

DEFAULT_INTRINSICS = np.array([[420.0, 0.0, 320.0], [0.0, 420.0, 240.0], [0.0, 0.0, 1.0]])

_DEGENERATE_RAY = 1e-6


@dataclass
class CameraModel:
    """Pinhole camera: x right, y down, z along the optical axis.

    Attributes:
        intrinsics: 3x3 upper-triangular matrix with positive focal lengths.
        rotation: 3x3 camera-to-world rotation (columns are the camera
            axes expressed in the world frame).
        translation: (3,) camera origin in the world frame, meters.
    """

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=float).reshape(3, 3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        k = self.intrinsics
        if np.any(np.abs(k[np.tril_indices(3, -1)]) > 0.0):
            raise ValueError("intrinsics must be upper-triangular")
        if k[0, 0] <= 0.0 or k[1, 1] <= 0.0:
            raise ValueError("focal lengths must be positive")
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0.0:
            raise ValueError("rotation must be a proper orthonormal matrix")

    @property
    def origin(self) -> np.ndarray:
        return self.translation

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """World points to (pixels (n, 2), camera depths (n,))."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        cam = (pts - self.translation) @ self.rotation
        depths = cam[:, 2]
        homog = (self.intrinsics @ cam.T).T
        return homog[:, :2] / depths[:, None], depths

    def rays(self, pixels) -> np.ndarray:
        """Camera-frame rays K^-1 [u, v, 1] for pixel coordinates, (n, 3)."""
        pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
        homog = np.concatenate([pix, np.ones((pix.shape[0], 1))], axis=1)
        return np.linalg.solve(self.intrinsics, homog.T).T

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.tolist(),
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        return cls(
            intrinsics=np.asarray(data["intrinsics"]),
            rotation=np.asarray(data["rotation"]),
            translation=np.asarray(data["translation"]),
        )


def look_at_camera(position, target, intrinsics=None) -> CameraModel:
    """Camera at ``position`` with the optical axis through ``target``.

    The image x axis stays horizontal; degenerate for a vertical axis.
    """
    position = np.asarray(position, dtype=float).reshape(3)
    forward = np.asarray(target, dtype=float).reshape(3) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera target coincides with its position")
    z_axis = forward / norm
    x_axis = np.cross(z_axis, np.array([0.0, 0.0, 1.0]))
    if np.linalg.norm(x_axis) < 1e-9:
        raise ValueError("optical axis parallel to the vertical is unsupported")
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    rotation = np.stack([x_axis, y_axis, z_axis], axis=1)
    k = DEFAULT_INTRINSICS if intrinsics is None else intrinsics
    return CameraModel(intrinsics=k, rotation=rotation, translation=position)


@dataclass(frozen=True)
class Face:
    """One vertical rectangular face of a building cuboid.

    axis_u is the horizontal in-plane direction (cross(up, outward)); the
    vertical in-plane direction is always world z.
    """

    center: np.ndarray
    outward: np.ndarray
    axis_u: np.ndarray
    half_width: float
    half_height: float

    @property
    def area(self) -> float:
        return 4.0 * self.half_width * self.half_height

    def corners(self) -> np.ndarray:
        """(4, 3) corners ordered bottom-left, bottom-right, top-right, top-left
        as seen from outside."""
        up = np.array([0.0, 0.0, self.half_height])
        u = self.axis_u * self.half_width
        return np.stack([
            self.center - u - up,
            self.center + u - up,
            self.center + u + up,
            self.center - u + up,
        ])

    def plane(self) -> tuple[np.ndarray, float]:
        """Outward plane (n, d) with n . x + d = 0 on the face."""
        return self.outward, -float(self.outward @ self.center)


def face_rectangles(cuboid: Cuboid) -> list[Face]:
    """The four vertical side faces, ordered +normal, -normal, +tangent, -tangent."""
    c, s = math.cos(cuboid.pose.yaw), math.sin(cuboid.pose.yaw)
    normal = np.array([c, s, 0.0])
    tangent = np.array([-s, c, 0.0])
    hx, hy, hz = cuboid.size.half_extents
    center = cuboid.center
    faces = []
    for outward, offset, half_width in (
        (normal, hx, hy),
        (-normal, hx, hy),
        (tangent, hy, hx),
        (-tangent, hy, hx),
    ):
        axis_u = np.cross(np.array([0.0, 0.0, 1.0]), outward)
        faces.append(
            Face(
                center=center + offset * outward,
                outward=outward,
                axis_u=axis_u,
                half_width=half_width,
                half_height=hz,
            )
        )
    return faces


@dataclass
class LabeledCloud:
    """World points with their source-face labels.

    labels rows are (building index, face index in face_rectangles order).
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1, 2)
        if self.points.shape[0] != self.labels.shape[0]:
            raise ValueError("points and labels must have equal length")


def visible_faces(buildings, camera: CameraModel, max_range=None) -> list[tuple[int, int, Face]]:
    """Faces whose outward normal points toward the camera, front of the lens.

    Occlusion between buildings is ignored; the cloud is a synthetic
    stand-in, not a renderer.
    """
    out = []
    for b_idx, cub in enumerate(buildings):
        for f_idx, face in enumerate(face_rectangles(cub)):
            to_cam = camera.origin - face.center
            if face.outward @ to_cam <= 0.0:
                continue
            _, depth = camera.project(face.center)
            if depth[0] <= 0.0:
                continue
            if max_range is not None and np.linalg.norm(to_cam) > max_range:
                continue
            out.append((b_idx, f_idx, face))
    return out


def synthesize_cloud(
    buildings,
    camera: CameraModel,
    noise: float,
    density: float,
    rng_seed: int,
    max_range=None,
) -> LabeledCloud:
    """Sample visible faces into a labeled cloud with depth-scaled ray noise.

    Per face the point count is Poisson(density * area); each point is
    perturbed along its camera ray by N(0, (noise * depth / 10 m)^2), the
    depth dependence mimicking triangulation error growth.
    """
    if density <= 0.0:
        raise ValueError("density must be positive")
    if noise < 0.0:
        raise ValueError("noise must be nonnegative")
    faces = visible_faces(buildings, camera, max_range)
    if not faces:
        raise ValueError("no visible face in the scenario")
    rng = np.random.default_rng(rng_seed)
    chunks = []
    label_chunks = []
    for b_idx, f_idx, face in faces:
        count = int(rng.poisson(density * face.area))
        if count == 0:
            continue
        uv = rng.uniform(-1.0, 1.0, size=(count, 2))
        pts = (
            face.center
            + uv[:, :1] * face.half_width * face.axis_u
            + uv[:, 1:] * face.half_height * np.array([0.0, 0.0, 1.0])
        )
        _, depths = camera.project(pts)
        offsets = camera.origin - pts
        dist = np.linalg.norm(offsets, axis=1, keepdims=True)
        ray_dir = -offsets / dist
        eps = rng.normal(0.0, 1.0, size=count) * (noise * depths / 10.0)
        pts = pts + eps[:, None] * ray_dir
        chunks.append(pts)
        label_chunks.append(np.full((count, 2), (b_idx, f_idx), dtype=np.int64))
    if not chunks:
        return LabeledCloud(points=np.empty((0, 3)), labels=np.empty((0, 2), dtype=np.int64))
    return LabeledCloud(points=np.concatenate(chunks), labels=np.concatenate(label_chunks))


@dataclass
class PlaneFit:
    """RANSAC plane n . x + offset = 0 with its supporting inliers."""

    normal: np.ndarray
    offset: float
    inliers: np.ndarray
    rms: float
    corners: np.ndarray | None = None


def _plane_through(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    return n, -float(n @ p0)


def _least_squares_plane(points):
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    n = vt[-1]
    return n, -float(n @ centroid)


def ransac_plane(points, threshold=0.05, iterations=100, rng_seed=0, toward=None) -> PlaneFit:
    """Best plane over random 3-point hypotheses, least-squares refined.

    Ties on inlier count break toward smaller RMS residual, then the
    earlier hypothesis.  ``toward`` (e.g. the camera origin) fixes the
    normal sign; otherwise the largest normal component is made positive.
    Rejects fewer than 3 points and collinear input.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n_pts = pts.shape[0]
    if n_pts < 3:
        raise ValueError("plane fitting needs at least 3 points")
    centered = pts - pts.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    if svals[1] <= 1e-12 * max(svals[0], 1.0):
        raise ValueError("points are collinear")
    rng = np.random.default_rng(rng_seed)
    triples = rng.integers(0, n_pts, size=(int(iterations), 3))
    best = None  # (count, rms, normal, offset)
    for tri in triples:
        plane = _plane_through(pts[tri[0]], pts[tri[1]], pts[tri[2]])
        if plane is None:
            continue
        normal, offset = plane
        resid = np.abs(pts @ normal + offset)
        mask = resid <= threshold
        count = int(mask.sum())
        rms = float(np.sqrt(np.mean(resid[mask] ** 2))) if count else np.inf
        if best is None or count > best[0] or (count == best[0] and rms < best[1]):
            best = (count, rms, normal, offset)
    if best is None:
        normal, offset = _least_squares_plane(pts)
    else:
        normal, offset = best[2], best[3]
        support = np.abs(pts @ normal + offset) <= threshold
        if support.sum() >= 3:
            normal, offset = _least_squares_plane(pts[support])
    if toward is not None:
        side = normal @ np.asarray(toward, dtype=float) + offset
        if side < 0.0:
            normal, offset = -normal, -offset
    elif normal[np.argmax(np.abs(normal))] < 0.0:
        normal, offset = -normal, -offset
    resid = np.abs(pts @ normal + offset)
    inliers = np.flatnonzero(resid <= threshold)
    rms = float(np.sqrt(np.mean(resid[inliers] ** 2))) if inliers.size else np.inf
    return PlaneFit(normal=normal, offset=offset, inliers=inliers, rms=rms)


def back_project_corners(fit: PlaneFit, camera: CameraModel, mask_corners) -> np.ndarray:
    """Intersect pixel rays with the fitted plane, in world coordinates.

    Depth along each ray is -d_c / (n_c . ray) with the plane expressed
    in the camera frame; rays within 1e-6 of parallel are rejected.
    """
    pix = np.asarray(mask_corners, dtype=float).reshape(-1, 2)
    rays = camera.rays(pix)
    n_cam = camera.rotation.T @ fit.normal
    d_cam = float(fit.normal @ camera.translation) + fit.offset
    denom = rays @ n_cam
    if np.any(np.abs(denom) <= _DEGENERATE_RAY):
        raise ValueError("mask ray nearly parallel to the fitted plane")
    depths = -d_cam / denom
    corners_cam = depths[:, None] * rays
    return corners_cam @ camera.rotation.T + camera.translation


@dataclass
class PerceptionResult:
    """Nominal cuboid estimates with their face labels and diagnostics."""

    cuboids: list
    labels: list
    fits: list
    skipped: list = field(default_factory=list)


def estimate_nominal(
    cloud: LabeledCloud,
    camera: CameraModel,
    buildings,
    bank: ErrorBank,
    threshold=0.05,
    iterations=100,
    sigma_px=2.0,
    rng_seed=0,
    thickness=0.2,
    min_incidence=0.05,
) -> PerceptionResult:
    """Per-face nominal facade cuboids from a labeled cloud.

    Each label gets a RANSAC plane; mask corners are the projected
    ground-truth face corners plus N(0, sigma_px^2) pixel noise, then
    back-projected onto the fitted plane.  The nominal yaw is the fitted
    normal's heading, the ground origin is the corner centroid's ground
    projection, and length/height are the mean horizontal/vertical
    corner gaps.  Labels with fewer than 3 points are skipped and
    reported, as are faces seen within ~asin(min_incidence) of edge-on:
    grazing rays meet the fitted plane at unstable depths and blow up the
    recovered extent.  Every estimate carries ``bank`` as its error model.
    """
    labels = np.unique(cloud.labels, axis=0)
    for b_idx, f_idx in labels:
        if not (0 <= b_idx < len(buildings)) or not (0 <= f_idx < 4):
            raise ValueError(f"label ({b_idx}, {f_idx}) refers to no scenario face")
    pixel_rng = np.random.default_rng(rng_seed)
    fit_seeds = np.random.SeedSequence(rng_seed).generate_state(max(len(labels), 1))
    result = PerceptionResult(cuboids=[], labels=[], fits=[])
    for idx, (b_idx, f_idx) in enumerate(labels):
        mask = np.all(cloud.labels == (b_idx, f_idx), axis=1)
        pts = cloud.points[mask]
        if pts.shape[0] < 3:
            result.skipped.append((int(b_idx), int(f_idx)))
            continue
        fit = ransac_plane(
            pts,
            threshold=threshold,
            iterations=iterations,
            rng_seed=int(fit_seeds[idx]),
            toward=camera.origin,
        )
        face = face_rectangles(buildings[b_idx])[f_idx]
        pix, depths = camera.project(face.corners())
        if np.any(depths <= 0.0):
            result.skipped.append((int(b_idx), int(f_idx)))
            continue
        pix = pix + pixel_rng.normal(0.0, 1.0, size=(4, 2)) * sigma_px
        rays = camera.rays(pix)
        normal_cam = camera.rotation.T @ fit.normal
        incidence = np.abs(rays @ normal_cam) / np.linalg.norm(rays, axis=1)
        if np.min(incidence) < min_incidence:
            result.skipped.append((int(b_idx), int(f_idx)))
            continue
        corners = back_project_corners(fit, camera, pix)
        fit.corners = corners
        yaw = math.atan2(fit.normal[1], fit.normal[0])
        p0 = corners.mean(axis=0)[:2]
        length = 0.5 * (np.linalg.norm(corners[1] - corners[0]) + np.linalg.norm(corners[2] - corners[3]))
        height = 0.5 * (np.linalg.norm(corners[3] - corners[0]) + np.linalg.norm(corners[2] - corners[1]))
        nominal = Cuboid(
            pose=GroundPose2D(origin=p0, yaw=wrap_angle(yaw)),
            size=CuboidSize(length=float(length), height=float(height), thickness=thickness),
        )
        result.cuboids.append(UncertainCuboid(nominal=nominal, bank=bank))
        result.labels.append((int(b_idx), int(f_idx)))
        result.fits.append(fit)
    return result


def face_truth(building: Cuboid, face_index: int, thickness=0.2) -> Cuboid:
    """Ground-truth thin facade cuboid for one face, the estimation target."""
    face = face_rectangles(building)[face_index]
    yaw = math.atan2(face.outward[1], face.outward[0])
    return Cuboid(
        pose=GroundPose2D(origin=face.center[:2].copy(), yaw=yaw),
        size=CuboidSize(length=2.0 * face.half_width, height=2.0 * face.half_height, thickness=thickness),
    )
