"""Camera model, depth unprojection, RANSAC plane fitting and pose averaging."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateGeometry,
    EmptyInput,
    InconsistentOrientation,
    InsufficientPoints,
    IsotropicCloud,
    NonPositiveDepth,
    NoValidDepth,
    OutOfBounds,
)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class CameraPose:
    """Rigid transform mapping camera-frame points into the world frame.

    The camera frame follows the usual optical convention: x right, y down,
    z along the viewing direction.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0)) -> "CameraPose":
        position = np.asarray(position, dtype=float)
        z = np.asarray(target, dtype=float) - position
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        if np.linalg.norm(x) < 1e-9:
            raise ValueError("viewing direction parallel to up vector")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.column_stack([x, y, z]), position)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def to_camera(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return (p - self.translation) @ self.rotation

    def to_world(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(np.asarray(d["rotation"], dtype=float), np.asarray(d["translation"], dtype=float))


@dataclass(frozen=True)
class DepthImage:
    """Metric depth along the optical axis, stored as a (height, width) array.

    Values that are non-finite or <= 0 mark missing measurements.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("depth image must be 2-D")
        # negative values are tolerated and treated as missing
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def valid_mask(self) -> np.ndarray:
        v = self.values
        return np.isfinite(v) & (v > 0)

    def save(self, path) -> None:
        """Write little-endian float32 raw data plus a ``.json`` sidecar."""
        path = Path(path)
        self.values.astype("<f4").tofile(path)
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps({"width": self.width, "height": self.height, "unit": "m"}))

    @classmethod
    def load(cls, path) -> "DepthImage":
        path = Path(path)
        sidecar = path.with_suffix(path.suffix + ".json")
        meta = json.loads(sidecar.read_text())
        if meta.get("unit", "m") != "m":
            raise ValueError(f"unsupported depth unit {meta.get('unit')!r}")
        w, h = int(meta["width"]), int(meta["height"])
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != w * h:
            raise ValueError(f"depth file has {raw.size} values, sidecar declares {w}x{h}")
        return cls(raw.reshape(h, w).astype(float))


@dataclass(frozen=True)
class ElementPose:
    """Center point and unit interaction normal of a functional element."""

    center: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        n = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("normal must be a unit vector")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "normal", n)

    @classmethod
    def from_vectors(cls, center, normal) -> "ElementPose":
        n = np.asarray(normal, dtype=float)
        return cls(np.asarray(center, dtype=float), n / np.linalg.norm(n))

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "normal": self.normal.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ElementPose":
        return cls.from_vectors(d["center"], d["normal"])

    def __eq__(self, other):
        if not isinstance(other, ElementPose):
            return NotImplemented
        return np.array_equal(self.center, other.center) and np.array_equal(self.normal, other.normal)


@dataclass(frozen=True)
class PlaneFit:
    normal: np.ndarray
    offset: float
    inlier_indices: np.ndarray
    inlier_ratio: float

    def distances(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def __eq__(self, other):
        if not isinstance(other, PlaneFit):
            return NotImplemented
        return (np.array_equal(self.normal, other.normal) and self.offset == other.offset
                and np.array_equal(self.inlier_indices, other.inlier_indices)
                and self.inlier_ratio == other.inlier_ratio)


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 0.01
    max_iters: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def angle_between(a, b) -> float:
    """Angle in radians between two vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def unproject_pixel(pixel, depth: float, intr: CameraIntrinsics, cam: CameraPose | None = None) -> np.ndarray:
    u, v = float(pixel[0]), float(pixel[1])
    if not (math.isfinite(depth) and depth > 0):
        raise NonPositiveDepth(f"depth must be finite and > 0, got {depth}")
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
    p_cam = np.array([(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth])
    if cam is None:
        return p_cam
    return cam.rotation @ p_cam + cam.translation


def unproject_pixels(us, vs, depths, intr: CameraIntrinsics, cam: CameraPose | None = None) -> np.ndarray:
    """Vectorised :func:`unproject_pixel` without bounds checks; returns (N, 3)."""
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    d = np.asarray(depths, dtype=float)
    p = np.column_stack([(us - intr.cx) * d / intr.fx, (vs - intr.cy) * d / intr.fy, d])
    if cam is None:
        return p
    return cam.to_world(p)


def project_point(point, intr: CameraIntrinsics, cam: CameraPose | None = None) -> np.ndarray:
    """World point -> (u, v) pixel coordinates. Inverse of :func:`unproject_pixel`."""
    p = np.asarray(point, dtype=float)
    if cam is not None:
        p = cam.to_camera(p)
    if p[..., 2].min() <= 0:
        raise NonPositiveDepth("point behind the camera")
    u = intr.fx * p[..., 0] / p[..., 2] + intr.cx
    v = intr.fy * p[..., 1] / p[..., 2] + intr.cy
    return np.stack([u, v], axis=-1)


def _orient(normal: np.ndarray, offset: float, toward) -> tuple[np.ndarray, float]:
    if toward is not None:
        if np.dot(normal, np.asarray(toward, dtype=float)) - offset < 0:
            return -normal, -offset
        return normal, offset
    # canonical sign: largest-magnitude component positive
    if normal[np.argmax(np.abs(normal))] < 0:
        return -normal, -offset
    return normal, offset


def _sample_triples(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    a = rng.integers(0, n, k)
    b = rng.integers(0, n - 1, k)
    b += b >= a
    c = rng.integers(0, n - 2, k)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    c += c >= lo
    c += c >= hi
    return np.column_stack([a, b, c])


def fit_plane_ransac(points, inlier_threshold: float = 0.01, max_iters: int = 500,
                     seed: int = 0, toward=None) -> PlaneFit:
    """Fit a plane with RANSAC followed by a least-squares refit on the inliers.

    Args:
        points: (N, 3) array.
        inlier_threshold: max point-to-plane distance for an inlier, meters.
        max_iters: number of random 3-point hypotheses.
        seed: RNG seed; identical inputs give identical fits.
        toward: optional viewpoint; the normal is flipped to point at it.
            Without it the largest-magnitude normal component is made positive.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3:
        raise ValueError("points must be an (N, 3) array")
    n = len(P)
    if n < 3:
        raise InsufficientPoints(f"need at least 3 points, got {n}")

    rng = np.random.default_rng(seed)
    triples = _sample_triples(rng, n, max_iters)
    p0 = P[triples[:, 0]]
    normals = np.cross(P[triples[:, 1]] - p0, P[triples[:, 2]] - p0)
    norms = np.linalg.norm(normals, axis=1)
    scale = max(float(np.ptp(P, axis=0).max()), 1e-12)
    ok = norms > 1e-12 * scale * scale
    if not ok.any():
        raise DegenerateGeometry(f"all {max_iters} samples were collinear")
    normals = normals[ok] / norms[ok, None]
    offsets = np.einsum("ij,ij->i", normals, p0[ok])

    # bound the (hypotheses x points) distance matrix to a few million entries
    chunk = max(1, 4_000_000 // n)
    counts = np.empty(len(normals), dtype=np.int64)
    for s in range(0, len(normals), chunk):
        d = np.abs(normals[s:s + chunk] @ P.T - offsets[s:s + chunk, None])
        counts[s:s + chunk] = (d <= inlier_threshold).sum(axis=1)
    best = int(np.argmax(counts))
    inliers = np.flatnonzero(np.abs(P @ normals[best] - offsets[best]) <= inlier_threshold)

    normal, offset = normals[best], offsets[best]
    if len(inliers) >= 3:
        Q = P[inliers]
        centroid = Q.mean(axis=0)
        _, _, vt = np.linalg.svd(Q - centroid, full_matrices=False)
        refit = vt[-1]
        if np.dot(refit, normal) < 0:
            refit = -refit
        normal, offset = refit, float(refit @ centroid)
    normal, offset = _orient(normal / np.linalg.norm(normal), float(offset), toward)
    inliers = np.flatnonzero(np.abs(P @ normal - offset) <= inlier_threshold)
    return PlaneFit(normal, float(offset), inliers, len(inliers) / n)


def _bbox_pixel_grid(bbox, width: int, height: int):
    u0 = max(int(math.ceil(bbox.x1)), 0)
    u1 = min(int(math.floor(bbox.x2)), width - 1)
    v0 = max(int(math.ceil(bbox.y1)), 0)
    v1 = min(int(math.floor(bbox.y2)), height - 1)
    return u0, u1, v0, v1


def estimate_element_pose(bbox, depth: DepthImage, intr: CameraIntrinsics, cam: CameraPose,
                          ransac_cfg: RansacConfig | None = None) -> ElementPose:
    """Element pose from a detection box and a depth image.

    The center is the bbox's geometric center, unprojected with the median of
    valid depths in the 3x3 neighbourhood of the nearest pixel. The normal is
    the RANSAC plane over every valid pixel inside the box, oriented toward
    the camera.
    """
    cfg = ransac_cfg or RansacConfig()
    if depth.width != intr.width or depth.height != intr.height:
        raise ValueError("depth image size does not match intrinsics")
    if bbox.x1 < 0 or bbox.y1 < 0 or bbox.x2 > intr.width - 1 or bbox.y2 > intr.height - 1:
        raise OutOfBounds(f"bbox {bbox} outside the image")
    valid = depth.valid_mask()

    uc, vc = (bbox.x1 + bbox.x2) / 2.0, (bbox.y1 + bbox.y2) / 2.0
    iu, iv = int(round(uc)), int(round(vc))
    win = (slice(max(iv - 1, 0), iv + 2), slice(max(iu - 1, 0), iu + 2))
    neighbourhood = depth.values[win][valid[win]]
    if neighbourhood.size == 0:
        raise NoValidDepth(f"no valid depth around bbox center ({uc:.1f}, {vc:.1f})")
    center = unproject_pixel((uc, vc), float(np.median(neighbourhood)), intr, cam)

    u0, u1, v0, v1 = _bbox_pixel_grid(bbox, intr.width, intr.height)
    if u1 < u0 or v1 < v0:
        raise InsufficientPoints(f"bbox {bbox} contains no pixel centers")
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    m = valid[v0:v1 + 1, u0:u1 + 1]
    if m.sum() < 3:
        raise InsufficientPoints(f"only {int(m.sum())} valid depth pixels in bbox")
    pts = unproject_pixels(uu[m], vv[m], depth.values[v0:v1 + 1, u0:u1 + 1][m], intr, cam)
    fit = fit_plane_ransac(pts, cfg.threshold, cfg.max_iters, cfg.seed, toward=cam.center)
    return ElementPose(center, fit.normal)


def average_poses(poses: Sequence[ElementPose]) -> ElementPose:
    """Equal-weight mean of centers and normals; the mean normal is renormalised."""
    if len(poses) == 0:
        raise EmptyInput("cannot average an empty list of poses")
    normals = np.array([p.normal for p in poses])
    if np.any(normals @ normals[0] < 0):
        raise InconsistentOrientation("a normal is more than 90 degrees from the first")
    centers = np.array([p.center for p in poses])
    n = normals.mean(axis=0)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise InconsistentOrientation("normals cancel out")
    return ElementPose(centers.mean(axis=0), n / norm)


def principal_axis(points) -> np.ndarray:
    """Major axis of a point cloud (largest covariance eigenvector).

    Sign convention: the largest-magnitude component is positive.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3:
        raise ValueError("points must be an (N, 3) array")
    if len(np.unique(P, axis=0)) < 2:
        raise InsufficientPoints("need at least 2 distinct points")
    C = np.cov(P - P.mean(axis=0), rowvar=False)
    w, V = np.linalg.eigh(C)
    if w[2] - w[1] <= 1e-9 * max(w[2], 1e-300):
        raise IsotropicCloud("top two covariance eigenvalues coincide")
    axis = V[:, 2]
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    return axis / np.linalg.norm(axis)
