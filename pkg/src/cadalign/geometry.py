"""Geometric substrate: meshes, point clouds, 9-DoF poses, oriented boxes.

All coordinates are in meters, world up-axis is +z. Types are immutable
after construction and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation


class GeometryError(ValueError):
    """Raised for degenerate or inconsistent geometric input."""


def _frozen(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh: (V, 3) float vertices and (T, 3) int vertex indices."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        verts = _frozen(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        tris = _frozen(np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3), dtype=np.int64)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if tris.size:
            if tris.min() < 0 or tris.max() >= len(verts):
                raise GeometryError("triangle index out of range")
            a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
            if np.any((a == b) | (b == c) | (a == c)):
                raise GeometryError("degenerate triangle with repeated vertex index")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(min, max) corners of the axis-aligned bounding box."""
        if not len(self.vertices):
            raise GeometryError("empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())


@dataclass(frozen=True)
class PointCloud:
    """Unordered set of 3D points, shape (N, 3)."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "points", _frozen(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        )

    def __len__(self) -> int:
        return len(self.points)

    def require_nonempty(self, what: str = "point cloud") -> "PointCloud":
        if not len(self.points):
            raise GeometryError(f"{what} is empty")
        return self


def canonicalize_rotvec(rotvec: np.ndarray) -> np.ndarray:
    """Map an axis-angle vector to the equivalent one with angle in [0, pi]."""
    r = np.asarray(rotvec, dtype=np.float64).reshape(3)
    angle = float(np.linalg.norm(r))
    if angle < 1e-300:
        return np.zeros(3)
    axis = r / angle
    angle = math.fmod(angle, 2.0 * math.pi)
    if angle < 0.0:
        angle += 2.0 * math.pi
    if angle > math.pi:
        angle = 2.0 * math.pi - angle
        axis = -axis
    return axis * angle


@dataclass(frozen=True)
class Pose9D:
    """9-DoF pose: translation (m), axis-angle rotation (rad), per-axis scale.

    Vertices of a canonical model map to ``R(rotation) @ (scale * v) + translation``.
    """

    translation: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = canonicalize_rotvec(np.asarray(self.rotation, dtype=np.float64).reshape(3))
        s = np.asarray(self.scale, dtype=np.float64).reshape(3)
        if not np.all(s > 0):
            raise GeometryError("pose scale components must be strictly positive")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r)) and np.all(np.isfinite(s))):
            raise GeometryError("pose parameters must be finite")
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "scale", _frozen(s))

    @staticmethod
    def identity() -> "Pose9D":
        return Pose9D(np.zeros(3), np.zeros(3), np.ones(3))

    def rotation_matrix(self) -> np.ndarray:
        # scipy rejects read-only buffers, hence the copy
        return Rotation.from_rotvec(np.array(self.rotation)).as_matrix()

    def matrix(self) -> np.ndarray:
        """4x4 affine matrix of the scale -> rotate -> translate map."""
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix() * self.scale[None, :]
        m[:3, 3] = self.translation
        return m

    def as_vector(self) -> np.ndarray:
        """Flat (9,) parameter vector: translation, rotation, log-scale."""
        return np.concatenate([self.translation, self.rotation, np.log(self.scale)])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Pose9D":
        v = np.asarray(v, dtype=np.float64).reshape(9)
        return Pose9D(v[0:3], v[3:6], np.exp(v[6:9]))


def transform_points(points: np.ndarray, pose: Pose9D) -> np.ndarray:
    """Apply a pose to an (N, 3) array of canonical-frame points."""
    pts = np.asarray(points, dtype=np.float64)
    lin = pose.rotation_matrix() * pose.scale[None, :]
    return pts @ lin.T + pose.translation


def apply_pose(mesh: TriMesh, pose: Pose9D) -> TriMesh:
    """Pose a mesh; triangle topology is unchanged."""
    return TriMesh(transform_points(mesh.vertices, pose), mesh.triangles)


def compose_up_rotation(pose: Pose9D, angle: float) -> Pose9D:
    """Spin the posed object about its own vertical axis by ``angle`` radians.

    For odd multiples of 90 degrees the x/y scale components swap so the
    result stays expressible in scale -> rotate -> translate form; other
    angles compose the rotation only, which is exact for isotropic x/y scale.
    """
    quarter = angle / (math.pi / 2.0)
    scale = np.array(pose.scale)
    if abs(quarter - round(quarter)) < 1e-9 and round(quarter) % 2 != 0:
        scale = scale[[1, 0, 2]]
    rz = Rotation.from_rotvec([0.0, 0.0, angle])
    rot = (Rotation.from_rotvec(np.array(pose.rotation)) * rz).as_rotvec()
    return Pose9D(pose.translation, rot, scale)


def sample_surface(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    """Sample n points uniformly by area from the mesh surface.

    Deterministic for a fixed seed; triangles are chosen with probability
    proportional to area and points are barycentric-uniform within each.
    """
    if n < 1:
        raise GeometryError("sample count must be >= 1")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not len(mesh.triangles) or total <= 0.0:
        raise GeometryError("degenerate surface")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tris = mesh.triangles[idx]
    p0 = mesh.vertices[tris[:, 0]]
    p1 = mesh.vertices[tris[:, 1]]
    p2 = mesh.vertices[tris[:, 2]]
    pts = p0 + u[:, None] * (p1 - p0) + v[:, None] * (p2 - p0)
    return PointCloud(pts)


@dataclass(frozen=True)
class OrientedBox:
    """PCA-aligned bounding box: center, orthonormal axes (columns), half-extents."""

    center: np.ndarray
    axes: np.ndarray
    extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(np.asarray(self.center).reshape(3)))
        object.__setattr__(self, "axes", _frozen(np.asarray(self.axes).reshape(3, 3)))
        object.__setattr__(self, "extents", _frozen(np.asarray(self.extents).reshape(3)))

    def volume(self) -> float:
        return float(np.prod(2.0 * self.extents))


def _stable_eigvecs(cov: np.ndarray) -> np.ndarray:
    """Eigenvectors of a symmetric 3x3 matrix, descending eigenvalue, right-handed.

    Sign convention: each eigenvector's largest-magnitude component is positive,
    then the last axis is flipped if needed to make determinant +1.
    """
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    v = v[:, order]
    for k in range(3):
        col = v[:, k]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            v[:, k] = -col
    if np.linalg.det(v) < 0:
        v[:, 2] = -v[:, 2]
    return v


def oriented_bbox(cloud: PointCloud) -> OrientedBox:
    """Oriented bounding box from PCA of the point set.

    Axes are covariance eigenvectors in descending eigenvalue order; the box
    center is the midpoint of the per-axis projection ranges. A single point
    yields identity axes and zero extents.
    """
    pts = cloud.require_nonempty().points
    if len(pts) == 1:
        return OrientedBox(pts[0], np.eye(3), np.zeros(3))
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    axes = _stable_eigvecs(cov)
    proj = pts @ axes
    lo = proj.min(axis=0)
    hi = proj.max(axis=0)
    center = axes @ ((lo + hi) / 2.0)
    return OrientedBox(center, axes, (hi - lo) / 2.0)


def normalize_to_unit_box(mesh: TriMesh) -> TriMesh:
    """Rescale each axis independently so the bounding box is [-0.5, 0.5]^3.

    Axes with zero range are centered but left unscaled.
    """
    lo, hi = mesh.bounds()
    span = hi - lo
    safe = np.where(span > 1e-12, span, 1.0)
    verts = (mesh.vertices - (lo + hi) / 2.0) / safe
    return TriMesh(verts, mesh.triangles)


def rotation_angle_between(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle in radians between two rotation matrices."""
    m = r_a @ r_b.T
    c = (np.trace(m) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotz(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
