"""Software pinhole rasterizer: depth maps and silhouettes for render-and-compare.

Pixel (row i, col j) samples the image plane at (u, v) = (j, i), so a pixel
maps to the camera ray ((j - cx) / fx, (i - cy) / fy, 1). Depth images store
the camera-frame z coordinate in meters with 0 marking background/invalid.
Back-face culling is off; scan and CAD meshes have inconsistent winding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import GeometryError, PointCloud, TriMesh

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


NEAR_PLANE = 1e-6


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera: intrinsics in pixels, world-to-camera extrinsics.

    ``depth`` optionally carries a sensor (or instance-masked) depth map.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsics: np.ndarray
    depth: np.ndarray | None = None

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image size must be positive")
        ext = np.ascontiguousarray(np.asarray(self.extrinsics, dtype=np.float64).reshape(4, 4))
        ext.setflags(write=False)
        object.__setattr__(self, "extrinsics", ext)
        if self.depth is not None:
            d = np.ascontiguousarray(np.asarray(self.depth, dtype=np.float64))
            if d.shape != (self.height, self.width):
                raise GeometryError("depth shape does not match view size")
            if not np.all(np.isfinite(d)) or d.min() < 0:
                raise GeometryError("depth values must be finite and >= 0")
            d.setflags(write=False)
            object.__setattr__(self, "depth", d)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        r = self.extrinsics[:3, :3]
        t = self.extrinsics[:3, 3]
        return points @ r.T + t

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        r = self.extrinsics[:3, :3]
        t = self.extrinsics[:3, 3]
        return (points - t) @ r


@dataclass(frozen=True)
class RenderOutput:
    """Depth map (meters, 0 = background) and the matching silhouette mask."""

    depth: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.depth, dtype=np.float64))
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def silhouette(self) -> np.ndarray:
        return self.depth > 0.0

    @property
    def resolution(self) -> tuple[int, int]:
        return self.depth.shape  # (H, W)


def _clip_near(tri_cam: np.ndarray) -> list[np.ndarray]:
    """Clip one camera-frame triangle against z >= NEAR_PLANE.

    Returns zero, one, or two triangles (a clipped quad is fanned).
    """
    z = tri_cam[:, 2]
    inside = z >= NEAR_PLANE
    n_in = int(inside.sum())
    if n_in == 3:
        return [tri_cam]
    if n_in == 0:
        return []
    poly = []
    for k in range(3):
        a, b = tri_cam[k], tri_cam[(k + 1) % 3]
        ain, bin_ = inside[k], inside[(k + 1) % 3]
        if ain:
            poly.append(a)
        if ain != bin_:
            t = (NEAR_PLANE - a[2]) / (b[2] - a[2])
            poly.append(a + t * (b - a))
    if len(poly) < 3:
        return []
    poly = np.asarray(poly)
    return [poly[[0, k, k + 1]] for k in range(1, len(poly) - 1)]


def rasterize(mesh: TriMesh, view: CameraView, *, use_fast_path: bool = True) -> RenderOutput:
    """Render a mesh into the view's depth buffer (nearest surface per pixel).

    Depth is perspective-correct (1/z interpolated in screen space), so a
    planar surface at constant camera z renders that z exactly. Deterministic;
    a mesh fully behind the camera yields an empty silhouette. The compiled
    fast path and the numpy reference produce identical buffers.
    """
    h, w = view.height, view.width
    zbuf = np.full((h, w), np.inf)
    if len(mesh.triangles):
        cam = view.world_to_camera(mesh.vertices)
        if use_fast_path and _HAVE_NUMBA:
            _raster_kernel(cam, mesh.triangles, view.fx, view.fy, view.cx, view.cy, zbuf)
        else:
            tri_z = cam[mesh.triangles][:, :, 2]
            keep = (tri_z >= NEAR_PLANE).any(axis=1)
            for tri_idx in np.nonzero(keep)[0]:
                for tri in _clip_near(cam[mesh.triangles[tri_idx]]):
                    _raster_triangle(tri, view, zbuf)
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0)
    return RenderOutput(depth)


@njit(cache=True)
def _raster_kernel(cam, tris, fx, fy, cx, cy, zbuf):  # pragma: no cover (compiled)
    h, w = zbuf.shape
    poly = np.empty((4, 3))
    for t in range(tris.shape[0]):
        n_in = 0
        for k in range(3):
            if cam[tris[t, k], 2] >= NEAR_PLANE:
                n_in += 1
        if n_in == 0:
            continue
        if n_in == 3:
            m = 3
            for k in range(3):
                for c in range(3):
                    poly[k, c] = cam[tris[t, k], c]
        else:
            m = 0
            for k in range(3):
                a = tris[t, k]
                b = tris[t, (k + 1) % 3]
                az = cam[a, 2]
                bz = cam[b, 2]
                a_in = az >= NEAR_PLANE
                b_in = bz >= NEAR_PLANE
                if a_in:
                    for c in range(3):
                        poly[m, c] = cam[a, c]
                    m += 1
                if a_in != b_in:
                    s = (NEAR_PLANE - az) / (bz - az)
                    for c in range(3):
                        poly[m, c] = cam[a, c] + s * (cam[b, c] - cam[a, c])
                    m += 1
            if m < 3:
                continue
        for f in range(1, m - 1):
            z0, z1, z2 = poly[0, 2], poly[f, 2], poly[f + 1, 2]
            i0, i1, i2 = 1.0 / z0, 1.0 / z1, 1.0 / z2
            u0 = poly[0, 0] * fx * i0 + cx
            u1 = poly[f, 0] * fx * i1 + cx
            u2 = poly[f + 1, 0] * fx * i2 + cx
            v0 = poly[0, 1] * fy * i0 + cy
            v1 = poly[f, 1] * fy * i1 + cy
            v2 = poly[f + 1, 1] * fy * i2 + cy
            x0 = max(int(np.ceil(min(u0, u1, u2))), 0)
            x1 = min(int(np.floor(max(u0, u1, u2))), w - 1)
            y0 = max(int(np.ceil(min(v0, v1, v2))), 0)
            y1 = min(int(np.floor(max(v0, v1, v2))), h - 1)
            if x0 > x1 or y0 > y1:
                continue
            denom = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
            if abs(denom) < 1e-14:
                continue
            tol = -1e-12 * abs(denom)
            for iy in range(y0, y1 + 1):
                for ix in range(x0, x1 + 1):
                    w2b = (u1 - u0) * (iy - v0) - (v1 - v0) * (ix - u0)
                    w0b = (u2 - u1) * (iy - v1) - (v2 - v1) * (ix - u1)
                    w1b = denom - w0b - w2b
                    if denom > 0:
                        cover = w0b >= tol and w1b >= tol and w2b >= tol
                    else:
                        cover = w0b <= -tol and w1b <= -tol and w2b <= -tol
                    if not cover:
                        continue
                    iz = (w0b * i0 + w1b * i1 + w2b * i2) / denom
                    if iz <= 0.0:
                        continue
                    d = 1.0 / iz
                    if d < zbuf[iy, ix]:
                        zbuf[iy, ix] = d


def _raster_triangle(tri_cam: np.ndarray, view: CameraView, zbuf: np.ndarray) -> None:
    z = tri_cam[:, 2]
    invz = 1.0 / z
    us = tri_cam[:, 0] * view.fx * invz + view.cx
    vs = tri_cam[:, 1] * view.fy * invz + view.cy
    x0 = max(int(np.ceil(us.min())), 0)
    x1 = min(int(np.floor(us.max())), view.width - 1)
    y0 = max(int(np.ceil(vs.min())), 0)
    y1 = min(int(np.floor(vs.max())), view.height - 1)
    if x0 > x1 or y0 > y1:
        return
    # signed twice-area; no backface culling, so only |denom| matters
    denom = (us[1] - us[0]) * (vs[2] - vs[0]) - (vs[1] - vs[0]) * (us[2] - us[0])
    if abs(denom) < 1e-14:
        return
    px = np.arange(x0, x1 + 1, dtype=np.float64)
    py = np.arange(y0, y1 + 1, dtype=np.float64)[:, None]
    dx0, dy0 = px - us[0], py - vs[0]
    dx1, dy1 = px - us[1], py - vs[1]
    w2 = (us[1] - us[0]) * dy0 - (vs[1] - vs[0]) * dx0
    w0 = (us[2] - us[1]) * dy1 - (vs[2] - vs[1]) * dx1
    w1 = denom - w0 - w2
    tol = -1e-12 * abs(denom)
    if denom > 0:
        cover = (w0 >= tol) & (w1 >= tol) & (w2 >= tol)
    else:
        cover = (w0 <= -tol) & (w1 <= -tol) & (w2 <= -tol)
    if not cover.any():
        return
    interp_invz = (w0 * invz[0] + w1 * invz[1] + w2 * invz[2]) / denom
    with np.errstate(divide="ignore", over="ignore"):
        depth = 1.0 / interp_invz
    patch = zbuf[y0 : y1 + 1, x0 : x1 + 1]
    np.copyto(patch, depth, where=cover & (depth > 0) & (depth < patch))


def backproject(view: CameraView) -> PointCloud:
    """Unproject every valid depth pixel to a world-frame point."""
    if view.depth is None:
        raise GeometryError("view has no depth to backproject")
    ii, jj = np.nonzero(view.depth > 0)
    d = view.depth[ii, jj]
    x = (jj - view.cx) / view.fx * d
    y = (ii - view.cy) / view.fy * d
    cam = np.stack([x, y, d], axis=1)
    return PointCloud(view.camera_to_world(cam))


@dataclass(frozen=True)
class Observation:
    """One view of a scene object: the camera plus the target depth/silhouette."""

    view: CameraView
    target: RenderOutput


def build_observations(
    views: list[CameraView], partial_mesh: TriMesh | None = None
) -> list[Observation]:
    """Target renders per view: masked sensor depth when present, else the
    object's partial mesh rasterized. Fails if the object is seen nowhere."""
    obs = []
    for view in views:
        if view.depth is not None:
            target = RenderOutput(view.depth)
        elif partial_mesh is not None:
            target = rasterize(partial_mesh, view)
        else:
            raise GeometryError("view carries no depth and no partial mesh given")
        obs.append(Observation(view=view, target=target))
    if not obs or not any(o.target.silhouette.any() for o in obs):
        raise GeometryError("no observations: object invisible in all views")
    return obs


_PGM_SCALE_RE = re.compile(rb"#\s*units-per-meter:\s*([0-9.eE+-]+)")
_PGM_TOKEN_RE = re.compile(rb"\s*(?:#[^\n]*\n)*\s*(\S+)")


def save_depth_pgm(depth: np.ndarray, path: str | Path, units_per_meter: float = 1000.0) -> None:
    """Write a depth map as 16-bit binary PGM, millimeter units by default.

    The scale factor rides in a header comment. Values round to the nearest
    unit and load divides by the same factor, so maps quantized to the scale
    round-trip bit-exactly.
    """
    depth = np.asarray(depth, dtype=np.float64)
    units = np.round(depth * units_per_meter)
    if units.min() < 0 or units.max() > 65535:
        raise GeometryError("depth out of 16-bit range at this scale")
    h, w = depth.shape
    header = f"P5\n# units-per-meter: {units_per_meter!r}\n{w} {h}\n65535\n".encode()
    Path(path).write_bytes(header + units.astype(">u2").tobytes())


def load_depth_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise GeometryError(f"{path}: not a binary PGM")
    scale_match = _PGM_SCALE_RE.search(raw)
    units_per_meter = float(scale_match.group(1)) if scale_match else 1000.0
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        m = _PGM_TOKEN_RE.match(raw, pos)
        if m is None:
            raise GeometryError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 65535:
        raise GeometryError(f"{path}: expected 16-bit PGM")
    pos += 1  # single whitespace after maxval
    if len(raw) - pos < h * w * 2:
        raise GeometryError(f"{path}: truncated PGM payload")
    data = np.frombuffer(raw, dtype=">u2", count=h * w, offset=pos)
    return data.reshape(h, w).astype(np.float64) / units_per_meter


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera extrinsics for a camera at ``eye`` looking at ``target``.

    Camera convention: +z forward, +x right, +y down (image v grows downward).
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise GeometryError("look_at eye and target coincide")
    fwd = fwd / n
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        right = np.cross(fwd, (0.0, 1.0, 0.0))
        rn = np.linalg.norm(right)
    right /= rn
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd], axis=0)
    ext = np.eye(4)
    ext[:3, :3] = r
    ext[:3, 3] = -r @ eye
    return ext
