"""Loaders and writers: OBJ triangle meshes and line-oriented XYZ point clouds."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import GeometryError, PointCloud, TriMesh


def load_obj(path: str | Path) -> TriMesh:
    """Read an OBJ file, keeping vertices and faces only.

    Polygonal faces are fan-triangulated; face entries like ``v/vt/vn`` use
    the leading vertex index. Faces that collapse to a repeated vertex are
    dropped.
    """
    vertices: list[list[float]] = []
    triangles: list[tuple[int, int, int]] = []
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise GeometryError(f"{path}:{lineno}: vertex needs 3 coordinates")
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif tag == "f":
                if len(parts) < 4:
                    raise GeometryError(f"{path}:{lineno}: face needs >= 3 vertices")
                idx = []
                for token in parts[1:]:
                    head = token.split("/", 1)[0]
                    i = int(head)
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                for k in range(1, len(idx) - 1):
                    tri = (idx[0], idx[k], idx[k + 1])
                    if len(set(tri)) == 3:
                        triangles.append(tri)
    if not vertices:
        raise GeometryError(f"{path}: no vertices")
    return TriMesh(np.array(vertices), np.array(triangles).reshape(-1, 3))


def save_obj(mesh: TriMesh, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def load_xyz(path: str | Path) -> PointCloud:
    """Read an ASCII point cloud, one ``x y z`` per line, '#' starts a comment."""
    pts: list[list[float]] = []
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise GeometryError(f"{path}:{lineno}: expected 'x y z'")
            pts.append([float(parts[0]), float(parts[1]), float(parts[2])])
    return PointCloud(np.array(pts).reshape(-1, 3))


def save_xyz(cloud: PointCloud, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for p in cloud.points:
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
