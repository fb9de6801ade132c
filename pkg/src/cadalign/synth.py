"""Procedural furniture shapes, databases, and test scenes.

Shapes are low-poly box/cylinder compounds in an up=+z, front=+x canonical
frame; only internal proportions matter because the database normalizes each
model to the unit bounding box. The scene generator places posed instances,
renders per-view instance depth, and back-projects partial point clouds, so
ground truth is known exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose9D, PointCloud, TriMesh, apply_pose
from .meshio import save_obj
from .pipeline import Annotation, SceneObject, Status, classify_symmetry
from .render import CameraView, backproject, look_at, rasterize
from .shape_tree import CadDatabase, CadModel

_BOX_TRIS = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # bottom
        [4, 5, 6], [4, 6, 7],  # top
        [0, 1, 5], [0, 5, 4],
        [1, 2, 6], [1, 6, 5],
        [2, 3, 7], [2, 7, 6],
        [3, 0, 4], [3, 4, 7],
    ],
    dtype=np.int64,
)


def box(center, size) -> tuple[np.ndarray, np.ndarray]:
    cx, cy, cz = center
    hx, hy, hz = (s / 2.0 for s in size)
    verts = np.array(
        [
            [cx - hx, cy - hy, cz - hz],
            [cx + hx, cy - hy, cz - hz],
            [cx + hx, cy + hy, cz - hz],
            [cx - hx, cy + hy, cz - hz],
            [cx - hx, cy - hy, cz + hz],
            [cx + hx, cy - hy, cz + hz],
            [cx + hx, cy + hy, cz + hz],
            [cx - hx, cy + hy, cz + hz],
        ]
    )
    return verts, _BOX_TRIS.copy()


def cylinder(center, radius, height, segments: int = 20) -> tuple[np.ndarray, np.ndarray]:
    cx, cy, cz = center
    ang = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
    ring = np.stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)], axis=1)
    lo = np.column_stack([ring, np.full(segments, cz - height / 2.0)])
    hi = np.column_stack([ring, np.full(segments, cz + height / 2.0)])
    verts = np.vstack([lo, hi, [[cx, cy, cz - height / 2.0]], [[cx, cy, cz + height / 2.0]]])
    cb, ct = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris.append([i, j, segments + i])
        tris.append([j, segments + j, segments + i])
        tris.append([cb, j, i])
        tris.append([ct, segments + i, segments + j])
    return verts, np.array(tris, dtype=np.int64)


def compound(*parts: tuple[np.ndarray, np.ndarray]) -> TriMesh:
    verts_all, tris_all, offset = [], [], 0
    for verts, tris in parts:
        verts_all.append(verts)
        tris_all.append(tris + offset)
        offset += len(verts)
    return TriMesh(np.vstack(verts_all), np.vstack(tris_all))


def box_mesh(size=(1.0, 1.0, 1.0)) -> TriMesh:
    return compound(box((0, 0, 0), size))


def cylinder_mesh(radius: float = 0.4, height: float = 1.0, segments: int = 24) -> TriMesh:
    return compound(cylinder((0, 0, 0), radius, height, segments))


def l_bracket_mesh() -> TriMesh:
    """Asymmetric L-shaped bracket; no up-axis rotation maps it to itself."""
    return compound(
        box((0.0, 0.0, 0.1), (1.0, 0.4, 0.2)),
        box((-0.35, 0.0, 0.55), (0.3, 0.4, 0.7)),
    )


def _u(rng, lo, hi) -> float:
    return float(lo + (hi - lo) * rng.random())


def chair_mesh(rng: np.random.Generator) -> TriMesh:
    w = _u(rng, 0.42, 0.52)
    d = _u(rng, 0.42, 0.52)
    seat_h = _u(rng, 0.36, 0.5)
    seat_t = _u(rng, 0.04, 0.1)
    back_h = _u(rng, 0.3, 0.6)
    back_t = _u(rng, 0.04, 0.09)
    leg = _u(rng, 0.03, 0.07)
    lx, ly = (d - leg) / 2.0, (w - leg) / 2.0
    parts = [box((0, 0, seat_h - seat_t / 2.0), (d, w, seat_t))]
    if rng.random() < 0.35:  # rail back: two horizontal bars instead of a slab
        for frac in (0.45, 0.9):
            parts.append(
                box((-(d - back_t) / 2.0, 0, seat_h + frac * back_h), (back_t, w, 0.22 * back_h))
            )
        for sy in (-(w - back_t) / 2.0, (w - back_t) / 2.0):
            parts.append(box((-(d - back_t) / 2.0, sy, seat_h + back_h / 2.0), (back_t, back_t, back_h)))
    else:
        parts.append(box((-(d - back_t) / 2.0, 0, seat_h + back_h / 2.0), (back_t, w, back_h)))
    if rng.random() < 0.3:  # solid side panels instead of four legs
        for sy in (-ly, ly):
            parts.append(box((0, sy, (seat_h - seat_t) / 2.0), (d * 0.9, leg, seat_h - seat_t)))
    else:
        for sx in (-lx, lx):
            for sy in (-ly, ly):
                parts.append(box((sx, sy, (seat_h - seat_t) / 2.0), (leg, leg, seat_h - seat_t)))
    if rng.random() < 0.5:  # armrests
        arm_h = _u(rng, 0.12, 0.28)
        for sy in (-(w / 2 - 0.03), w / 2 - 0.03):
            parts.append(box((0, sy, seat_h + arm_h / 2.0), (d * 0.8, 0.05, arm_h)))
    return compound(*parts)


def table_mesh(rng: np.random.Generator) -> TriMesh:
    d = _u(rng, 0.9, 1.3)
    w = _u(rng, 0.6, 1.0)
    h = _u(rng, 0.66, 0.8)
    top_t = _u(rng, 0.025, 0.1)
    leg = _u(rng, 0.04, 0.14)
    inset = _u(rng, 0.02, 0.2)
    lx, ly = d / 2 - inset - leg / 2, w / 2 - inset - leg / 2
    parts = [box((0, 0, h - top_t / 2), (d, w, top_t))]
    for sx in (-lx, lx):
        for sy in (-ly, ly):
            parts.append(box((sx, sy, (h - top_t) / 2), (leg, leg, h - top_t)))
    if rng.random() < 0.5:  # lower shelf
        shelf_z = _u(rng, 0.15, 0.4) * h
        parts.append(box((0, 0, shelf_z), (2 * lx, 2 * ly, top_t)))
    return compound(*parts)


def cabinet_mesh(rng: np.random.Generator) -> TriMesh:
    d = _u(rng, 0.4, 0.55)
    w = _u(rng, 0.7, 1.0)
    h = _u(rng, 0.9, 1.4)
    t = _u(rng, 0.02, 0.04)
    parts = []
    style = rng.random()
    if style < 0.33:  # dresser with a narrower hutch on top
        split = _u(rng, 0.45, 0.6) * h
        parts.append(box((0, 0, split / 2), (d, w, split)))
        parts.append(box((-0.15 * d, 0, split + (h - split) / 2), (0.55 * d, 0.9 * w, h - split)))
    elif style < 0.66:  # plinth base
        plinth = _u(rng, 0.06, 0.14) * h
        parts.append(box((0, 0, plinth / 2), (0.8 * d, 0.8 * w, plinth)))
        parts.append(box((0, 0, plinth + (h - plinth) / 2), (d, w, h - plinth)))
    else:
        parts.append(box((0, 0, h / 2), (d, w, h)))
    if rng.random() < 0.5:  # top overhang slab
        parts.append(box((0.04 * d, 0, h + 0.015), (1.15 * d, 1.1 * w, 0.03)))
    # protruding front handles break front/back symmetry; count and shape vary
    handle_w = _u(rng, 0.06, 0.3) * w
    handle_h = _u(rng, 0.03, 0.3) * h
    handle_t = _u(rng, 1.5, 4.0) * t
    for side in ([-1, 1] if rng.random() < 0.5 else [1]):
        parts.append(
            box(
                (d / 2 + handle_t / 2, side * _u(rng, 0.08, 0.35) * w, _u(rng, 0.4, 0.8) * h),
                (handle_t, handle_w, handle_h),
            )
        )
    return compound(*parts)


def sofa_mesh(rng: np.random.Generator) -> TriMesh:
    d = _u(rng, 0.75, 1.05)
    w = _u(rng, 1.5, 2.1)
    seat_h = _u(rng, 0.3, 0.5)
    back_h = _u(rng, 0.25, 0.55)
    back_t = _u(rng, 0.12, 0.28)
    arm_h = _u(rng, 0.1, 0.35)
    arm_w = _u(rng, 0.08, 0.3)
    parts = [
        box((0, 0, seat_h / 2), (d, w, seat_h)),
        box((-(d - back_t) / 2, 0, seat_h + back_h / 2), (back_t, w, back_h)),
    ]
    for sy in (-(w - arm_w) / 2, (w - arm_w) / 2):
        parts.append(box((0, sy, seat_h + arm_h / 2), (d, arm_w, arm_h)))
    if rng.random() < 0.4:  # chaise extension on one end
        parts.append(box((d * 0.45, -w / 2 + w * 0.17, seat_h / 2), (d * 0.7, w * 0.3, seat_h)))
    return compound(*parts)


def display_mesh(rng: np.random.Generator) -> TriMesh:
    w = _u(rng, 0.5, 0.7)
    ph = _u(rng, 0.3, 0.42)
    pt = _u(rng, 0.03, 0.05)
    stand_h = _u(rng, 0.08, 0.15)
    parts = [
        box((0, 0, stand_h + ph / 2), (pt, w, ph)),
        box((0, 0, stand_h / 2), (pt * 1.5, 0.15 * w, stand_h)),
        box((0, 0, 0.01), (0.25 * w, 0.3 * w, 0.02)),
    ]
    return compound(*parts)


def bookshelf_mesh(rng: np.random.Generator) -> TriMesh:
    d = _u(rng, 0.28, 0.4)
    w = _u(rng, 0.7, 1.0)
    h = _u(rng, 1.4, 1.9)
    t = _u(rng, 0.02, 0.04)
    shelves = rng.integers(3, 6)
    parts = [
        box((-(d - t) / 2, 0, h / 2), (t, w, h)),  # back panel
        box((0, -(w - t) / 2, h / 2), (d, t, h)),
        box((0, (w - t) / 2, h / 2), (d, t, h)),
        box((0, 0, h - t / 2), (d, w, t)),
        box((0, 0, t / 2), (d, w, t)),
    ]
    for k in range(1, int(shelves)):
        parts.append(box((0, 0, h * k / shelves), (d, w - 2 * t, t)))
    return compound(*parts)


def lamp_mesh(rng: np.random.Generator) -> TriMesh:
    base_r = _u(rng, 0.12, 0.18)
    pole_r = _u(rng, 0.02, 0.035)
    h = _u(rng, 1.2, 1.6)
    shade_r = _u(rng, 0.15, 0.22)
    shade_h = _u(rng, 0.2, 0.3)
    return compound(
        cylinder((0, 0, 0.02), base_r, 0.04, 16),
        cylinder((0, 0, h / 2), pole_r, h, 12),
        cylinder((0, 0, h - shade_h / 2), shade_r, shade_h, 16),
    )


_MAKERS = {
    "chair": chair_mesh,
    "table": table_mesh,
    "cabinet": cabinet_mesh,
    "sofa": sofa_mesh,
    "display": display_mesh,
    "bookshelf": bookshelf_mesh,
    "lamp": lamp_mesh,
}

# typical metric sizes (full extents, meters) per class, used as gt pose scale
_CLASS_SIZES = {
    "chair": (0.5, 0.5, 0.9),
    "table": (1.2, 0.8, 0.75),
    "cabinet": (0.5, 0.9, 1.2),
    "sofa": (0.9, 1.8, 0.85),
    "display": (0.12, 0.6, 0.45),
    "bookshelf": (0.35, 0.9, 1.7),
    "lamp": (0.35, 0.35, 1.5),
}


def make_models(class_counts: dict[str, int], seed: int = 0, variants_per_family: int = 1) -> list[CadModel]:
    """Build a database: ``class_counts`` families per class, with optional
    near-duplicate variants (small vertex jitter) per family."""
    models = []
    for class_label in sorted(class_counts):
        maker = _MAKERS[class_label]
        for fam in range(class_counts[class_label]):
            rng = np.random.default_rng([seed, zlib_id(class_label), fam])
            base = maker(rng)
            for var in range(variants_per_family):
                mesh = base
                if var > 0:
                    jitter = 0.006 * rng.standard_normal(base.vertices.shape)
                    mesh = TriMesh(base.vertices + jitter, base.triangles)
                model_id = f"{class_label}_{fam:02d}_{var:02d}"
                models.append(CadModel.from_mesh(model_id, class_label, mesh))
    return models


def zlib_id(text: str) -> int:
    import zlib

    return zlib.crc32(text.encode())


def write_database(models: list[CadModel], outdir) -> str:
    """Write meshes as OBJ plus the JSON manifest; returns the manifest path."""
    import json
    from pathlib import Path

    outdir = Path(outdir)
    (outdir / "meshes").mkdir(parents=True, exist_ok=True)
    entries = []
    for m in models:
        rel = f"meshes/{m.id}.obj"
        save_obj(m.mesh, outdir / rel)
        entries.append({"id": m.id, "class": m.class_label, "mesh_path": rel})
    manifest = outdir / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=1, sort_keys=True) + "\n")
    return str(manifest)


@dataclass
class SynthScene:
    scene_id: str
    objects: list[SceneObject]
    gt: list[Annotation]


def object_cameras(
    target: np.ndarray,
    extent: float,
    n_views: int,
    width: int,
    height: int,
    phase: float = 0.35,
) -> list[CameraView]:
    """Cameras on a circle around one object, framed so it fills the view.

    Mirrors how per-instance crops behave on real scans: every object gets
    observations at a comparable on-screen size regardless of scene layout.
    """
    target = np.asarray(target, dtype=np.float64)
    radius = max(1.4, 2.0 * extent)
    views = []
    f = 0.62 * width / math.tan(math.radians(30.0))
    for k in range(n_views):
        ang = 2.0 * math.pi * k / max(n_views, 1) + phase
        eye = target + np.array([radius * math.cos(ang), radius * math.sin(ang), 0.9])
        ext = look_at(eye, target)
        views.append(
            CameraView(
                fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                width=width, height=height, extrinsics=ext,
            )
        )
    return views


def make_scene(
    database: CadDatabase,
    seed: int,
    n_objects: int = 6,
    n_views: int = 3,
    width: int = 192,
    height: int = 144,
    classes: list[str] | None = None,
    max_points: int = 1024,
    scene_id: str | None = None,
    unobservable_instances: int = 0,
    model_ids: list[str] | None = None,
) -> SynthScene:
    """Random posed instances of database models with synthetic partial scans.

    Each object's views carry the depth of that object alone (perfect
    instance masks); its point cloud is the merged back-projection. Ground
    truth annotations carry the exact pose and symmetry of the placed model.
    ``model_ids`` pins the exact model per object instead of random draws.
    """
    rng = np.random.default_rng(seed)
    if model_ids is not None:
        n_objects = len(model_ids)
        chosen = [database.get(mid) for mid in model_ids]
    else:
        class_pool = classes or database.classes
        chosen = []
        for i in range(n_objects):
            cls = class_pool[int(rng.integers(len(class_pool)))]
            pool = database.by_class(cls)
            chosen.append(pool[int(rng.integers(len(pool)))])

    # ring placement keeps instances apart without a collision solver
    positions = []
    ring_r = max(0.9, 0.38 * n_objects)
    for i in range(n_objects):
        ang = 2.0 * math.pi * i / max(n_objects, 1)
        jit = rng.uniform(-0.15, 0.15, size=2)
        positions.append([ring_r * math.cos(ang) + jit[0], ring_r * math.sin(ang) + jit[1], 0.0])
    positions = np.asarray(positions)

    objects: list[SceneObject] = []
    gts: list[Annotation] = []
    for i, model in enumerate(chosen):
        base = np.array(_CLASS_SIZES[model.class_label])
        scale = base * rng.uniform(0.9, 1.1, size=3)
        azimuth = rng.uniform(0.0, 2.0 * math.pi)
        pos = positions[i].copy()
        z_center = scale[2] / 2.0
        nominal_center = np.array([pos[0], pos[1], z_center])
        if i < unobservable_instances:
            z_center -= 100.0  # far below the cameras, which keep their nominal aim
        pose = Pose9D([pos[0], pos[1], z_center], [0.0, 0.0, azimuth], scale)
        posed = apply_pose(model.mesh, pose)
        views = object_cameras(
            nominal_center, float(scale.max()), n_views, width, height,
            phase=0.35 + rng.uniform(0.0, 2.0 * math.pi),
        )
        obj_views = []
        clouds = []
        for view in views:
            depth = rasterize(posed, view).depth
            dview = CameraView(
                fx=view.fx, fy=view.fy, cx=view.cx, cy=view.cy,
                width=view.width, height=view.height,
                extrinsics=view.extrinsics, depth=depth,
            )
            obj_views.append(dview)
            if (depth > 0).any():
                clouds.append(backproject(dview).points)
        if clouds:
            pts = np.vstack(clouds)
            if len(pts) > max_points:
                pts = pts[rng.permutation(len(pts))[:max_points]]
        else:
            # invisible object: fall back to surface samples so the cloud is non-empty
            pts = apply_pose(model.mesh, pose).vertices
        instance_id = f"obj{i:02d}"
        objects.append(
            SceneObject(
                instance_id=instance_id,
                class_label=model.class_label,
                points=PointCloud(pts),
                views=obj_views,
            )
        )
        scaled = TriMesh(model.mesh.vertices * scale[None, :], model.mesh.triangles)
        gts.append(
            Annotation(
                instance_id=instance_id,
                class_label=model.class_label,
                cad_id=model.id,
                cad_class=model.class_label,
                pose=pose,
                score=None,
                symmetry=classify_symmetry(scaled),
                status=Status.AUTO,
                provenance=[{"event": "search", "detail": "synthetic ground truth"}],
            )
        )
    return SynthScene(scene_id=scene_id or f"synth_{seed}", objects=objects, gt=gts)
