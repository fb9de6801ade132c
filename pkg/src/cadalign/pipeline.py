"""Scene-level orchestration: pose init, per-object search, cloning, symmetry.

An input scene is a list of segmented objects (points plus instance-masked
depth views). Each object gets an initial pose from its oriented bounding
box, a tree search for model and rotation bin, and a final long refinement.
Same-class objects with near-identical retrieved shapes are then collapsed
onto one shared model, and every annotation is tagged with the rotational
symmetry of its fitted shape.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .geometry import GeometryError, Pose9D, PointCloud, TriMesh, rotz, sample_surface
from .metrics import SpatialIndex
from .objective import Observation, RcScore, RcWeights, rc_score
from .refine import RefineConfig, refine
from .render import CameraView, build_observations, load_depth_pgm, save_depth_pgm
from .search import SearchConfig, search
from .shape_tree import CadDatabase, ShapeTree, pairwise_chamfer_matrix

log = logging.getLogger(__name__)

ANNOTATION_SCHEMA_VERSION = 1
SCENE_SCHEMA_VERSION = 1

SYMMETRY_SAMPLES = 5000
SYMMETRY_THRESHOLD = 0.05
SYMMETRY_INCREMENT_DEG = 45

DEFAULT_CLONE_CLASSES = ("chair", "cabinet", "sofa", "bookshelf", "display", "table")


class Symmetry(str, enum.Enum):
    NONE = "none"
    TWO_FOLD = "two_fold"
    FOUR_FOLD = "four_fold"
    INFINITE = "infinite"


class Status(str, enum.Enum):
    AUTO = "auto"
    VERIFIED = "verified"
    EDITED = "edited"
    REMOVED = "removed"


@dataclass
class SceneObject:
    """One segmented instance: scan points plus the views that observed it."""

    instance_id: str
    class_label: str
    points: PointCloud
    views: list[CameraView] = field(default_factory=list)
    partial_mesh: TriMesh | None = None
    _observations: list[Observation] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points.require_nonempty(f"points of {self.instance_id}")

    def observations(self) -> list[Observation]:
        if self._observations is None:
            self._observations = build_observations(self.views, self.partial_mesh)
        return self._observations


@dataclass
class Annotation:
    """Pipeline output record for one object: model, pose, score, review state."""

    instance_id: str
    class_label: str
    cad_id: str
    cad_class: str
    pose: Pose9D
    score: RcScore | None
    symmetry: Symmetry = Symmetry.NONE
    status: Status = Status.AUTO
    provenance: list[dict] = field(default_factory=list)
    revision: int = 0

    def add_event(self, event: str, **detail) -> None:
        self.provenance.append({"event": event, **detail})

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "class_label": self.class_label,
            "cad_id": self.cad_id,
            "cad_class": self.cad_class,
            "pose": {
                "t": list(self.pose.translation),
                "r_axis_angle": list(self.pose.rotation),
                "s": list(self.pose.scale),
            },
            "symmetry": self.symmetry.value,
            "status": self.status.value,
            "score_breakdown": self.score.as_dict() if self.score else None,
            "provenance": self.provenance,
            "revision": self.revision,
        }

    @staticmethod
    def from_json(doc: dict) -> "Annotation":
        score = doc.get("score_breakdown")
        return Annotation(
            instance_id=doc["instance_id"],
            class_label=doc["class_label"],
            cad_id=doc["cad_id"],
            cad_class=doc.get("cad_class", doc["class_label"]),
            pose=Pose9D(doc["pose"]["t"], doc["pose"]["r_axis_angle"], doc["pose"]["s"]),
            score=RcScore(**score) if score else None,
            symmetry=Symmetry(doc.get("symmetry", "none")),
            status=Status(doc.get("status", "auto")),
            provenance=list(doc.get("provenance", [])),
            revision=int(doc.get("revision", 0)),
        )


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    weights: RcWeights = field(default_factory=RcWeights)
    search: SearchConfig = field(default_factory=SearchConfig)
    final_refine: RefineConfig = field(default_factory=lambda: RefineConfig(steps=300, keep_history=False))
    clone_enabled: bool = True
    clone_threshold: float = 0.02
    clone_classes: tuple[str, ...] = DEFAULT_CLONE_CLASSES
    classify_symmetry: bool = True
    cd_samples: int | None = None  # cap model samples in the chamfer term
    trace_dir: str | None = None  # write per-object search traces (JSONL)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "weights": dataclasses.asdict(self.weights),
            "search": {
                "max_iterations": self.search.max_iterations,
                "exploration_c": self.search.exploration_c,
                "refine_trigger_ratio": self.search.refine_trigger_ratio,
                "refine_steps": self.search.refine_steps,
            },
            "final_refine_steps": self.final_refine.steps,
            "clone_enabled": self.clone_enabled,
            "clone_threshold": self.clone_threshold,
            "clone_classes": list(self.clone_classes),
            "cd_samples": self.cd_samples,
        }

    def samples_of(self, model) -> np.ndarray:
        if self.cd_samples is not None and self.cd_samples < len(model.samples):
            return model.samples[: self.cd_samples]
        return model.samples


def init_pose(obj: SceneObject) -> Pose9D:
    """Initial pose from the gravity-aligned oriented bounding box.

    The azimuth comes from the principal axis of the horizontal point spread
    (defined modulo 180 degrees; rotation bins cover the rest), the box
    center gives translation and per-axis ranges give scale relative to the
    canonical unit-box model frame.
    """
    pts = obj.points.require_nonempty(f"points of {obj.instance_id}").points
    span = pts.max(axis=0) - pts.min(axis=0)
    if float(span.max()) < 1e-9:
        raise GeometryError(f"degenerate point set for {obj.instance_id}")
    xy = pts[:, :2] - pts[:, :2].mean(axis=0)
    cov = xy.T @ xy / len(xy)
    w, v = np.linalg.eigh(cov)
    principal = v[:, int(np.argmax(w))]
    theta = math.atan2(principal[1], principal[0]) % math.pi
    axes = rotz(theta)
    proj = pts @ axes
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    center = axes @ ((lo + hi) / 2.0)
    scale = np.maximum(hi - lo, 1e-3)
    return Pose9D(center, [0.0, 0.0, theta], scale)


def _mesh_seed(mesh: TriMesh) -> int:
    return zlib.crc32(mesh.vertices.tobytes() + mesh.triangles.tobytes()) & 0x7FFFFFFF


def _normalized_for_symmetry(mesh: TriMesh) -> TriMesh:
    lo, hi = mesh.bounds()
    diag = float(np.linalg.norm(hi - lo))
    if diag < 1e-12:
        raise GeometryError("degenerate mesh for symmetry classification")
    verts = (mesh.vertices - (lo + hi) / 2.0) / diag
    return TriMesh(verts, mesh.triangles)


def classify_symmetry(mesh: TriMesh) -> Symmetry:
    """Rotation group of a shape about the up-axis.

    The shape is centered and scaled to unit bounding-box diagonal, then
    compared (symmetric chamfer over fresh surface samples) against copies
    rotated in 45-degree increments. Increments whose chamfer stays below
    the fixed threshold count as matches; the match set picks the group.
    """
    base = _normalized_for_symmetry(mesh)
    seed = _mesh_seed(mesh)
    base_pts = sample_surface(base, SYMMETRY_SAMPLES, seed).points
    base_index = SpatialIndex(base_pts)
    matches: set[int] = set()
    for k in range(1, 8):
        angle = math.radians(SYMMETRY_INCREMENT_DEG * k)
        rot = TriMesh(base.vertices @ rotz(angle).T, base.triangles)
        rot_pts = sample_surface(rot, SYMMETRY_SAMPLES, seed + k).points
        d = base_index.nearest_sq_dist(rot_pts).mean()
        d += SpatialIndex(rot_pts).nearest_sq_dist(base_pts).mean()
        if math.sqrt(d) < SYMMETRY_THRESHOLD:
            matches.add(SYMMETRY_INCREMENT_DEG * k)
    if matches >= {45, 90, 135, 180, 225, 270, 315}:
        return Symmetry.INFINITE
    if matches >= {90, 180, 270}:
        return Symmetry.FOUR_FOLD
    if 180 in matches:
        return Symmetry.TWO_FOLD
    return Symmetry.NONE


def _scaled_mesh(mesh: TriMesh, scale: np.ndarray) -> TriMesh:
    return TriMesh(mesh.vertices * np.asarray(scale)[None, :], mesh.triangles)


@dataclass
class SceneAnnotations:
    scene_id: str
    annotations: list[Annotation]
    failures: list[dict]
    config: dict


def _derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=[seed, index]).generate_state(1)[0])


def annotate_scene(
    scene_id: str,
    objects: list[SceneObject],
    database: CadDatabase,
    trees: dict[str, ShapeTree],
    config: PipelineConfig,
) -> SceneAnnotations:
    """Run the full pipeline over a scene.

    Per-object failures are logged, never fatal; output order follows input
    order. Deterministic for a fixed seed and config.
    """
    annotations: list[Annotation] = []
    failures: list[dict] = []
    objects_by_id: dict[str, SceneObject] = {}
    for index, obj in enumerate(objects):
        tree = trees.get(obj.class_label)
        if tree is None:
            log.warning("no tree for class %r; skipping %s", obj.class_label, obj.instance_id)
            failures.append(
                {"instance_id": obj.instance_id, "error": f"no tree for class {obj.class_label!r}"}
            )
            continue
        try:
            init = init_pose(obj)
            cfg = dataclasses.replace(config.search, seed=_derived_seed(config.seed, index))
            result = search(
                tree, database, obj.observations(), obj.points, init, config.weights, cfg,
                cd_samples=config.cd_samples,
            )
            if config.trace_dir:
                trace_dir = Path(config.trace_dir)
                trace_dir.mkdir(parents=True, exist_ok=True)
                result.write_trace_jsonl(trace_dir / f"{obj.instance_id}.jsonl")
            model = database.get(result.cad_id)
            final = refine(
                model.mesh,
                config.samples_of(model),
                obj.observations(),
                obj.points,
                result.pose,
                config.weights,
                config.final_refine,
            )
            ann = Annotation(
                instance_id=obj.instance_id,
                class_label=obj.class_label,
                cad_id=result.cad_id,
                cad_class=model.class_label,
                pose=final.pose,
                score=final.score,
            )
            ann.add_event(
                "search",
                cad_id=result.cad_id,
                iterations=result.iterations_run,
                refinements=result.refinements_run,
                score=result.score.total,
            )
            ann.add_event("refine", steps=config.final_refine.steps, score=final.score.total)
            annotations.append(ann)
            objects_by_id[obj.instance_id] = obj
        except GeometryError as exc:
            log.warning("annotation failed for %s: %s", obj.instance_id, exc)
            failures.append({"instance_id": obj.instance_id, "error": str(exc)})
    if config.clone_enabled:
        cluster_and_clone(
            annotations,
            objects_by_id,
            database,
            config.weights,
            threshold=config.clone_threshold,
            classes=config.clone_classes,
            refine_cfg=config.final_refine,
            cd_samples=config.cd_samples,
        )
    if config.classify_symmetry:
        cache: dict[tuple[str, tuple], Symmetry] = {}
        for ann in annotations:
            key = (ann.cad_id, tuple(np.round(ann.pose.scale, 6)))
            if key not in cache:
                mesh = _scaled_mesh(database.get(ann.cad_id).mesh, ann.pose.scale)
                cache[key] = classify_symmetry(mesh)
            ann.symmetry = cache[key]
    return SceneAnnotations(
        scene_id=scene_id, annotations=annotations, failures=failures, config=config.summary()
    )


def cluster_and_clone(
    annotations: list[Annotation],
    objects_by_id: dict[str, SceneObject],
    database: CadDatabase,
    weights: RcWeights,
    threshold: float = 0.02,
    classes: Iterable[str] = DEFAULT_CLONE_CLASSES,
    refine_cfg: RefineConfig | None = None,
    cd_samples: int | None = None,
) -> list[Annotation]:
    """Collapse same-class, similar-shape annotations onto one shared model.

    Same-class annotations are clustered by complete linkage on the symmetric
    chamfer between their retrieved models; each cluster adopts the single
    model minimizing the summed objective over its members, and every changed
    member gets its pose re-refined. Idempotent: a second run finds clusters
    of identical models and changes nothing.
    """
    clone_set = set(classes)
    refine_cfg = refine_cfg or RefineConfig(steps=300, keep_history=False)

    def samples_of(model):
        if cd_samples is not None and cd_samples < len(model.samples):
            return model.samples[:cd_samples]
        return model.samples

    by_class: dict[str, list[Annotation]] = {}
    for ann in annotations:
        if ann.class_label in clone_set and ann.status != Status.REMOVED:
            by_class.setdefault(ann.class_label, []).append(ann)
    for class_label in sorted(by_class):
        group = by_class[class_label]
        if len(group) < 2:
            continue
        cad_ids = sorted({a.cad_id for a in group})
        if len(cad_ids) == 1:
            clusters = np.ones(len(group), dtype=int)
        else:
            samples = [database.get(cid).samples for cid in cad_ids]
            dmat = pairwise_chamfer_matrix(samples)
            id_pos = {cid: i for i, cid in enumerate(cad_ids)}
            n = len(group)
            full = np.zeros((n, n))
            for i in range(n):
                for j in range(i + 1, n):
                    full[i, j] = full[j, i] = dmat[id_pos[group[i].cad_id], id_pos[group[j].cad_id]]
            condensed = full[np.triu_indices(n, k=1)]
            clusters = fcluster(linkage(condensed, method="complete"), t=threshold, criterion="distance")
        for cluster_id in sorted(set(clusters)):
            members = [group[i] for i in range(len(group)) if clusters[i] == cluster_id]
            if len(members) < 2:
                continue
            candidates = sorted({m.cad_id for m in members})
            if len(candidates) == 1:
                continue
            best_cad, best_sum = None, math.inf
            for cad_id in candidates:
                model = database.get(cad_id)
                total = 0.0
                for ann in members:
                    obj = objects_by_id[ann.instance_id]
                    total += rc_score(
                        obj.observations(), model.mesh, samples_of(model), ann.pose,
                        obj.points, weights,
                    ).total
                if total < best_sum:
                    best_cad, best_sum = cad_id, total
            model = database.get(best_cad)
            for ann in members:
                if ann.cad_id == best_cad:
                    continue
                ann.cad_id = best_cad
                ann.cad_class = model.class_label
                ann.add_event("clone", cad_id=best_cad, cluster_size=len(members))
                obj = objects_by_id[ann.instance_id]
                result = refine(
                    model.mesh, samples_of(model), obj.observations(), obj.points,
                    ann.pose, weights, refine_cfg,
                )
                ann.pose = result.pose
                ann.score = result.score
                ann.add_event("refine", steps=refine_cfg.steps, score=result.score.total)
    return annotations


# ---------------------------------------------------------------------------
# scene and annotation files


def save_scene(scene_id: str, objects: list[SceneObject], outdir: str | Path) -> Path:
    """Write the scene manifest plus per-object XYZ points and PGM depths."""
    from .meshio import save_xyz

    outdir = Path(outdir)
    (outdir / "points").mkdir(parents=True, exist_ok=True)
    (outdir / "depth").mkdir(parents=True, exist_ok=True)
    entries = []
    for obj in objects:
        points_rel = f"points/{obj.instance_id}.xyz"
        save_xyz(obj.points, outdir / points_rel)
        views = []
        for k, view in enumerate(obj.views):
            depth_rel = f"depth/{obj.instance_id}_{k}.pgm"
            if view.depth is None:
                raise GeometryError("scene views must carry depth for serialization")
            save_depth_pgm(view.depth, outdir / depth_rel)
            views.append(
                {
                    "intrinsics": {
                        "fx": view.fx, "fy": view.fy, "cx": view.cx, "cy": view.cy,
                        "width": view.width, "height": view.height,
                    },
                    "extrinsics": [list(row) for row in view.extrinsics],
                    "depth_path": depth_rel,
                }
            )
        entries.append(
            {
                "instance_id": obj.instance_id,
                "class": obj.class_label,
                "points_path": points_rel,
                "views": views,
            }
        )
    doc = {"schema_version": SCENE_SCHEMA_VERSION, "scene_id": scene_id, "objects": entries}
    path = outdir / "scene.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def load_scene(path: str | Path) -> tuple[str, list[SceneObject]]:
    from .meshio import load_xyz

    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema_version") != SCENE_SCHEMA_VERSION:
        raise GeometryError(f"{path}: unsupported scene schema_version")
    objects = []
    resolutions = set()
    for entry in doc["objects"]:
        views = []
        for v in entry["views"]:
            intr = v["intrinsics"]
            depth = load_depth_pgm(path.parent / v["depth_path"])
            views.append(
                CameraView(
                    fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"],
                    width=int(intr["width"]), height=int(intr["height"]),
                    extrinsics=np.array(v["extrinsics"]), depth=depth,
                )
            )
            resolutions.add((int(intr["width"]), int(intr["height"])))
        objects.append(
            SceneObject(
                instance_id=entry["instance_id"],
                class_label=entry["class"],
                points=load_xyz(path.parent / entry["points_path"]),
                views=views,
            )
        )
    if len(resolutions) > 1:
        raise GeometryError(f"{path}: inconsistent view resolutions {sorted(resolutions)}")
    return doc["scene_id"], objects


def annotations_to_bytes(result: SceneAnnotations) -> bytes:
    doc = {
        "schema_version": ANNOTATION_SCHEMA_VERSION,
        "scene_id": result.scene_id,
        "config": result.config,
        "annotations": [a.to_json() for a in result.annotations],
        "failures": result.failures,
    }
    return (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode()


def save_annotations(result: SceneAnnotations, path: str | Path) -> None:
    Path(path).write_bytes(annotations_to_bytes(result))


def load_annotations(path: str | Path) -> SceneAnnotations:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != ANNOTATION_SCHEMA_VERSION:
        raise GeometryError(f"{path}: unsupported annotation schema_version")
    return SceneAnnotations(
        scene_id=doc["scene_id"],
        annotations=[Annotation.from_json(a) for a in doc["annotations"]],
        failures=list(doc.get("failures", [])),
        config=dict(doc.get("config", {})),
    )
