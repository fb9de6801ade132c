"""HTTP/JSON review service: inspect fits, rotate, swap, re-refine, verify.

One session per scene holds a journaled annotation store. Every mutation
validates an expected revision (optimistic concurrency), appends a journal
event carrying the resulting annotation state, and returns the recomputed
score so the reviewer's next decision sees fresh evidence. Replaying the
journal over the initial annotations reconstructs the store byte-identically.
"""

from __future__ import annotations

import base64
import io
import json
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .geometry import GeometryError, apply_pose, compose_up_rotation
from .objective import RcWeights, rc_score, silhouette_term
from .pipeline import Annotation, SceneAnnotations, SceneObject, Status, annotations_to_bytes
from .refine import RefineConfig, refine
from .render import rasterize
from .shape_tree import CadDatabase

LEGAL_ROTATIONS = (90, 180, 270)
RENDER_CACHE_SIZE = 256


class ReviewError(Exception):
    def __init__(self, status_code: int, code: str, message: str, detail: dict | None = None):
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.message = message
        self.detail = detail or {}


def _not_found(what: str, key: str) -> ReviewError:
    return ReviewError(404, "not_found", f"unknown {what} {key!r}")


def _conflict(expected: int, actual: int) -> ReviewError:
    return ReviewError(
        409,
        "revision_conflict",
        f"expected revision {expected}, store has {actual}",
        {"expected_revision": expected, "actual_revision": actual},
    )


@dataclass
class ReviewSession:
    """Mutable annotation store for one scene, with an event journal."""

    scene_id: str
    objects: dict[str, SceneObject]
    database: CadDatabase
    annotations: "OrderedDict[str, Annotation]"
    config: dict
    weights: RcWeights = field(default_factory=RcWeights)
    refine_cfg: RefineConfig = field(
        default_factory=lambda: RefineConfig(steps=300, keep_history=False, time_budget=60.0)
    )
    cd_samples: int | None = None
    journal: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @staticmethod
    def from_annotations(
        result: SceneAnnotations,
        objects: list[SceneObject],
        database: CadDatabase,
        weights: RcWeights | None = None,
        refine_cfg: RefineConfig | None = None,
        cd_samples: int | None = None,
        score_missing: bool = True,
    ) -> "ReviewSession":
        store = OrderedDict((a.instance_id, _copy_annotation(a)) for a in result.annotations)
        session = ReviewSession(
            scene_id=result.scene_id,
            objects={o.instance_id: o for o in objects},
            database=database,
            annotations=store,
            config=dict(result.config),
            cd_samples=cd_samples,
        )
        if weights is not None:
            session.weights = weights
        if refine_cfg is not None:
            session.refine_cfg = refine_cfg
        if score_missing:
            # score-sorted triage needs every row scored up front
            for ann in store.values():
                if ann.score is None and ann.instance_id in session.objects:
                    _, _, _, ann.score = session._rescore(ann)
        return session

    # -- reads ------------------------------------------------------------

    def get(self, annotation_id: str) -> Annotation:
        ann = self.annotations.get(annotation_id)
        if ann is None:
            raise _not_found("annotation", annotation_id)
        return ann

    def summaries(self) -> list[dict]:
        with self.lock:
            return [
                {
                    "annotation_id": a.instance_id,
                    "class_label": a.class_label,
                    "cad_id": a.cad_id,
                    "status": a.status.value,
                    "symmetry": a.symmetry.value,
                    "score": a.score.total if a.score else None,
                    "revision": a.revision,
                    "n_views": len(self.objects[a.instance_id].views)
                    if a.instance_id in self.objects
                    else 0,
                    "overlay_ref": f"/annotations/{a.instance_id}/overlay/0",
                }
                for a in self.annotations.values()
            ]

    def store_bytes(self) -> bytes:
        doc = {
            "scene_id": self.scene_id,
            "annotations": [a.to_json() for a in self.annotations.values()],
        }
        return (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode()

    def export(self) -> bytes:
        result = SceneAnnotations(
            scene_id=self.scene_id,
            annotations=list(self.annotations.values()),
            failures=[],
            config=self.config,
        )
        return annotations_to_bytes(result)

    # -- mutations ---------------------------------------------------------

    def _check_revision(self, ann: Annotation, expected: int | None) -> None:
        if expected is not None and expected != ann.revision:
            raise _conflict(expected, ann.revision)

    def _require_live(self, ann: Annotation) -> None:
        if ann.status == Status.REMOVED:
            raise ReviewError(409, "illegal_status", f"{ann.instance_id} is removed")

    def _rescore(self, ann: Annotation):
        obj = self.objects.get(ann.instance_id)
        if obj is None:
            raise _not_found("scene object", ann.instance_id)
        model = self.database.get(ann.cad_id)
        samples = model.samples
        if self.cd_samples is not None and self.cd_samples < len(samples):
            samples = samples[: self.cd_samples]
        return model, samples, obj, rc_score(
            obj.observations(), model.mesh, samples, ann.pose, obj.points, self.weights
        )

    def _commit(self, op: str, ann: Annotation, params: dict) -> dict:
        ann.revision += 1
        event = {
            "seq": len(self.journal),
            "op": op,
            "annotation_id": ann.instance_id,
            "params": params,
            "result": ann.to_json(),
        }
        self.journal.append(event)
        return ann.to_json()

    def rotate(self, annotation_id: str, degrees: int, expected_revision: int | None) -> dict:
        if degrees not in LEGAL_ROTATIONS:
            raise ReviewError(400, "invalid_degrees", f"degrees must be one of {LEGAL_ROTATIONS}")
        with self.lock:
            ann = self.get(annotation_id)
            self._check_revision(ann, expected_revision)
            self._require_live(ann)
            ann.pose = compose_up_rotation(ann.pose, math.radians(degrees))
            _, _, _, score = self._rescore(ann)
            ann.score = score
            ann.status = Status.EDITED
            ann.add_event("manual_rotate", degrees=degrees, score=score.total)
            return self._commit("rotate", ann, {"degrees": degrees})

    def swap(
        self,
        annotation_id: str,
        cad_id: str,
        override_class: bool,
        expected_revision: int | None,
    ) -> dict:
        with self.lock:
            ann = self.get(annotation_id)
            self._check_revision(ann, expected_revision)
            self._require_live(ann)
            if cad_id not in self.database:
                raise _not_found("model", cad_id)
            model = self.database.get(cad_id)
            if model.class_label != ann.class_label and not override_class:
                raise ReviewError(
                    400,
                    "class_mismatch",
                    f"model {cad_id!r} is {model.class_label!r}, object is {ann.class_label!r};"
                    " pass override_class to force",
                )
            ann.cad_id = cad_id
            ann.cad_class = model.class_label
            _, _, _, score = self._rescore(ann)
            ann.score = score
            ann.status = Status.EDITED
            ann.add_event("manual_swap", cad_id=cad_id, score=score.total)
            return self._commit("swap", ann, {"cad_id": cad_id, "override_class": override_class})

    def refine_annotation(self, annotation_id: str, expected_revision: int | None) -> dict:
        with self.lock:
            ann = self.get(annotation_id)
            self._check_revision(ann, expected_revision)
            self._require_live(ann)
            try:
                model, samples, obj, _ = self._rescore(ann)
                result = refine(
                    model.mesh,
                    samples,
                    obj.observations(),
                    obj.points,
                    ann.pose,
                    self.weights,
                    self.refine_cfg,
                )
            except GeometryError as exc:
                raise ReviewError(409, "unobservable", str(exc)) from exc
            ann.pose = result.pose
            ann.score = result.score
            ann.add_event("refine", steps=result.steps_run, score=result.score.total)
            return self._commit("refine", ann, {})

    def set_status(self, annotation_id: str, status: str, expected_revision: int | None) -> dict:
        if status not in (Status.VERIFIED.value, Status.REMOVED.value):
            raise ReviewError(400, "invalid_status", "status must be 'verified' or 'removed'")
        with self.lock:
            ann = self.get(annotation_id)
            self._check_revision(ann, expected_revision)
            self._require_live(ann)
            ann.status = Status(status)
            ann.add_event("status", status=status)
            return self._commit("status", ann, {"status": status})

    # -- journal replay ----------------------------------------------------

    @staticmethod
    def replay(initial: list[Annotation], journal: list[dict]) -> "OrderedDict[str, Annotation]":
        """Fold the journal over the initial annotations; pure and deterministic."""
        store = OrderedDict((a.instance_id, _copy_annotation(a)) for a in initial)
        for event in journal:
            ann_id = event["annotation_id"]
            if ann_id not in store:
                raise GeometryError(f"journal names unknown annotation {ann_id!r}")
            store[ann_id] = Annotation.from_json(event["result"])
        return store


def _copy_annotation(a: Annotation) -> Annotation:
    return Annotation.from_json(a.to_json())


# ---------------------------------------------------------------------------
# overlay rendering


def _png_bytes(gray: np.ndarray) -> bytes:
    from PIL import Image

    img = Image.fromarray(gray.astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _depth_to_gray(depth: np.ndarray, max_depth: float) -> np.ndarray:
    if max_depth <= 0:
        return np.zeros_like(depth, dtype=np.uint8)
    gray = np.zeros_like(depth)
    valid = depth > 0
    # near = bright, background = black
    gray[valid] = 255.0 - 205.0 * (depth[valid] / max_depth)
    return np.clip(gray, 0, 255)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


class OverlayRenderer:
    """Renders annotation overlays with an LRU cache keyed by revision."""

    def __init__(self, cache_size: int = RENDER_CACHE_SIZE):
        self._cache: OrderedDict[tuple, dict] = OrderedDict()
        self._lock = threading.Lock()
        self._size = cache_size
        self.hits = 0
        self.misses = 0

    def overlay(self, session: ReviewSession, annotation_id: str, view_index: int, raw: bool) -> dict:
        ann = session.get(annotation_id)
        obj = session.objects.get(annotation_id)
        if obj is None:
            raise _not_found("scene object", annotation_id)
        if not (0 <= view_index < len(obj.views)):
            raise ReviewError(404, "view_out_of_range", f"view {view_index} not in scene")
        key = (session.scene_id, annotation_id, view_index, ann.revision, raw)
        with self._lock:
            if key in self._cache:
                self.hits += 1
                self._cache.move_to_end(key)
                return self._cache[key]
        self.misses += 1
        payload = self._render(session, ann, obj, view_index, raw)
        with self._lock:
            self._cache[key] = payload
            while len(self._cache) > self._size:
                self._cache.popitem(last=False)
        return payload

    def _render(self, session, ann: Annotation, obj: SceneObject, view_index: int, raw: bool) -> dict:
        from .render import save_depth_pgm  # local import keeps Pillow optional at import time

        target = obj.observations()[view_index].target
        view = obj.views[view_index]
        model = session.database.get(ann.cad_id)
        candidate = rasterize(apply_pose(model.mesh, ann.pose), view)
        t_sil, c_sil = target.silhouette, candidate.silhouette
        union = int((t_sil | c_sil).sum())
        inter = int((t_sil & c_sil).sum())
        xor = (t_sil ^ c_sil).astype(np.uint8) * 255
        max_depth = float(max(target.depth.max(), candidate.depth.max(), 1e-9))
        payload = {
            "annotation_id": ann.instance_id,
            "view_index": view_index,
            "revision": ann.revision,
            "target_depth_png": _b64(_png_bytes(_depth_to_gray(target.depth, max_depth))),
            "candidate_depth_png": _b64(_png_bytes(_depth_to_gray(candidate.depth, max_depth))),
            "target_sil_png": _b64(_png_bytes(t_sil.astype(np.uint8) * 255)),
            "candidate_sil_png": _b64(_png_bytes(c_sil.astype(np.uint8) * 255)),
            "diff_png": _b64(_png_bytes(xor)),
            "stats": {
                "iou": (inter / union) if union else 1.0,
                "diff_density": (int((t_sil ^ c_sil).sum()) / union) if union else 0.0,
                "sil_term": silhouette_term(target, candidate),
            },
        }
        if raw:
            import tempfile
            from pathlib import Path

            with tempfile.TemporaryDirectory() as tmp:
                tpath = Path(tmp) / "t.pgm"
                cpath = Path(tmp) / "c.pgm"
                save_depth_pgm(target.depth, tpath)
                save_depth_pgm(candidate.depth, cpath)
                payload = dict(payload)
                payload["raw_target_pgm"] = _b64(tpath.read_bytes())
                payload["raw_candidate_pgm"] = _b64(cpath.read_bytes())
        return payload


# ---------------------------------------------------------------------------
# FastAPI wiring


def create_app(sessions: list[ReviewSession], token: str | None = None, ui_dir: str | None = None):
    app = FastAPI(title="annotation review service")
    by_id = {s.scene_id: s for s in sessions}
    renderer = OverlayRenderer()

    def find_session_for_annotation(annotation_id: str) -> ReviewSession:
        for session in by_id.values():
            if annotation_id in session.annotations:
                return session
        raise _not_found("annotation", annotation_id)

    @app.exception_handler(ReviewError)
    async def handle_review_error(_req: Request, exc: ReviewError):
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.middleware("http")
    async def check_token(request: Request, call_next):
        if token and request.url.path.startswith(("/scenes", "/annotations")):
            header = request.headers.get("authorization", "")
            if header != f"Bearer {token}":
                return JSONResponse(
                    status_code=401,
                    content={"code": "unauthorized", "message": "bad or missing token", "detail": {}},
                )
        return await call_next(request)

    @app.get("/scenes")
    def list_scenes():
        return [
            {
                "scene_id": s.scene_id,
                "n_annotations": len(s.annotations),
                "n_auto": sum(1 for a in s.annotations.values() if a.status == Status.AUTO),
            }
            for s in by_id.values()
        ]

    @app.get("/scenes/{scene_id}/annotations")
    def list_annotations(scene_id: str):
        session = by_id.get(scene_id)
        if session is None:
            raise _not_found("scene", scene_id)
        return session.summaries()

    @app.get("/scenes/{scene_id}/export")
    def export_scene(scene_id: str):
        session = by_id.get(scene_id)
        if session is None:
            raise _not_found("scene", scene_id)
        return Response(content=session.export(), media_type="application/json")

    @app.get("/annotations/{annotation_id}/overlay/{view_index}")
    def overlay(annotation_id: str, view_index: int, raw: bool = False):
        session = find_session_for_annotation(annotation_id)
        return renderer.overlay(session, annotation_id, view_index, raw)

    async def _json_body(request: Request) -> dict:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise ReviewError(400, "invalid_json", "request body must be JSON")
        if not isinstance(body, dict):
            raise ReviewError(400, "invalid_json", "request body must be a JSON object")
        return body

    def _expected_revision(body: dict) -> int | None:
        rev = body.get("expected_revision")
        if rev is None:
            return None
        if not isinstance(rev, int):
            raise ReviewError(400, "invalid_revision", "expected_revision must be an integer")
        return rev

    @app.post("/annotations/{annotation_id}/rotate")
    async def rotate(annotation_id: str, request: Request):
        session = find_session_for_annotation(annotation_id)
        body = await _json_body(request)
        degrees = body.get("degrees")
        if not isinstance(degrees, int):
            raise ReviewError(400, "invalid_degrees", "degrees must be an integer")
        return session.rotate(annotation_id, degrees, _expected_revision(body))

    @app.post("/annotations/{annotation_id}/swap")
    async def swap(annotation_id: str, request: Request):
        session = find_session_for_annotation(annotation_id)
        body = await _json_body(request)
        cad_id = body.get("cad_id")
        if not isinstance(cad_id, str):
            raise ReviewError(400, "invalid_model", "cad_id must be a string")
        return session.swap(
            annotation_id, cad_id, bool(body.get("override_class", False)), _expected_revision(body)
        )

    @app.post("/annotations/{annotation_id}/refine")
    async def refine_endpoint(annotation_id: str, request: Request):
        session = find_session_for_annotation(annotation_id)
        body = await _json_body(request)
        return session.refine_annotation(annotation_id, _expected_revision(body))

    @app.post("/annotations/{annotation_id}/status")
    async def set_status(annotation_id: str, request: Request):
        session = find_session_for_annotation(annotation_id)
        body = await _json_body(request)
        status = body.get("status")
        if not isinstance(status, str):
            raise ReviewError(400, "invalid_status", "status must be a string")
        return session.set_status(annotation_id, status, _expected_revision(body))

    @app.get("/models")
    def list_models(class_label: str | None = None):
        models = []
        for session in by_id.values():
            for m in session.database.models.values():
                if class_label is None or m.class_label == class_label:
                    models.append({"id": m.id, "class": m.class_label})
            break  # all sessions share one database in this service
        return models

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def build_session_from_files(
    scene_path: str,
    db_manifest: str,
    annotations_path: str,
    cd_samples: int | None = None,
    refine_steps: int = 300,
    refine_timeout: float = 60.0,
) -> ReviewSession:
    from .pipeline import load_annotations, load_scene

    scene_id, objects = load_scene(scene_path)
    database = CadDatabase.load_manifest(db_manifest)
    result = load_annotations(annotations_path)
    weights_doc = result.config.get("weights") or {}
    weights = RcWeights(**weights_doc) if weights_doc else RcWeights()
    cfg_samples = result.config.get("cd_samples")
    return ReviewSession.from_annotations(
        result,
        objects,
        database,
        weights=weights,
        refine_cfg=RefineConfig(steps=refine_steps, keep_history=False, time_budget=refine_timeout),
        cd_samples=cd_samples if cd_samples is not None else cfg_samples,
    )
