"""Monte Carlo Tree Search over the shape tree, with refinement triggers.

Each iteration walks root-to-leaf (unvisited children first, then UCB1 on
min-max-normalized scores), evaluates the leaf's (model, rotation-bin)
candidate, and backpropagates. Candidates whose raw score lands below
``trigger_ratio`` times the best raw score seen so far also get a short
continuous pose refinement; the refined score backpropagates and may replace
the incumbent. Comparing against the raw best (not the refined incumbent)
keeps the trigger firing for every promising shape; a refined incumbent is
quickly so good that nothing else would ever qualify. Fully evaluated
subtrees are marked exhausted and skipped, so small databases terminate
early with every leaf visited exactly once.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GeometryError, Pose9D, PointCloud, compose_up_rotation
from .objective import Observation, RcScore, RcWeights, rc_score
from .refine import RefineConfig, refine
from .shape_tree import CadDatabase, ShapeTree, TreeNode

EXHAUSTIVE_MAX_LEAVES = 4096


@dataclass(frozen=True)
class SearchConfig:
    max_iterations: int = 1200
    exploration_c: float = math.sqrt(2.0)
    refine_trigger_ratio: float = 1.1
    refine_steps: int = 50  # 0 disables in-search refinement
    seed: int = 0
    refine: RefineConfig = field(default_factory=lambda: RefineConfig(steps=50, keep_history=False))

    def __post_init__(self):
        if self.max_iterations < 1:
            raise GeometryError("max_iterations must be >= 1")
        if self.refine_trigger_ratio < 1.0:
            raise GeometryError("refine_trigger_ratio must be >= 1")

    def refine_config(self) -> RefineConfig:
        return dataclasses.replace(self.refine, steps=max(self.refine_steps, 1), keep_history=False)


@dataclass
class TraceEntry:
    iteration: int
    path: list[int]  # node indices, root to leaf
    cad_id: str
    rotation_offset: float
    raw_score: float
    refined: bool
    refined_score: float | None
    raw_best_before: float  # trigger reference, replayable
    incumbent_before: float
    incumbent_after: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SearchResult:
    cad_id: str
    pose: Pose9D
    score: RcScore
    iterations_run: int
    refinements_run: int
    trace: list[TraceEntry]

    def write_trace_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w") as fh:
            for entry in self.trace:
                fh.write(json.dumps(entry.as_dict(), sort_keys=True) + "\n")


class _Evaluator:
    """Shared candidate evaluation: pose composition, scoring, memoization."""

    def __init__(self, database, observations, scan_points, init_pose, weights, cd_samples=None):
        self.database = database
        self.observations = observations
        self.scan_points = scan_points
        self.init_pose = init_pose
        self.weights = weights
        self.cd_samples = cd_samples
        self.memo: dict[tuple[str, float], tuple[RcScore, Pose9D]] = {}

    def samples_of(self, cad_id: str):
        samples = self.database.get(cad_id).samples
        if self.cd_samples is not None and self.cd_samples < len(samples):
            return samples[: self.cd_samples]
        return samples

    def candidate_pose(self, offset: float) -> Pose9D:
        return compose_up_rotation(self.init_pose, offset)

    def raw(self, cad_id: str, offset: float) -> tuple[RcScore, Pose9D]:
        key = (cad_id, round(offset, 12))
        if key not in self.memo:
            model = self.database.get(cad_id)
            pose = self.candidate_pose(offset)
            score = rc_score(
                self.observations, model.mesh, self.samples_of(cad_id), pose,
                self.scan_points, self.weights,
            )
            self.memo[key] = (score, pose)
        return self.memo[key]

    def refined(self, cad_id: str, pose: Pose9D, cfg: RefineConfig) -> tuple[RcScore, Pose9D]:
        model = self.database.get(cad_id)
        result = refine(
            model.mesh, self.samples_of(cad_id), self.observations, self.scan_points,
            pose, self.weights, cfg,
        )
        return result.score, result.pose


class _Incumbent:
    def __init__(self):
        self.score: RcScore | None = None
        self.cad_id: str | None = None
        self.pose: Pose9D | None = None

    @property
    def total(self) -> float:
        return math.inf if self.score is None else self.score.total

    def offer(self, cad_id: str, pose: Pose9D, score: RcScore) -> None:
        if score.total < self.total:
            self.score = score
            self.cad_id = cad_id
            self.pose = pose


def search(
    tree: ShapeTree,
    database: CadDatabase,
    observations: list[Observation],
    scan_points: PointCloud,
    init_pose: Pose9D,
    weights: RcWeights,
    cfg: SearchConfig,
    cd_samples: int | None = None,
) -> SearchResult:
    """MCTS over the shape tree; returns the best candidate found.

    Deterministic for a fixed config and seed. Raises if no candidate is
    evaluable (object unobservable).
    """
    if not any(o.target.silhouette.any() for o in observations):
        raise GeometryError("object unobservable: all target views empty")
    rng = np.random.default_rng(cfg.seed)
    evaluator = _Evaluator(database, observations, scan_points, init_pose, weights, cd_samples)
    n = len(tree.nodes)
    visits = np.zeros(n, dtype=np.int64)
    score_sum = np.zeros(n)
    exhausted = np.zeros(n, dtype=bool)
    worst_seen = -math.inf
    best_seen = math.inf
    best_raw = math.inf
    incumbent = _Incumbent()
    trace: list[TraceEntry] = []
    refinements = 0
    refine_cfg = cfg.refine_config()

    def ucb_pick(node: TreeNode) -> TreeNode:
        live = [c for c in node.children if not exhausted[c.index]]
        fresh = [c for c in live if visits[c.index] == 0]
        if fresh:
            return fresh[rng.integers(len(fresh))]
        span = worst_seen - best_seen
        best_child, best_value = None, -math.inf
        for c in live:
            mean = score_sum[c.index] / visits[c.index]
            q = 0.5 if span <= 0 else (worst_seen - mean) / span
            value = q + cfg.exploration_c * math.sqrt(
                math.log(max(visits[node.index], 1)) / visits[c.index]
            )
            if value > best_value:
                best_child, best_value = c, value
        return best_child

    iterations = 0
    for _ in range(cfg.max_iterations):
        if exhausted[tree.root.index]:
            break
        iterations += 1
        path = [tree.root]
        while path[-1].children:
            path.append(ucb_pick(path[-1]))
        leaf = path[-1]
        cad_id, offset = tree.path_candidate(path)
        raw_score, raw_pose = evaluator.raw(cad_id, offset)
        incumbent_before = incumbent.total
        raw_best_before = best_raw
        refined_total = None
        value = raw_score.total
        if cfg.refine_steps > 0 and raw_score.total < cfg.refine_trigger_ratio * raw_best_before:
            refinements += 1
            ref_score, ref_pose = evaluator.refined(cad_id, raw_pose, refine_cfg)
            refined_total = ref_score.total
            value = ref_score.total
            incumbent.offer(cad_id, ref_pose, ref_score)
        incumbent.offer(cad_id, raw_pose, raw_score)
        best_raw = min(best_raw, raw_score.total)
        worst_seen = max(worst_seen, value)
        best_seen = min(best_seen, value)
        for node in path:
            visits[node.index] += 1
            score_sum[node.index] += value
        exhausted[leaf.index] = True
        for node in reversed(path[:-1]):
            if all(exhausted[c.index] for c in node.children):
                exhausted[node.index] = True
        trace.append(
            TraceEntry(
                iteration=iterations,
                path=[p.index for p in path],
                cad_id=cad_id,
                rotation_offset=offset,
                raw_score=raw_score.total,
                refined=refined_total is not None,
                refined_score=refined_total,
                raw_best_before=raw_best_before,
                incumbent_before=incumbent_before,
                incumbent_after=incumbent.total,
            )
        )
    if incumbent.cad_id is None:
        raise GeometryError("search evaluated no candidates")
    return SearchResult(
        cad_id=incumbent.cad_id,
        pose=incumbent.pose,
        score=incumbent.score,
        iterations_run=iterations,
        refinements_run=refinements,
        trace=trace,
    )


def exhaustive_search(
    tree: ShapeTree,
    database: CadDatabase,
    observations: list[Observation],
    scan_points: PointCloud,
    init_pose: Pose9D,
    weights: RcWeights,
    refine_top_k: int = 8,
    refine_cfg: RefineConfig | None = None,
    cd_samples: int | None = None,
) -> SearchResult:
    """Evaluate every (model, rotation-bin) candidate; the MCTS oracle.

    The top-K raw candidates get refined (K=0 for raw-only scoring).
    """
    paths = tree.leaf_paths()
    if len(paths) > EXHAUSTIVE_MAX_LEAVES:
        raise GeometryError(
            f"database too large for exhaustive search ({len(paths)} > {EXHAUSTIVE_MAX_LEAVES})"
        )
    if not any(o.target.silhouette.any() for o in observations):
        raise GeometryError("object unobservable: all target views empty")
    evaluator = _Evaluator(database, observations, scan_points, init_pose, weights, cd_samples)
    incumbent = _Incumbent()
    trace: list[TraceEntry] = []
    evaluated: list[tuple[float, str, Pose9D]] = []
    best_raw = math.inf
    for i, path in enumerate(paths, start=1):
        cad_id, offset = tree.path_candidate(path)
        raw_score, raw_pose = evaluator.raw(cad_id, offset)
        before = incumbent.total
        incumbent.offer(cad_id, raw_pose, raw_score)
        evaluated.append((raw_score.total, cad_id, raw_pose))
        trace.append(
            TraceEntry(
                iteration=i,
                path=[p.index for p in path],
                cad_id=cad_id,
                rotation_offset=offset,
                raw_score=raw_score.total,
                refined=False,
                refined_score=None,
                raw_best_before=best_raw,
                incumbent_before=before,
                incumbent_after=incumbent.total,
            )
        )
        best_raw = min(best_raw, raw_score.total)
    refinements = 0
    if refine_top_k > 0:
        cfg = refine_cfg or RefineConfig(steps=50, keep_history=False)
        evaluated.sort(key=lambda item: item[0])
        for raw_total, cad_id, raw_pose in evaluated[:refine_top_k]:
            refinements += 1
            ref_score, ref_pose = evaluator.refined(cad_id, raw_pose, cfg)
            incumbent.offer(cad_id, ref_pose, ref_score)
    return SearchResult(
        cad_id=incumbent.cad_id,
        pose=incumbent.pose,
        score=incumbent.score,
        iterations_run=len(paths),
        refinements_run=refinements,
        trace=trace,
    )
