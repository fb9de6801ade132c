"""Render-and-compare loss: weighted depth L1 + silhouette (1 - IoU) + chamfer.

The scalar minimized by both the discrete search and the continuous pose
refinement. Depth and silhouette terms are averaged over views; the chamfer
term measures observed scan points against the posed model's surface samples
in a single direction, so partially observed objects are not penalized for
unobserved model regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, Pose9D, PointCloud, TriMesh, apply_pose, transform_points
from .metrics import SpatialIndex
from .render import Observation, RenderOutput, rasterize

# Penalty (meters) for a pixel covered by exactly one of target/candidate.
# Large enough to dominate in-support depth errors, so rendering nothing or
# rendering off-target is never the cheapest option.
MISMATCH_DEPTH_PENALTY = 0.5


@dataclass(frozen=True)
class RcWeights:
    """Weights of the three render-and-compare terms."""

    lambda_dpt: float = 1.0
    lambda_sil: float = 1.0
    lambda_cd: float = 1.0

    def __post_init__(self):
        if self.lambda_dpt < 0 or self.lambda_sil < 0 or self.lambda_cd < 0:
            raise GeometryError("weights must be non-negative")
        if self.lambda_dpt == 0 and self.lambda_sil == 0 and self.lambda_cd == 0:
            raise GeometryError("at least one weight must be positive")


@dataclass(frozen=True)
class RcScore:
    """Score breakdown; total = lambda_dpt*dpt + lambda_sil*sil + lambda_cd*cd."""

    total: float
    dpt_term: float
    sil_term: float
    cd_term: float
    views_used: int

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "dpt_term": self.dpt_term,
            "sil_term": self.sil_term,
            "cd_term": self.cd_term,
            "views_used": self.views_used,
        }


def depth_l1(target: RenderOutput, candidate: RenderOutput) -> float:
    """Mean depth discrepancy over the union of the two silhouettes.

    Pixels valid in both maps contribute |d_t - d_c|; pixels valid in exactly
    one contribute the fixed mismatch penalty. No support at all gives 0.
    """
    if target.resolution != candidate.resolution:
        raise GeometryError("depth_l1 resolution mismatch")
    t, c = target.depth, candidate.depth
    both = (t > 0) & (c > 0)
    either = (t > 0) | (c > 0)
    n = int(either.sum())
    if n == 0:
        return 0.0
    err = float(np.abs(t[both] - c[both]).sum())
    err += MISMATCH_DEPTH_PENALTY * (n - int(both.sum()))
    return err / n


def silhouette_term(target: RenderOutput, candidate: RenderOutput) -> float:
    """1 - IoU of the silhouettes; two empty masks count as a perfect match."""
    if target.resolution != candidate.resolution:
        raise GeometryError("silhouette_term resolution mismatch")
    t, c = target.silhouette, candidate.silhouette
    union = int((t | c).sum())
    if union == 0:
        return 0.0
    inter = int((t & c).sum())
    return 1.0 - inter / union


def chamfer_to_model(
    scan_points: PointCloud, cad_samples: np.ndarray, pose: Pose9D, *, scan_to_model: bool = True
) -> float:
    """Single-direction squared chamfer between scan points and posed samples.

    Default direction is scan -> model: every observed point must be explained
    by the model surface, while unobserved model regions go free.
    """
    scan_points.require_nonempty("scan points")
    posed = transform_points(cad_samples, pose)
    if scan_to_model:
        return float(SpatialIndex(posed).nearest_sq_dist(scan_points.points).mean())
    return float(SpatialIndex(scan_points.points).nearest_sq_dist(posed).mean())


def rc_score(
    observations: list[Observation],
    cad_mesh: TriMesh,
    cad_samples: np.ndarray,
    pose: Pose9D,
    scan_points: PointCloud,
    weights: RcWeights,
    *,
    scan_to_model_cd: bool = True,
) -> RcScore:
    """Evaluate one (model, pose) candidate against all views. Lower is better."""
    if not observations:
        raise GeometryError("rc_score needs at least one view")
    scan_points.require_nonempty("scan points")
    posed = apply_pose(cad_mesh, pose)
    dpt = 0.0
    sil = 0.0
    for obs in observations:
        render = rasterize(posed, obs.view)
        dpt += depth_l1(obs.target, render)
        sil += silhouette_term(obs.target, render)
    dpt /= len(observations)
    sil /= len(observations)
    cd = chamfer_to_model(scan_points, cad_samples, pose, scan_to_model=scan_to_model_cd)
    total = weights.lambda_dpt * dpt + weights.lambda_sil * sil + weights.lambda_cd * cd
    return RcScore(total=total, dpt_term=dpt, sil_term=sil, cd_term=cd, views_used=len(observations))
