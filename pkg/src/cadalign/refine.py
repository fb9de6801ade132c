"""Continuous 9-DoF pose refinement: Adam steps on finite-difference gradients.

The pose is optimized as a flat 9-vector (translation, axis-angle rotation,
log-scale); log-scale keeps every visited scale strictly positive. Gradients
come from central differences of the render-and-compare objective, so the
renderer needs no differentiability. The chamfer term supplies the smooth
signal; depth and silhouette terms are piecewise constant at pixel
granularity, which is why a zero chamfer weight degrades refinement.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GeometryError, Pose9D, PointCloud, TriMesh
from .objective import Observation, RcScore, RcWeights, rc_score

PARAM_NAMES = ("tx", "ty", "tz", "rx", "ry", "rz", "log_sx", "log_sy", "log_sz")


@dataclass(frozen=True)
class RefineConfig:
    steps: int = 300
    lr_translation: float = 0.01  # m per step
    lr_rotation: float = math.radians(1.0)  # rad per step
    lr_log_scale: float = 0.01  # ~1% per step
    fd_eps_translation: float = 0.005  # m
    fd_eps_rotation: float = math.radians(0.5)
    fd_eps_log_scale: float = 0.005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    time_budget: float | None = None  # seconds; returns best-so-far on expiry
    keep_history: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise GeometryError("refine steps must be >= 1")
        if min(self.fd_eps_translation, self.fd_eps_rotation, self.fd_eps_log_scale) <= 0:
            raise GeometryError("finite-difference epsilons must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise GeometryError("adam betas must lie in [0, 1)")

    def lr_vector(self) -> np.ndarray:
        return np.array([self.lr_translation] * 3 + [self.lr_rotation] * 3 + [self.lr_log_scale] * 3)

    def eps_vector(self) -> np.ndarray:
        return np.array(
            [self.fd_eps_translation] * 3
            + [self.fd_eps_rotation] * 3
            + [self.fd_eps_log_scale] * 3
        )


@dataclass
class RefineResult:
    pose: Pose9D
    score: RcScore
    history: list[tuple[int, RcScore, Pose9D]] = field(default_factory=list)
    steps_run: int = 0

    def write_history_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "total", "dpt", "sil", "cd"])
            for step, score, _ in self.history:
                writer.writerow([step, score.total, score.dpt_term, score.sil_term, score.cd_term])


def _objective(
    cad_mesh: TriMesh,
    cad_samples: np.ndarray,
    observations: list[Observation],
    scan_points: PointCloud,
    weights: RcWeights,
):
    def f(params: np.ndarray) -> RcScore:
        return rc_score(observations, cad_mesh, cad_samples, Pose9D.from_vector(params), scan_points, weights)

    return f


def fd_gradient(
    cad_mesh: TriMesh,
    cad_samples: np.ndarray,
    observations: list[Observation],
    scan_points: PointCloud,
    pose: Pose9D,
    weights: RcWeights,
    epsilons: np.ndarray | None = None,
) -> np.ndarray:
    """Central-difference gradient of the objective w.r.t. the 9 pose parameters."""
    f = _objective(cad_mesh, cad_samples, observations, scan_points, weights)
    p = pose.as_vector()
    eps = RefineConfig().eps_vector() if epsilons is None else np.asarray(epsilons, dtype=np.float64)
    return _fd_gradient_of(lambda q: f(q).total, p, eps)


def _fd_gradient_of(fn, params: np.ndarray, eps: np.ndarray) -> np.ndarray:
    grad = np.empty(9)
    for i in range(9):
        probe = params.copy()
        probe[i] = params[i] + eps[i]
        hi = fn(probe)
        probe[i] = params[i] - eps[i]
        lo = fn(probe)
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise GeometryError(f"non-finite objective probing parameter {PARAM_NAMES[i]}")
        grad[i] = (hi - lo) / (2.0 * eps[i])
    return grad


def refine(
    cad_mesh: TriMesh,
    cad_samples: np.ndarray,
    observations: list[Observation],
    scan_points: PointCloud,
    init: Pose9D,
    weights: RcWeights,
    cfg: RefineConfig,
) -> RefineResult:
    """Minimize the render-and-compare objective from ``init``.

    Returns the best-scoring pose visited; by construction the result never
    scores worse than the initial pose. Ties keep the earlier pose, so a
    score plateau cannot drift the result away from the start.
    """
    f = _objective(cad_mesh, cad_samples, observations, scan_points, weights)
    params = init.as_vector()
    score = f(params)
    if not math.isfinite(score.total):
        raise GeometryError("objective not finite at the initial pose")
    best_score = score
    best_params = params.copy()
    history: list[tuple[int, RcScore, Pose9D]] = []
    if cfg.keep_history:
        history.append((0, score, init))

    eps = cfg.eps_vector()
    lr = cfg.lr_vector()
    m = np.zeros(9)
    v = np.zeros(9)
    started = time.monotonic()
    steps_run = 0
    for step in range(1, cfg.steps + 1):
        if cfg.time_budget is not None and time.monotonic() - started > cfg.time_budget:
            break
        grad = _fd_gradient_of(lambda q: f(q).total, params, eps)
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad * grad
        m_hat = m / (1.0 - cfg.adam_beta1**step)
        v_hat = v / (1.0 - cfg.adam_beta2**step)
        params = params - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        score = f(params)
        steps_run = step
        if cfg.keep_history:
            history.append((step, score, Pose9D.from_vector(params)))
        if score.total < best_score.total:
            best_score = score
            best_params = params.copy()
    return RefineResult(
        pose=Pose9D.from_vector(best_params),
        score=best_score,
        history=history,
        steps_run=steps_run,
    )
