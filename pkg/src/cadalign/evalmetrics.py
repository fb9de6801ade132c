"""Evaluation: alignment accuracy, retrieval-aware accuracy, CD/EMD, latent loss.

An alignment is correct when the class matches and translation, rotation and
scale-ratio errors all fall inside the thresholds; rotation error is reduced
modulo the ground-truth shape's up-axis symmetry group before thresholding.
Retrieval-aware accuracy additionally requires the retrieved model's class
to match.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, rotz
from .metrics import EXACT_EMD_MAX_POINTS, ChamferDirection, EmdMode, chamfer, emd
from .pipeline import Annotation, Symmetry

SYMMETRY_GROUP_DEGREES = {
    Symmetry.NONE: (0.0,),
    Symmetry.TWO_FOLD: (0.0, 180.0),
    Symmetry.FOUR_FOLD: (0.0, 90.0, 180.0, 270.0),
}


@dataclass(frozen=True)
class AlignmentThresholds:
    translation_max: float = 0.20  # meters
    rotation_max_deg: float = 20.0
    scale_ratio_max: float = 0.20

    def __post_init__(self):
        if min(self.translation_max, self.rotation_max_deg, self.scale_ratio_max) <= 0:
            raise GeometryError("thresholds must be positive")


def symmetry_rotation_error_deg(pred_rot: np.ndarray, gt_rot: np.ndarray, symmetry: Symmetry) -> float:
    """Geodesic rotation error (degrees), minimized over the gt symmetry group."""
    m = gt_rot.T @ pred_rot
    if symmetry == Symmetry.INFINITE:
        # max over up-axis spins of trace(Rz(b) @ m), in closed form
        best_trace = m[2, 2] + math.hypot(m[0, 0] + m[1, 1], m[0, 1] - m[1, 0])
        return math.degrees(math.acos(np.clip((best_trace - 1.0) / 2.0, -1.0, 1.0)))
    best = math.inf
    for deg in SYMMETRY_GROUP_DEGREES[symmetry]:
        g = rotz(math.radians(deg)) @ m
        angle = math.acos(np.clip((np.trace(g) - 1.0) / 2.0, -1.0, 1.0))
        best = min(best, math.degrees(angle))
    return best


def scale_ratio_error(pred_scale: np.ndarray, gt_scale: np.ndarray, *, use_mean: bool = False) -> float:
    """Per-axis |s_pred/s_gt - 1| aggregated by max (default) or mean."""
    ratios = np.abs(np.asarray(pred_scale) / np.asarray(gt_scale) - 1.0)
    return float(ratios.mean() if use_mean else ratios.max())


@dataclass(frozen=True)
class AlignmentCheck:
    correct: bool
    class_match: bool
    translation_error: float
    rotation_error_deg: float
    scale_error: float


def alignment_correct(
    pred: Annotation,
    gt: Annotation,
    thresholds: AlignmentThresholds = AlignmentThresholds(),
    *,
    mean_scale_ratio: bool = False,
) -> AlignmentCheck:
    """Threshold check for one prediction; comparisons are inclusive."""
    if pred.instance_id != gt.instance_id:
        raise GeometryError(
            f"instance mismatch: {pred.instance_id!r} vs {gt.instance_id!r}"
        )
    class_match = pred.class_label == gt.class_label
    t_err = float(np.linalg.norm(pred.pose.translation - gt.pose.translation))
    r_err = symmetry_rotation_error_deg(
        pred.pose.rotation_matrix(), gt.pose.rotation_matrix(), gt.symmetry
    )
    s_err = scale_ratio_error(pred.pose.scale, gt.pose.scale, use_mean=mean_scale_ratio)
    correct = (
        class_match
        and t_err <= thresholds.translation_max
        and r_err <= thresholds.rotation_max_deg
        and s_err <= thresholds.scale_ratio_max
    )
    return AlignmentCheck(
        correct=correct,
        class_match=class_match,
        translation_error=t_err,
        rotation_error_deg=r_err,
        scale_error=s_err,
    )


def retrieval_aware_correct(
    pred: Annotation, gt: Annotation, thresholds: AlignmentThresholds = AlignmentThresholds()
) -> bool:
    check = alignment_correct(pred, gt, thresholds)
    return check.correct and pred.cad_class == gt.cad_class


@dataclass
class EvalReport:
    n_instances: int
    alignment_per_instance: float
    alignment_per_class: float
    retrieval_per_instance: float
    retrieval_per_class: float
    per_class: dict[str, dict] = field(default_factory=dict)
    missing_predictions: int = 0
    mean_cd_e4: float | None = None
    mean_emd_e2: float | None = None

    def as_dict(self) -> dict:
        return {
            "n_instances": self.n_instances,
            "alignment_accuracy": {
                "per_instance": self.alignment_per_instance,
                "per_class": self.alignment_per_class,
            },
            "retrieval_aware_alignment_accuracy": {
                "per_instance": self.retrieval_per_instance,
                "per_class": self.retrieval_per_class,
            },
            "per_class": self.per_class,
            "missing_predictions": self.missing_predictions,
            "mean_cd_e4": self.mean_cd_e4,
            "mean_emd_e2": self.mean_emd_e2,
        }

    def table(self) -> str:
        lines = [
            f"{'class':<12} {'n':>4} {'align':>7} {'retr-aware':>11}",
            "-" * 38,
        ]
        for label in sorted(self.per_class):
            row = self.per_class[label]
            lines.append(
                f"{label:<12} {row['n']:>4} {row['alignment']:>7.3f} {row['retrieval_aware']:>11.3f}"
            )
        lines.append("-" * 38)
        lines.append(
            f"{'per class':<12} {self.n_instances:>4} {self.alignment_per_class:>7.3f}"
            f" {self.retrieval_per_class:>11.3f}"
        )
        lines.append(
            f"{'per instance':<12} {self.n_instances:>4} {self.alignment_per_instance:>7.3f}"
            f" {self.retrieval_per_instance:>11.3f}"
        )
        return "\n".join(lines)


def evaluate_annotations(
    predictions: list[Annotation],
    ground_truth: list[Annotation],
    thresholds: AlignmentThresholds = AlignmentThresholds(),
) -> EvalReport:
    """Score predictions against ground truth, matched by instance id.

    Ground-truth instances without a prediction count as incorrect. Per-class
    numbers are unweighted means over the per-class fractions.
    """
    preds = {p.instance_id: p for p in predictions}
    by_class: dict[str, list[tuple[bool, bool]]] = {}
    missing = 0
    for gt in ground_truth:
        pred = preds.get(gt.instance_id)
        if pred is None:
            missing += 1
            align_ok, retr_ok = False, False
        else:
            align_ok = alignment_correct(pred, gt, thresholds).correct
            retr_ok = align_ok and pred.cad_class == gt.cad_class
        by_class.setdefault(gt.class_label, []).append((align_ok, retr_ok))
    n = len(ground_truth)
    flat = [pair for rows in by_class.values() for pair in rows]
    per_class = {}
    for label, rows in by_class.items():
        per_class[label] = {
            "n": len(rows),
            "alignment": sum(a for a, _ in rows) / len(rows),
            "retrieval_aware": sum(r for _, r in rows) / len(rows),
        }
    class_fracs = list(per_class.values())
    return EvalReport(
        n_instances=n,
        alignment_per_instance=(sum(a for a, _ in flat) / n) if n else 0.0,
        alignment_per_class=(
            sum(c["alignment"] for c in class_fracs) / len(class_fracs) if class_fracs else 0.0
        ),
        retrieval_per_instance=(sum(r for _, r in flat) / n) if n else 0.0,
        retrieval_per_class=(
            sum(c["retrieval_aware"] for c in class_fracs) / len(class_fracs)
            if class_fracs
            else 0.0
        ),
        per_class=per_class,
        missing_predictions=missing,
    )


def completion_report(pred_clouds, gt_clouds) -> tuple[float, float]:
    """Mean symmetric chamfer (x1e4) and mean EMD (x1e2) over paired clouds."""
    if len(pred_clouds) != len(gt_clouds):
        raise GeometryError("completion_report needs one prediction per ground truth")
    if not pred_clouds:
        raise GeometryError("completion_report needs at least one pair")
    cds, emds = [], []
    for pred, gt in zip(pred_clouds, gt_clouds):
        if len(pred) != len(gt):
            raise GeometryError("paired clouds must have equal sizes")
        cds.append(chamfer(pred, gt, ChamferDirection.SYMMETRIC).value)
        mode = EmdMode.EXACT_ASSIGNMENT if len(pred) <= EXACT_EMD_MAX_POINTS else EmdMode.APPROXIMATE
        emds.append(emd(pred, gt, mode).value)
    return float(np.mean(cds) * 1e4), float(np.mean(emds) * 1e2)


def latent_loss(
    z_p: np.ndarray,
    z_c: np.ndarray,
    lambda_mse: float = 1.0,
    lambda_kl: float = 0.5,
) -> tuple[float, float, float]:
    """Latent consistency loss: weighted MSE plus KL between softmax-normalized
    latents, KL(softmax(z_c) || softmax(z_p)). Returns (total, mse, kl)."""
    z_p = np.asarray(z_p, dtype=np.float64).reshape(-1)
    z_c = np.asarray(z_c, dtype=np.float64).reshape(-1)
    if z_p.shape != z_c.shape:
        raise GeometryError(f"latent dimension mismatch: {z_p.shape} vs {z_c.shape}")
    if not (np.all(np.isfinite(z_p)) and np.all(np.isfinite(z_c))):
        raise GeometryError("latents must be finite")
    mse = float(np.mean((z_p - z_c) ** 2))
    log_p = z_c - z_c.max()
    log_p = log_p - math.log(np.exp(log_p).sum())
    log_q = z_p - z_p.max()
    log_q = log_q - math.log(np.exp(log_q).sum())
    kl = float(np.sum(np.exp(log_p) * (log_p - log_q)))
    kl = max(kl, 0.0)  # guards -0.0 and rounding at the identity
    total = lambda_mse * mse + lambda_kl * kl
    return total, mse, kl
