"""Reconstruction accuracy and deformation statistics.

Shapes are compared in camera coordinates (``R S``), where only the depth
sign is ambiguous under orthographic projection. Both error measures take
the better of the prediction and its depth-flipped copy; no other alignment
is applied.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricUnavailableError, UsageError
from .model import reconstruct_batch

FLIP = np.diag([1.0, 1.0, -1.0])


def _pair(s, s_gt):
    if s_gt is None:
        raise MetricUnavailableError("ground truth is not available")
    s = np.asarray(s, dtype=np.float64)
    s_gt = np.asarray(s_gt, dtype=np.float64)
    if s.shape != s_gt.shape or s.shape[0] != 3:
        raise UsageError(f"shapes differ: {s.shape} vs {s_gt.shape}")
    return s, s_gt


def mpjpe(s, s_gt):
    """Mean over points of the summed absolute coordinate error, flip-aware."""
    s, s_gt = _pair(s, s_gt)
    n_p = s.shape[1]
    return min(np.abs(c - s_gt).sum() / n_p for c in (s, FLIP @ s))


def normalized_error(s, s_gt):
    """||s - s_gt||_F / ||s_gt||_F, flip-aware."""
    s, s_gt = _pair(s, s_gt)
    scale = np.linalg.norm(s_gt)
    if scale == 0.0:
        raise UsageError("ground truth has zero norm")
    return min(np.linalg.norm(c - s_gt) for c in (s, FLIP @ s)) / scale


def variation_from_deformations(deformations):
    """Per-point mean over frames of the largest pairwise deformation gap.

    ``deformations`` has shape (F, n_m, 3, N_p).
    """
    d = np.asarray(deformations)
    if d.shape[1] < 2:
        raise UsageError("deformation variation needs n_m >= 2")
    gaps = np.linalg.norm(d[:, :, None] - d[:, None, :], axis=3)
    return gaps.max(axis=(1, 2)).mean(axis=0)


def deformation_variation(params, frames, n_m, seed=0):
    if n_m < 2:
        raise UsageError("deformation variation needs n_m >= 2")
    rec = reconstruct_batch(params, [f.w for f in frames], n_m, seed)
    return variation_from_deformations(rec.deformations)


@dataclass
class EvalReport:
    mpjpe_best: float
    mpjpe_worst: float
    ne_best: float
    ne_worst: float
    per_frame: dict = field(repr=False)
    deformation_variation: np.ndarray = field(repr=False)
    deformation_magnitude: np.ndarray = field(repr=False)

    def to_text(self):
        lines = [
            f"mpjpe_best={self.mpjpe_best:.17g}",
            f"mpjpe_worst={self.mpjpe_worst:.17g}",
            f"ne_best={self.ne_best:.17g}",
            f"ne_worst={self.ne_worst:.17g}",
            f"n_frames={len(self.per_frame['mpjpe_best'])}",
            f"deformation_variation_mean={np.mean(self.deformation_variation):.17g}",
            f"deformation_magnitude_mean={np.mean(self.deformation_magnitude):.17g}",
        ]
        return "\n".join(lines) + "\n"

    def point_table(self):
        rows = ["point deformation_variation deformation_magnitude"]
        for j, (v, m) in enumerate(zip(self.deformation_variation, self.deformation_magnitude)):
            rows.append(f"{j} {v:.17g} {m:.17g}")
        return "\n".join(rows) + "\n"


def evaluate_reconstruction(rec, frames):
    """Score a :class:`Reconstruction` against ground truth in camera frame."""
    if not all(f.has_gt for f in frames):
        raise MetricUnavailableError("evaluation needs s_gt and r_gt on every frame")
    idx = np.arange(len(frames))
    hyps = rec.hypotheses
    chosen = {"best": hyps[idx, rec.best_index], "worst": hyps[idx, rec.worst_index]}
    per_frame = {}
    for label, shapes in chosen.items():
        cam = rec.rotations @ shapes
        gt = [f.r_gt @ f.s_gt for f in frames]
        per_frame[f"mpjpe_{label}"] = np.array([mpjpe(s, g) for s, g in zip(cam, gt)])
        per_frame[f"ne_{label}"] = np.array([normalized_error(s, g) for s, g in zip(cam, gt)])
    n_m = rec.deformations.shape[1]
    if n_m >= 2:
        variation = variation_from_deformations(rec.deformations)
    else:
        variation = np.zeros(rec.basis.shape[2])
    best_deform = rec.deformations[idx, rec.best_index]
    magnitude = np.linalg.norm(best_deform, axis=1).mean(axis=0)
    return EvalReport(
        mpjpe_best=float(per_frame["mpjpe_best"].mean()),
        mpjpe_worst=float(per_frame["mpjpe_worst"].mean()),
        ne_best=float(per_frame["ne_best"].mean()),
        ne_worst=float(per_frame["ne_worst"].mean()),
        per_frame=per_frame,
        deformation_variation=variation,
        deformation_magnitude=magnitude,
    )


def evaluate(params, frames, cam=None, n_m=10, seed=0):
    """Reconstruct every frame and score best and worst hypotheses."""
    if not all(f.has_gt for f in frames):
        raise MetricUnavailableError("evaluation needs s_gt and r_gt on every frame")
    rec = reconstruct_batch(params, [f.w for f in frames], n_m, seed)
    return evaluate_reconstruction(rec, frames)

