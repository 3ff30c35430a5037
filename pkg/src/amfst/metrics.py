"""Tracking accuracy metrics.

Errors are Euclidean pixel distances between predicted and ground-truth
positions. A (frame, point) pair is scored whenever ground truth marks the
point visible, regardless of whether the tracker reported it occluded; an
occluded prediction is scored at its frozen position.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import UndefinedMetricError
from .flow_backend import as_points

DELTA_THRESHOLDS = (4, 8, 16, 32, 64)


def _errors(pred, gt) -> np.ndarray:
    pred, gt = as_points(pred), as_points(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} misaligned")
    return np.hypot(*(pred - gt).T)


def _included(n: int, include) -> np.ndarray:
    if include is None:
        return np.ones(n, dtype=bool)
    inc = np.asarray(include, dtype=bool)
    if inc.shape != (n,):
        raise ValueError("include mask misaligned")
    return inc


def mee(pred, gt, include=None) -> float:
    err = _errors(pred, gt)
    inc = _included(len(err), include)
    if not inc.any():
        raise UndefinedMetricError("MEE over an empty set")
    return float(err[inc].mean())


def mcd(pred_set, gt_set) -> float:
    """Symmetric chamfer: average of the two mean nearest-neighbour distances."""
    a, b = as_points(pred_set), as_points(gt_set)
    if len(a) == 0 or len(b) == 0:
        raise UndefinedMetricError("chamfer distance needs two non-empty sets")
    a_to_b = cKDTree(b).query(a)[0]
    b_to_a = cKDTree(a).query(b)[0]
    return float((a_to_b.mean() + b_to_a.mean()) / 2.0)


def delta_at(pred, gt, threshold: float, include=None) -> float:
    err = _errors(pred, gt)
    inc = _included(len(err), include)
    if not inc.any():
        raise UndefinedMetricError("delta over an empty set")
    return float(np.mean(err[inc] < threshold))


def delta_avg(pred, gt, include=None, thresholds=DELTA_THRESHOLDS) -> float:
    return float(np.mean([delta_at(pred, gt, th, include) for th in thresholds]))


def delta64_occluded(pred, gt, occluded_by_mask) -> float:
    occ = np.asarray(occluded_by_mask, dtype=bool)
    if not occ.any():
        raise UndefinedMetricError("no mask-occluded pairs")
    return delta_at(pred, gt, 64, occ)


def mee_over_duration(pred_frames, gt_frames, visible=None) -> list[tuple[int, float]]:
    """MEE at each frame index over the points ground truth marks visible there."""
    pred = np.asarray(pred_frames, dtype=np.float64)
    gt = np.asarray(gt_frames, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} misaligned")
    vis = np.ones(pred.shape[:2], dtype=bool) if visible is None else np.asarray(visible, dtype=bool)
    curve = [(t, mee(pred[t], gt[t], vis[t])) for t in range(len(pred)) if vis[t].any()]
    if not curve:
        raise UndefinedMetricError("no evaluable frame")
    return curve


@dataclass
class MetricsReport:
    mee: float
    mcd: float
    delta_avg: float
    delta64_occluded: float | None
    mee_by_duration: list[tuple[int, float]]
    counts: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "mee_px": self.mee,
            "mcd_px": self.mcd,
            "delta_avg": self.delta_avg,
            "delta64_occluded": self.delta64_occluded,
            "mee_by_duration": [[int(t), float(v)] for t, v in self.mee_by_duration],
            "counts": dict(self.counts),
        }


def evaluate(pred_frames, gt_frames, visible=None, occluded_by_mask=None) -> MetricsReport:
    """All metrics for one run; arrays are (T, n, 2) positions and (T, n) flags.

    Frame 0 is excluded because every tracker reports the queries verbatim there.
    """
    pred = np.asarray(pred_frames, dtype=np.float64)[1:]
    gt = np.asarray(gt_frames, dtype=np.float64)[1:]
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} misaligned")
    T, n = pred.shape[:2]
    vis = np.ones((T, n), dtype=bool) if visible is None else np.asarray(visible, dtype=bool)[1:]
    occ = np.zeros((T, n), dtype=bool) if occluded_by_mask is None else np.asarray(occluded_by_mask, dtype=bool)[1:]
    flat_p, flat_g = pred.reshape(-1, 2), gt.reshape(-1, 2)
    flat_v, flat_o = vis.ravel(), (occ & vis).ravel()
    chamfer = [mcd(pred[t][vis[t]], gt[t][vis[t]]) for t in range(T) if vis[t].any()]
    if not chamfer:
        raise UndefinedMetricError("no visible ground truth")
    curve = [(t + 1, v) for t, v in mee_over_duration(pred, gt, vis)]
    return MetricsReport(
        mee=mee(flat_p, flat_g, flat_v),
        mcd=float(np.mean(chamfer)),
        delta_avg=delta_avg(flat_p, flat_g, flat_v),
        delta64_occluded=delta64_occluded(flat_p, flat_g, flat_o) if flat_o.any() else None,
        mee_by_duration=curve,
        counts={
            "visible_pairs": int(flat_v.sum()),
            "occluded_pairs": int(flat_o.sum()),
            "chamfer_frames": len(chamfer),
        },
    )
