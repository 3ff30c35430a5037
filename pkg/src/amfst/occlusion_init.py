"""Instrument masks and first-frame query initialisation.

Masks come from an external segmenter as numbered PNGs. The query points
for seeding that segmenter are chosen geometrically: block-matching stereo
disparity, a disparity band that keeps the near (instrument) pixels, and
k-medoids centres of what survives.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from .errors import InvalidInputError
from .io import contiguous, numbered_pngs, read_gray


@dataclass
class MaskSequence:
    masks: np.ndarray  # (T, H, W) bool, True = instrument

    def __len__(self) -> int:
        return len(self.masks)

    def __getitem__(self, t: int) -> np.ndarray:
        return self.masks[t]

    @property
    def shape(self) -> tuple[int, int]:
        return self.masks.shape[1:]


def load_mask_sequence(directory) -> MaskSequence:
    paths = contiguous(numbered_pngs(directory), "mask")
    masks = [read_gray(p) != 0 for p in paths]
    shapes = {m.shape for m in masks}
    if len(shapes) != 1:
        raise InvalidInputError(f"mask dimensions differ: {sorted(shapes)}")
    return MaskSequence(np.stack(masks))


@dataclass
class DisparityMap:
    disparity: np.ndarray
    valid: np.ndarray


def compute_disparity(
    left: np.ndarray,
    right: np.ndarray,
    min_disp: int = 0,
    max_disp: int = 64,
    window: int = 11,
    ambiguity: float = 0.95,
) -> DisparityMap:
    """Row-wise SAD block matching on a rectified pair.

    A left pixel at column ``x`` is matched against right columns ``x - d``.
    Pixels whose best cost is not clearly below the best cost outside the
    winner's immediate neighbours (ratio above ``ambiguity``) are invalid, as
    are pixels too close to the left edge to have any such competitor.
    """
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape != right.shape:
        raise InvalidInputError(f"stereo pair sizes differ: {left.shape} vs {right.shape}")
    if left.ndim != 2 or left.size == 0:
        raise InvalidInputError("stereo images must be non-empty 2D arrays")
    if not 0 <= min_disp < max_disp:
        raise InvalidInputError("need 0 <= min_disp < max_disp")
    h, w = left.shape
    disps = np.arange(min_disp, max_disp + 1)
    cost = np.full((len(disps), h, w), np.inf, dtype=np.float64)
    area = float(window * window)
    for i, d in enumerate(disps):
        if d >= w:
            break
        diff = np.abs(left[:, d:] - right[:, : w - d])
        cost[i, :, d:] = ndimage.uniform_filter(diff, size=window, mode="nearest") * area

    best_i = cost.argmin(axis=0)
    rows, cols = np.indices((h, w))
    best = cost[best_i, rows, cols]
    near = np.abs(np.arange(len(disps))[:, None, None] - best_i[None]) <= 1
    second = np.where(near, np.inf, cost).min(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(second > 0, best / second, np.inf)
    # without a finite competitor the match cannot be judged unambiguous
    valid = np.isfinite(best) & np.isfinite(second) & (ratio <= ambiguity)

    lo = cost[np.clip(best_i - 1, 0, len(disps) - 1), rows, cols]
    hi = cost[np.clip(best_i + 1, 0, len(disps) - 1), rows, cols]
    denom = lo - 2 * best + hi
    interior = (best_i > 0) & (best_i < len(disps) - 1) & np.isfinite(lo) & np.isfinite(hi) & (denom > 0)
    sub = np.zeros((h, w))
    sub[interior] = 0.5 * (lo[interior] - hi[interior]) / denom[interior]
    disparity = disps[best_i] + sub
    return DisparityMap(np.where(valid, disparity, 0.0), valid)


def disparity_to_depth(disparity: np.ndarray, focal: float, baseline: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(disparity > 0, focal * baseline / disparity, np.inf)


def auto_disparity_range(dmap: DisparityMap, top_fraction: float = 0.3) -> tuple[float, float]:
    """The band holding the nearest ``top_fraction`` of valid pixels."""
    values = dmap.disparity[dmap.valid]
    if values.size == 0:
        raise InvalidInputError("no valid disparities")
    return float(np.quantile(values, 1.0 - top_fraction)), float(values.max())


def threshold_foreground(dmap: DisparityMap, min_disp: float, max_disp: float) -> np.ndarray:
    """(x, y) pixel coordinates of valid pixels with disparity in [min_disp, max_disp], row-major."""
    if not min_disp < max_disp:
        raise InvalidInputError("need min_disp < max_disp")
    keep = dmap.valid & (dmap.disparity >= min_disp) & (dmap.disparity <= max_disp)
    ys, xs = np.nonzero(keep)
    return np.column_stack([xs, ys]).astype(np.float64)


def assignment_cost(points: np.ndarray, medoids: np.ndarray) -> float:
    return float(cdist(points, medoids).min(axis=1).sum())


def kmedoids(points, k: int) -> np.ndarray:
    """PAM: greedy BUILD, then best-improvement SWAP until no swap lowers the cost."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if k > n:
        raise InvalidInputError(f"k={k} exceeds the {n} available points")
    D = cdist(pts, pts)

    medoids = [int(D.sum(axis=1).argmin())]
    nearest = D[medoids[0]].copy()
    while len(medoids) < k:
        gain = np.maximum(nearest[None, :] - D, 0.0).sum(axis=1)
        gain[medoids] = -np.inf
        m = int(gain.argmax())
        medoids.append(m)
        nearest = np.minimum(nearest, D[m])

    total = D[medoids].min(axis=0).sum()
    while True:
        dm = D[medoids]  # (k, n)
        order = np.argsort(dm, axis=0, kind="stable")
        d1 = dm[order[0], np.arange(n)]
        d2 = dm[order[1], np.arange(n)] if k > 1 else np.full(n, np.inf)
        best_delta, best_swap = 0.0, None
        for slot in range(k):
            # distance to the closest remaining medoid once this slot is vacated
            keep = np.where(order[0] == slot, d2, d1)
            totals = np.minimum(keep[None, :], D).sum(axis=1)
            totals[medoids] = np.inf
            h = int(totals.argmin())
            delta = totals[h] - total
            if delta < best_delta - 1e-12 * max(total, 1.0):
                best_delta, best_swap = delta, (slot, h)
        if best_swap is None:
            break
        slot, h = best_swap
        medoids[slot] = h
        total = D[medoids].min(axis=0).sum()
    return pts[medoids]
