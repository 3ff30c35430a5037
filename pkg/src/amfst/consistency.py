"""Forward-backward endpoint error and per-step candidate grids."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation, InvalidInputError
from .flow_backend import FlowBackend, FrameFeatures, as_points, in_bounds

# Unusable (frame, point) candidate. Compares greater than any threshold and
# never wins a min, which is exactly the required semantics.
INVALID = np.inf


@dataclass
class FrameRecord:
    """A retained frame: cached features plus every point's position when it was current.

    ``anchor_valid[p]`` is False when point ``p`` was occluded at that time, in
    which case ``anchors[p]`` holds its last visible (frozen) position.
    """

    frame_id: int
    features: FrameFeatures
    anchors: np.ndarray
    anchor_valid: np.ndarray

    def __post_init__(self):
        self.anchors = as_points(self.anchors)
        self.anchor_valid = np.asarray(self.anchor_valid, dtype=bool)
        if self.anchor_valid.shape != (len(self.anchors),):
            raise ContractViolation("anchor_valid length differs from anchors")


@dataclass
class CandidateGrid:
    frame_ids: list[int]
    predictions: np.ndarray  # (F, n, 2)
    epe: np.ndarray  # (F, n), INVALID where unusable
    mask_occluded: np.ndarray  # (F, n) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.epe.shape


def mask_contains(mask: np.ndarray | None, points: np.ndarray) -> np.ndarray:
    """Nearest-pixel lookup of a binary raster; points off the raster read as outside."""
    points = as_points(points)
    if mask is None:
        return np.zeros(len(points), dtype=bool)
    mask = np.asarray(mask)
    h, w = mask.shape
    with np.errstate(invalid="ignore"):
        ix = np.floor(points[:, 0] + 0.5)
        iy = np.floor(points[:, 1] + 0.5)
    inside = np.isfinite(ix) & np.isfinite(iy) & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.zeros(len(points), dtype=bool)
    out[inside] = mask[iy[inside].astype(np.intp), ix[inside].astype(np.intp)] != 0
    return out


def forward_backward_epe(
    ref: FrameRecord,
    current: FrameFeatures,
    backend: FlowBackend,
    n_points: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Round-trip ``ref -> current -> ref`` for every anchor.

    Returns the forward predictions in ``current`` and the distance between
    each anchor and its round-trip image. Entries whose anchor is frozen or
    whose flow in either direction is invalid get :data:`INVALID` and keep the
    anchor as their prediction.

    All anchors are queried, frozen ones included, so that a point's query
    index never depends on the occlusion state of the others.
    """
    if n_points is not None and len(ref.anchors) != n_points:
        raise ContractViolation(
            f"frame {ref.frame_id} holds {len(ref.anchors)} anchors, tracker has {n_points} points"
        )
    anchors = ref.anchors
    fwd = backend.estimate_flow(ref.features, current, anchors)
    bwd = backend.estimate_flow(current, ref.features, fwd.displaced)
    usable = ref.anchor_valid & fwd.valid & bwd.valid
    epe = np.full(len(anchors), INVALID)
    epe[usable] = np.hypot(*(anchors[usable] - bwd.displaced[usable]).T)
    predictions = np.where(usable[:, None], fwd.displaced, anchors)
    return predictions, epe


def build_candidate_grid(
    frames: Sequence[FrameRecord],
    current: FrameFeatures,
    mask: np.ndarray | None,
    backend: FlowBackend,
) -> CandidateGrid:
    if not frames:
        raise InvalidInputError("candidate grid needs at least one frame")
    if mask is not None and np.shape(mask) != (current.height, current.width):
        raise ContractViolation(
            f"mask shape {np.shape(mask)} does not match frame {current.height}x{current.width}"
        )
    n = len(frames[0].anchors)
    preds, epes = zip(*(forward_backward_epe(f, current, backend, n) for f in frames))
    predictions = np.stack(preds)
    epe = np.stack(epes)
    occ = np.stack([
        ~in_bounds(p, current.width, current.height) | mask_contains(mask, p) for p in predictions
    ])
    return CandidateGrid([f.frame_id for f in frames], predictions, epe, occ)


def occlusion_condition(epe: np.ndarray, mask_occluded: np.ndarray, tau: float) -> np.ndarray:
    """Per-point occlusion flags for one step.

    A point is occluded when every candidate prediction lands in the mask, or
    when the smallest usable error still exceeds ``tau``. Masked and INVALID
    candidates are not usable, so a point with none left is occluded too.
    """
    epe = np.asarray(epe, dtype=np.float64)
    mask_occluded = np.asarray(mask_occluded, dtype=bool)
    if epe.shape != mask_occluded.shape:
        raise ContractViolation(f"epe {epe.shape} and mask {mask_occluded.shape} misaligned")
    best = np.where(mask_occluded, INVALID, epe).min(axis=0)
    # an all-masked or all-INVALID column has best = INVALID, which never passes
    return ~(best <= tau)
