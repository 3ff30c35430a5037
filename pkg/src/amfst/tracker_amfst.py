"""Adaptive multi-flow sparse tracker.

Instead of back-checking fixed offsets, the tracker keeps a small set of the
most reliable past frames. Every step it scores each retained frame plus the
previous frame against the current one, drops occluded points from the
scoring, and keeps the size-N subset whose per-point minimum errors sum to
the least. Each visible point then takes its prediction from its own best
frame inside that subset.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .consistency import (
    INVALID,
    FrameRecord,
    build_candidate_grid,
    occlusion_condition,
)
from .errors import ContractViolation, InvalidInputError
from .flow_backend import FlowBackend, FrameFeatures
from .tracker_mfst import NO_SOURCE, TrackOutputFrame, validate_queries

__all__ = [
    "AmfstConfig", "AmfstState", "occlusion_condition", "zero_occluded_columns",
    "enumerate_combinations", "combination_cost", "select_optimal", "amfst_init", "amfst_step",
]


@dataclass(frozen=True)
class AmfstConfig:
    n_f: int
    tau: float
    combo_size: int | None = None

    def __post_init__(self):
        if self.n_f < 1:
            raise InvalidInputError(f"n_f must be >= 1, got {self.n_f}")
        if not self.tau > 0:
            raise InvalidInputError(f"tau must be positive, got {self.tau}")
        if not 1 <= self.N <= self.n_f + 1:
            raise InvalidInputError(f"combo size must lie in [1, {self.n_f + 1}], got {self.N}")

    @property
    def N(self) -> int:
        return self.n_f if self.combo_size is None else int(self.combo_size)


def zero_occluded_columns(epe: np.ndarray, occluded: np.ndarray) -> np.ndarray:
    out = np.array(epe, dtype=np.float64, copy=True)
    out[:, np.asarray(occluded, dtype=bool)] = 0.0
    return out


def enumerate_combinations(candidates: Sequence, N: int) -> list[tuple]:
    if N > len(candidates) or N < 0:
        raise InvalidInputError(f"cannot choose {N} of {len(candidates)} candidates")
    return list(itertools.combinations(candidates, N))


def combination_cost(epe: np.ndarray, rows: Sequence[int]) -> tuple[float, np.ndarray]:
    """Per-point minimum over ``rows`` and its exactly rounded sum."""
    per_point = np.asarray(epe)[list(rows)].min(axis=0)
    return math.fsum(per_point.tolist()), per_point


def _row_combinations(n_rows: int, N: int, required: Sequence[int]) -> list[tuple[int, ...]]:
    """Row-index subsets that contain every required row, in lexicographic order."""
    req = sorted(set(required))
    rest = [r for r in range(n_rows) if r not in req]
    free = N - len(req)
    if len(req) > N and rest:
        free = 1  # pinned frames overflow N: keep them all plus one free slot
    free = max(0, min(free, len(rest)))
    combos = [tuple(sorted(req + list(c))) for c in itertools.combinations(rest, free)]
    return sorted(combos)


def _leave_one_out(epe: np.ndarray, droppable: Sequence[int]) -> int:
    """Row whose removal leaves the smallest total, scanning in lexicographic order of the kept set."""
    owner = epe.argmin(axis=0).tolist()
    ranked = np.sort(epe, axis=0)
    first, second = ranked[0].tolist(), ranked[1].tolist()
    best_row, best_total = None, math.inf
    # dropping a higher row keeps a lexicographically smaller set, so scan high to low
    for r in sorted(droppable, reverse=True):
        total = math.fsum([s if o == r else f for f, s, o in zip(first, second, owner)])
        if best_row is None or total < best_total:
            best_row, best_total = r, total
    return best_row


def select_optimal(
    epe: np.ndarray,
    candidates: Sequence[int],
    N: int,
    occluded: np.ndarray | None = None,
    required: Sequence[int] = (),
    fast_path: bool | None = None,
) -> tuple[tuple[int, ...], np.ndarray]:
    """Choose the frame subset of size ``N`` with the least summed per-point error.

    ``epe`` is the zeroed error matrix, one row per entry of ``candidates``.
    ``required`` lists candidate frame ids that every admissible subset must
    contain. Ties go to the lexicographically smallest subset of row indices,
    and within the chosen subset to the lowest frame id. Returns the chosen
    frame ids and, per point, the assigned frame id (``NO_SOURCE`` for
    occluded points and for points with no usable entry in the subset).
    """
    epe = np.asarray(epe, dtype=np.float64)
    n_rows, n_points = epe.shape
    if len(candidates) != n_rows:
        raise ContractViolation(f"{len(candidates)} candidates for {n_rows} epe rows")
    if N > n_rows:
        raise InvalidInputError(f"cannot choose {N} of {n_rows} candidates")
    index = {c: i for i, c in enumerate(candidates)}
    req_rows = sorted(index[c] for c in set(required))
    droppable = [r for r in range(n_rows) if r not in req_rows]
    leave_one_out = len(req_rows) <= N and N == n_rows - 1 and n_rows >= 2
    if fast_path is None:
        fast_path = leave_one_out
    if fast_path and not leave_one_out:
        raise InvalidInputError("fast path needs N = candidates - 1 and room for required frames")

    if fast_path:
        drop = _leave_one_out(epe, droppable)
        rows = tuple(r for r in range(n_rows) if r != drop)
    else:
        rows, best = None, math.inf
        for combo in _row_combinations(n_rows, N, req_rows):
            total, _ = combination_cost(epe, combo)
            if rows is None or total < best:
                rows, best = combo, total

    sub = epe[list(rows)]
    pick = sub.argmin(axis=0)
    members = np.asarray([candidates[r] for r in rows], dtype=np.int64)
    assignment = members[pick]
    unusable = ~np.isfinite(sub[pick, np.arange(n_points)])
    if occluded is not None:
        unusable |= np.asarray(occluded, dtype=bool)
    assignment[unusable] = NO_SOURCE
    return tuple(int(m) for m in members), assignment


@dataclass
class AmfstState:
    config: AmfstConfig
    backend: FlowBackend
    records: dict[int, FrameRecord]
    reliable: list[int]
    last_id: int
    positions: np.ndarray
    occluded: np.ndarray
    source: np.ndarray
    pinned: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.positions)

    def output(self) -> TrackOutputFrame:
        return TrackOutputFrame(
            self.last_id, self.positions.copy(), self.occluded.copy(), self.source.copy()
        )


def amfst_init(features: FrameFeatures, queries, config: AmfstConfig, backend: FlowBackend) -> AmfstState:
    q = validate_queries(queries, features)
    n = len(q)
    fid = features.frame_id
    return AmfstState(
        config=config,
        backend=backend,
        records={fid: FrameRecord(fid, features, q.copy(), np.ones(n, dtype=bool))},
        reliable=[],
        last_id=fid,
        positions=q.copy(),
        occluded=np.zeros(n, dtype=bool),
        source=np.full(n, fid, dtype=np.int64),
        pinned=np.full(n, NO_SOURCE, dtype=np.int64),
    )


def amfst_step(state: AmfstState, current: FrameFeatures, mask: np.ndarray | None = None) -> TrackOutputFrame:
    t = current.frame_id
    if t != state.last_id + 1:
        raise ContractViolation(f"expected frame {state.last_id + 1}, got {t}")
    cfg = state.config
    candidates = sorted(set(state.reliable) | {t - 1})
    grid = build_candidate_grid(
        [state.records[c] for c in candidates], current, mask, state.backend
    )

    occluded = occlusion_condition(grid.epe, grid.mask_occluded, cfg.tau)
    pinned = state.pinned.copy()
    newly = occluded & ~state.occluded
    pinned[newly] = state.source[newly]
    pinned[~occluded] = NO_SOURCE

    scores = np.where(grid.mask_occluded, INVALID, grid.epe)
    scores = zero_occluded_columns(scores, occluded)
    N = min(cfg.N, len(candidates))
    required = sorted({int(f) for f in pinned[occluded]})
    chosen, assignment = select_optimal(scores, candidates, N, occluded, required)

    # a visible point whose usable frames were all dropped cannot be updated this step
    stranded = ~occluded & (assignment == NO_SOURCE)
    if stranded.any():
        occluded = occluded | stranded
        pinned[stranded] = np.where(state.occluded, state.pinned, state.source)[stranded]
        chosen = tuple(sorted(set(chosen) | {int(f) for f in pinned[stranded]}))

    visible = ~occluded
    rows = np.searchsorted(candidates, assignment[visible])
    positions = state.positions.copy()
    positions[visible] = grid.predictions[rows, np.flatnonzero(visible)]
    source = np.full(state.n_points, NO_SOURCE, dtype=np.int64)
    source[visible] = assignment[visible]

    state.reliable = list(chosen)
    state.records[t] = FrameRecord(t, current, positions.copy(), visible.copy())
    keep = set(chosen) | {t}
    for fid in list(state.records):
        if fid not in keep:
            del state.records[fid]
    state.positions, state.occluded, state.source, state.pinned = positions, occluded, source, pinned
    state.last_id = t
    return state.output()
