"""Fixed-interval multi-flow sparse tracker.

Each step back-checks the current frame against frame 0 and the frames at a
fixed set of offsets (1, 2, 4, ... by default), then keeps, per point, the
candidate with the smallest forward-backward error. The degenerate
configuration ``intervals=(1,)`` without frame 0 is plain frame-to-frame
chaining, used as the drift baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .consistency import INVALID, FrameRecord, build_candidate_grid, occlusion_condition
from .errors import ContractViolation, InvalidInputError
from .flow_backend import FlowBackend, FrameFeatures, as_points, in_bounds

NO_SOURCE = -1
DEFAULT_INTERVALS = (1, 2, 4, 8, 16, 32)


def default_tau(width: int, height: int) -> float:
    """2 px at 512x512, scaled with the image diagonal."""
    return 2.0 * math.hypot(width, height) / math.hypot(512, 512)


@dataclass(frozen=True)
class MfstConfig:
    tau: float
    intervals: tuple[int, ...] = DEFAULT_INTERVALS
    include_frame_zero: bool = True

    def __post_init__(self):
        iv = tuple(int(i) for i in self.intervals)
        object.__setattr__(self, "intervals", iv)
        if not iv or iv[0] < 1 or any(b <= a for a, b in zip(iv, iv[1:])):
            raise InvalidInputError(f"intervals must be strictly increasing and >= 1, got {iv}")
        if not self.tau > 0:
            raise InvalidInputError(f"tau must be positive, got {self.tau}")


def chain_config(tau: float) -> MfstConfig:
    return MfstConfig(tau=tau, intervals=(1,), include_frame_zero=False)


@dataclass
class TrackOutputFrame:
    frame_id: int
    positions: np.ndarray
    occluded: np.ndarray
    source_frame: np.ndarray  # NO_SOURCE where occluded

    def to_json(self) -> dict:
        return {
            "t": int(self.frame_id),
            "points": [
                {
                    "x": float(x),
                    "y": float(y),
                    "occluded": bool(o),
                    "source_frame": None if s == NO_SOURCE else int(s),
                }
                for (x, y), o, s in zip(self.positions, self.occluded, self.source_frame)
            ],
        }


@dataclass
class MfstState:
    config: MfstConfig
    backend: FlowBackend
    records: dict[int, FrameRecord]
    last_id: int
    positions: np.ndarray
    occluded: np.ndarray
    source: np.ndarray
    first_id: int = 0

    @property
    def n_points(self) -> int:
        return len(self.positions)

    def output(self) -> TrackOutputFrame:
        return TrackOutputFrame(
            self.last_id, self.positions.copy(), self.occluded.copy(), self.source.copy()
        )


def validate_queries(queries, features: FrameFeatures) -> np.ndarray:
    q = as_points(queries)
    if len(q) == 0:
        raise InvalidInputError("no query points")
    bad = np.flatnonzero(~in_bounds(q, features.width, features.height))
    if len(bad):
        raise InvalidInputError(f"query points out of bounds at indices {bad.tolist()}")
    return q


def mfst_init(features: FrameFeatures, queries, config: MfstConfig, backend: FlowBackend) -> MfstState:
    q = validate_queries(queries, features)
    n = len(q)
    rec = FrameRecord(features.frame_id, features, q.copy(), np.ones(n, dtype=bool))
    return MfstState(
        config=config,
        backend=backend,
        records={features.frame_id: rec},
        last_id=features.frame_id,
        positions=q.copy(),
        occluded=np.zeros(n, dtype=bool),
        source=np.full(n, features.frame_id, dtype=np.int64),
        first_id=features.frame_id,
    )


def candidate_frames(t: int, config: MfstConfig, first: int = 0) -> list[int]:
    ids = {t - d for d in config.intervals if t - d >= first}
    if config.include_frame_zero:
        ids.add(first)
    return sorted(ids)


def mfst_step(state: MfstState, current: FrameFeatures, mask: np.ndarray | None = None) -> TrackOutputFrame:
    t = current.frame_id
    if t != state.last_id + 1:
        raise ContractViolation(f"expected frame {state.last_id + 1}, got {t}")
    cfg = state.config
    first = state.first_id
    ids = candidate_frames(t, cfg, first)
    frames = [state.records[i] for i in ids]
    grid = build_candidate_grid(frames, current, mask, state.backend)

    occluded = occlusion_condition(grid.epe, grid.mask_occluded, cfg.tau)
    usable = np.where(grid.mask_occluded, INVALID, grid.epe)
    # rows are sorted by frame id, so argmin's first-occurrence rule favours the oldest frame
    best_row = usable.argmin(axis=0)
    cols = np.arange(state.n_points)
    visible = ~occluded
    positions = state.positions.copy()
    positions[visible] = grid.predictions[best_row[visible], cols[visible]]
    source = np.full(state.n_points, NO_SOURCE, dtype=np.int64)
    source[visible] = np.asarray(ids)[best_row[visible]]

    state.positions, state.occluded, state.source = positions, occluded, source
    state.last_id = t
    state.records[t] = FrameRecord(t, current, positions.copy(), visible.copy())
    horizon = t - max(cfg.intervals)
    for fid in list(state.records):
        if fid <= horizon and not (cfg.include_frame_zero and fid == first):
            del state.records[fid]
    return state.output()
