"""Drive a tracker over a whole sequence."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .flow_backend import FlowBackend, FrameFeatures
from .tracker_amfst import AmfstConfig, amfst_init, amfst_step
from .tracker_mfst import DEFAULT_INTERVALS, MfstConfig, TrackOutputFrame, chain_config, mfst_init, mfst_step

TRACKERS = ("chain", "mfst", "amfst")


@dataclass
class TrackerParams:
    kind: str = "amfst"
    tau: float = 2.0
    n_f: int = 6
    combo_size: int | None = None
    intervals: tuple[int, ...] = DEFAULT_INTERVALS

    def build(self):
        if self.kind == "chain":
            return chain_config(self.tau), mfst_init, mfst_step
        if self.kind == "mfst":
            return MfstConfig(tau=self.tau, intervals=tuple(self.intervals)), mfst_init, mfst_step
        if self.kind == "amfst":
            return AmfstConfig(n_f=self.n_f, tau=self.tau, combo_size=self.combo_size), amfst_init, amfst_step
        raise InvalidInputError(f"unknown tracker {self.kind!r}; choose from {TRACKERS}")


@dataclass
class TrackRun:
    frames: list[TrackOutputFrame]
    step_seconds: list[float] = field(default_factory=list)

    @property
    def positions(self) -> np.ndarray:
        return np.stack([f.positions for f in self.frames])

    @property
    def occluded(self) -> np.ndarray:
        return np.stack([f.occluded for f in self.frames])


def run_tracker(
    params: TrackerParams,
    backend: FlowBackend,
    features: Sequence[FrameFeatures],
    queries,
    masks: Sequence[np.ndarray] | None = None,
) -> TrackRun:
    """Track ``queries`` from ``features[0]`` through the rest of the sequence.

    ``masks[t]`` (optional) is the instrument raster for frame ``t``. Step
    timings cover the tracker step only.
    """
    config, init, step = params.build()
    state = init(features[0], queries, config, backend)
    out = [state.output()]
    timings = []
    for t in range(1, len(features)):
        mask = None if masks is None else masks[t]
        t0 = time.perf_counter()
        out.append(step(state, features[t], mask))
        timings.append(time.perf_counter() - t0)
    return TrackRun(out, timings)
