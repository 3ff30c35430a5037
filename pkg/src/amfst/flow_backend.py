"""Sparse two-frame flow estimation.

A backend turns frames into cached :class:`FrameFeatures` once, then answers
per-point displacement queries between any two cached frames. Two backends are
provided: an oracle that evaluates a synthetic scene's deformation in closed
form (optionally with seeded Gaussian noise), and a coarse-to-fine block
matcher for real images.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Protocol, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import ContractViolation, InvalidInputError

Point2 = tuple[float, float]


def as_points(points: Any) -> np.ndarray:
    """Coerce a sequence of (x, y) pairs to a float64 array of shape (n, 2)."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"expected (n, 2) points, got shape {arr.shape}")
    return arr


def in_bounds(points: np.ndarray, width: int, height: int) -> np.ndarray:
    """True where a point lies inside the pixel-centre extent [0, w-1] x [0, h-1]."""
    x, y = points[:, 0], points[:, 1]
    return (
        np.isfinite(x) & np.isfinite(y)
        & (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)
    )


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FrameFeatures:
    frame_id: int
    payload: Any
    width: int
    height: int
    backend: str
    sequence: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("features need positive width and height")


@dataclass(frozen=True)
class FlowQueryResult:
    displaced: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if len(self.displaced) != len(self.valid):
            raise ContractViolation("displaced and valid lengths differ")

    def __len__(self) -> int:
        return len(self.valid)


class FlowBackend(Protocol):
    name: str

    def extract_features(self, image: np.ndarray | None, frame_id: int) -> FrameFeatures: ...

    def estimate_flow(
        self, src: FrameFeatures, dst: FrameFeatures, queries: Any
    ) -> FlowQueryResult: ...


def _check_pair(backend_name: str, sequence: int, src: FrameFeatures, dst: FrameFeatures):
    for f in (src, dst):
        if f.backend != backend_name:
            raise ContractViolation(
                f"features from backend {f.backend!r} passed to {backend_name!r}"
            )
        if f.sequence != sequence:
            raise ContractViolation("features belong to a different sequence")


class OracleBackend:
    """Flow read directly off a synthetic scene's deformation field.

    ``scene`` must provide ``width``, ``height``, ``warp(points, t)`` mapping
    frame-0 positions to frame ``t`` and ``unwarp(points, t)`` inverting it.
    With ``sigma > 0`` every answer is perturbed by i.i.d. Gaussian noise drawn
    from a generator keyed on ``(seed, src id, dst id)``, so query ``i`` always
    receives the same perturbation for the same pair.
    """

    name = "oracle"

    def __init__(self, scene, sigma: float = 0.0, seed: int = 0):
        if not sigma >= 0:
            raise InvalidInputError(f"sigma must be >= 0, got {sigma}")
        self.scene = scene
        self.sigma = float(sigma)
        self.seed = int(seed)
        self._sequence = id(scene)

    def extract_features(self, image: np.ndarray | None, frame_id: int) -> FrameFeatures:
        if image is not None and np.asarray(image).size == 0:
            raise InvalidInputError("empty image")
        return FrameFeatures(
            frame_id=int(frame_id),
            payload=(self.scene, float(frame_id)),
            width=int(self.scene.width),
            height=int(self.scene.height),
            backend=self.name,
            sequence=self._sequence,
        )

    def estimate_flow(self, src, dst, queries) -> FlowQueryResult:
        _check_pair(self.name, self._sequence, src, dst)
        q = as_points(queries)
        ok = in_bounds(q, src.width, src.height)
        t_src, t_dst = src.payload[1], dst.payload[1]
        if t_src == t_dst:
            out = q.copy()
        else:
            out = self.scene.warp(self.scene.unwarp(q, t_src), t_dst)
        if self.sigma > 0 and len(q):
            rng = np.random.default_rng([self.seed, src.frame_id, dst.frame_id])
            out = out + self.sigma * rng.standard_normal((len(q), 2))
        out = np.where(ok[:, None], out, q)
        valid = ok & in_bounds(out, dst.width, dst.height)
        return FlowQueryResult(out, valid)


def oracle_with_noise(scene, sigma: float, seed: int) -> OracleBackend:
    return OracleBackend(scene, sigma=sigma, seed=seed)


class BlockMatchingBackend:
    """Coarse-to-fine SAD block matching over a Gaussian image pyramid.

    At each level a ``window`` x ``window`` patch around the query is compared
    against every integer offset within ``+-search`` pixels of the running
    estimate; the best offset is refined by a parabola through its neighbours.
    """

    name = "block-matching"

    def __init__(self, levels: int = 3, window: int = 11, search: int = 8, batch: int = 64):
        if levels < 1 or window < 3 or window % 2 == 0 or search < 1:
            raise InvalidInputError("levels >= 1, odd window >= 3, search >= 1 required")
        self.levels = levels
        self.window = window
        self.search = search
        self.batch = batch

    def extract_features(self, image: np.ndarray | None, frame_id: int) -> FrameFeatures:
        img = np.asarray(image, dtype=np.float64) if image is not None else np.empty(0)
        if img.size == 0:
            raise InvalidInputError("empty image")
        if img.ndim == 3:
            img = img[..., :3] @ np.array([0.299, 0.587, 0.114])
        pyramid = [_frozen(img)]
        for _ in range(1, self.levels):
            smoothed = ndimage.gaussian_filter(pyramid[-1], sigma=1.0, mode="nearest")
            pyramid.append(_frozen(smoothed[::2, ::2]))
        h, w = img.shape
        return FrameFeatures(int(frame_id), tuple(pyramid), w, h, self.name)

    def estimate_flow(self, src, dst, queries) -> FlowQueryResult:
        _check_pair(self.name, 0, src, dst)
        if len(src.payload) != len(dst.payload):
            raise ContractViolation("pyramids of different depth")
        q = as_points(queries)
        ok = in_bounds(q, src.width, src.height)
        out = q.copy()
        idx = np.flatnonzero(ok)
        for start in range(0, len(idx), self.batch):
            sel = idx[start:start + self.batch]
            out[sel] = q[sel] + self._match(src.payload, dst.payload, q[sel])
        valid = ok & in_bounds(out, dst.width, dst.height)
        return FlowQueryResult(out, valid)

    def _match(self, src_pyr, dst_pyr, q: np.ndarray) -> np.ndarray:
        r = self.window // 2
        s = self.search
        n = len(q)
        d = np.zeros((n, 2))
        patch_off = np.arange(-r, r + 1, dtype=np.float64)
        region_off = np.arange(-r - s, r + s + 1, dtype=np.float64)
        steps = np.arange(-s, s + 1)
        radius2 = steps[:, None] ** 2 + steps[None, :] ** 2
        for level in range(len(src_pyr) - 1, -1, -1):
            scale = 2.0 ** level
            if level < len(src_pyr) - 1:
                d *= 2.0
            centre = q / scale
            src_patch = _sample(src_pyr[level], centre, patch_off)
            dst_region = _sample(dst_pyr[level], centre + d, region_off)
            # (n, 2s+1, 2s+1, w, w) windows; row index = dy, column = dx
            windows = sliding_window_view(dst_region, (self.window, self.window), axis=(1, 2))
            cost = np.abs(windows - src_patch[:, None, None]).sum(axis=(3, 4))
            # among equal-cost offsets prefer the one closest to the running estimate
            flat_cost = cost.reshape(n, -1)
            ties = flat_cost == flat_cost.min(axis=1, keepdims=True)
            flat = np.where(ties, radius2.ravel()[None, :], np.inf).argmin(axis=1)
            iy, ix = np.unravel_index(flat, cost.shape[1:])
            rows = np.arange(n)
            best = cost[rows, iy, ix]
            dx = ix - s + _parabola(cost[rows, iy], ix, best)
            dy = iy - s + _parabola(cost[rows, :, ix], iy, best)
            d += np.stack([dx, dy], axis=1)
        return d


def _sample(img: np.ndarray, centres: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Bilinear samples of ``img`` on square grids centred at each point, shape (n, k, k)."""
    ys = centres[:, 1, None, None] + offsets[None, :, None]
    xs = centres[:, 0, None, None] + offsets[None, None, :]
    ys, xs = np.broadcast_arrays(ys, xs)
    return ndimage.map_coordinates(img, [ys, xs], order=1, mode="nearest")


def _parabola(line: np.ndarray, i: np.ndarray, best: np.ndarray) -> np.ndarray:
    """Sub-pixel vertex offset along a 1D cost profile; zero at the border or on exact matches."""
    n, m = line.shape
    rows = np.arange(n)
    interior = (i > 0) & (i < m - 1) & (best > 0)
    lo = line[rows, np.clip(i - 1, 0, m - 1)]
    hi = line[rows, np.clip(i + 1, 0, m - 1)]
    denom = lo - 2.0 * best + hi
    use = interior & (denom > 0)
    out = np.zeros(n)
    out[use] = 0.5 * (lo[use] - hi[use]) / denom[use]
    return out


def make_backend(kind: str, scene=None, sigma: float = 0.0, seed: int = 0) -> FlowBackend:
    if kind == "oracle":
        return OracleBackend(scene)
    if kind == "oracle-noisy":
        return oracle_with_noise(scene, sigma, seed)
    if kind == "block-matching":
        return BlockMatchingBackend()
    raise InvalidInputError(f"unknown backend {kind!r}")


__all__: Sequence[str] = [
    "Point2", "FrameFeatures", "FlowQueryResult", "FlowBackend", "OracleBackend",
    "BlockMatchingBackend", "oracle_with_noise", "make_backend", "as_points", "in_bounds",
]
