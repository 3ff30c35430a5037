"""Synthetic deformable scenes with exact ground truth.

The deformation at frame ``t`` is a composition of two sinusoidal shears,
an affine map about the image centre and a translation::

    x1 = x + A [sin(2pi(y/lam + w t)) - sin(2pi y/lam)]
    y2 = y + A [sin(2pi(x1/lam + w t)) - sin(2pi x1/lam)]
    p3 = c + (I + t M)(p2 - c)
    p4 = p3 + v t

Every stage inverts in closed form, so flow between any two frames is exact
to rounding error. Frame 0 is the identity.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .consistency import FrameRecord, forward_backward_epe, mask_contains
from .errors import ConfigRejected, InvalidInputError
from .flow_backend import FlowBackend, FrameFeatures, OracleBackend, in_bounds

OCCLUDER_VALUE = 235


@dataclass
class Occluder:
    shape: str = "rectangle"
    center: tuple[float, float] = (0.0, 0.0)
    half_size: tuple[float, float] = (10.0, 10.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    start: int = 0
    end: int | None = None  # inclusive; None means until the last frame

    def __post_init__(self):
        if self.shape not in ("rectangle", "ellipse"):
            raise InvalidInputError(f"unknown occluder shape {self.shape!r}")
        self.center = tuple(map(float, self.center))
        self.half_size = tuple(map(float, self.half_size))
        self.velocity = tuple(map(float, self.velocity))

    def active(self, t: int) -> bool:
        return self.start <= t and (self.end is None or t <= self.end)

    def raster(self, t: int, width: int, height: int) -> np.ndarray:
        cx = self.center[0] + self.velocity[0] * t
        cy = self.center[1] + self.velocity[1] * t
        hx, hy = self.half_size
        ys, xs = np.mgrid[0:height, 0:width]
        dx, dy = (xs - cx) / hx, (ys - cy) / hy
        if self.shape == "rectangle":
            return (np.abs(dx) <= 1) & (np.abs(dy) <= 1)
        return dx * dx + dy * dy <= 1


@dataclass
class SceneConfig:
    width: int = 256
    height: int = 256
    frame_count: int = 32
    point_count: int = 50
    translation: tuple[float, float] = (0.0, 0.0)
    affine_rate: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 0.0), (0.0, 0.0))
    amplitude: float = 0.0
    wavelength: float = 64.0
    temporal_frequency: float = 0.0
    occluders: list[Occluder] = field(default_factory=list)
    texture_seed: int = 0
    rng_seed: int = 0
    margin: float = 16.0
    points: list[tuple[float, float]] | None = None

    def __post_init__(self):
        self.occluders = [o if isinstance(o, Occluder) else Occluder(**o) for o in self.occluders]
        self.translation = tuple(map(float, self.translation))
        self.affine_rate = tuple(tuple(map(float, row)) for row in self.affine_rate)
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("scene dimensions must be positive")
        if self.frame_count < 2:
            raise InvalidInputError("a scene needs at least two frames")
        if self.points is None and self.point_count < 1:
            raise InvalidInputError("a scene needs at least one point")
        if self.wavelength <= 0:
            raise InvalidInputError("wavelength must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def load(cls, path) -> "SceneConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


class Deformation:
    def __init__(self, config: SceneConfig):
        self.v = np.asarray(config.translation, dtype=np.float64)
        self.M = np.asarray(config.affine_rate, dtype=np.float64)
        self.A = float(config.amplitude)
        self.lam = float(config.wavelength)
        self.omega = float(config.temporal_frequency)
        self.c = np.array([(config.width - 1) / 2.0, (config.height - 1) / 2.0])

    def _wave(self, u: np.ndarray, t: float) -> np.ndarray:
        k = 2.0 * math.pi / self.lam
        return self.A * (np.sin(k * u + 2.0 * math.pi * self.omega * t) - np.sin(k * u))

    def affine(self, t: float) -> np.ndarray:
        return np.eye(2) + t * self.M

    def warp(self, points: np.ndarray, t: float) -> np.ndarray:
        p = np.array(points, dtype=np.float64, copy=True)
        if self.A:
            p[:, 0] += self._wave(p[:, 1], t)
            p[:, 1] += self._wave(p[:, 0], t)
        p = self.c + (p - self.c) @ self.affine(t).T
        return p + self.v * t

    def unwarp(self, points: np.ndarray, t: float) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64) - self.v * t
        p = self.c + np.linalg.solve(self.affine(t), (p - self.c).T).T
        if self.A:
            p[:, 1] -= self._wave(p[:, 0], t)
            p[:, 0] -= self._wave(p[:, 1], t)
        return p


class Scene:
    """Scene handle consumed by :class:`OracleBackend`."""

    def __init__(self, config: SceneConfig, points0: np.ndarray):
        self.config = config
        self.width = config.width
        self.height = config.height
        self.frame_count = config.frame_count
        self.deformation = Deformation(config)
        self.points0 = points0

    def warp(self, points, t):
        return self.deformation.warp(points, t)

    def unwarp(self, points, t):
        return self.deformation.unwarp(points, t)

    def mask(self, t: int) -> np.ndarray:
        m = np.zeros((self.height, self.width), dtype=bool)
        for occ in self.config.occluders:
            if occ.active(t):
                m |= occ.raster(t, self.width, self.height)
        return m


@dataclass
class GroundTruth:
    positions: np.ndarray  # (T, n, 2)
    occluded: np.ndarray  # (T, n) point inside an occluder
    masks: np.ndarray  # (T, H, W)
    visible: np.ndarray  # (T, n) ground truth available for scoring

    @property
    def frame_count(self) -> int:
        return len(self.positions)

    def to_json(self) -> dict:
        return {
            "version": 1,
            "frames": [
                {
                    "t": t,
                    "points": [
                        {"x": float(x), "y": float(y), "occluded": bool(o), "visible": bool(v)}
                        for (x, y), o, v in zip(pos, occ, vis)
                    ],
                }
                for t, (pos, occ, vis) in enumerate(zip(self.positions, self.occluded, self.visible))
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "GroundTruth":
        frames = sorted(data["frames"], key=lambda f: f["t"])
        pos = np.array([[(p["x"], p["y"]) for p in f["points"]] for f in frames], dtype=np.float64)
        occ = np.array([[bool(p.get("occluded", False)) for p in f["points"]] for f in frames])
        vis = np.array([[bool(p.get("visible", True)) for p in f["points"]] for f in frames])
        return cls(pos.reshape(len(frames), -1, 2), occ, np.zeros((0, 0, 0), dtype=bool), vis)


def generate_scene(config: SceneConfig) -> tuple[GroundTruth, Scene]:
    w, h, T = config.width, config.height, config.frame_count
    for t in (0, T - 1):
        a = np.eye(2) + t * np.asarray(config.affine_rate)
        if np.linalg.det(a) <= 0 or np.linalg.cond(a) > 10:
            raise ConfigRejected(f"affine part degenerates by frame {t}", frame=t)
    if config.points is not None:
        points0 = np.asarray(config.points, dtype=np.float64).reshape(-1, 2)
    else:
        rng = np.random.default_rng(config.rng_seed)
        m = config.margin
        points0 = np.column_stack([
            rng.uniform(m, w - 1 - m, config.point_count),
            rng.uniform(m, h - 1 - m, config.point_count),
        ])
    scene = Scene(config, points0)
    positions = np.stack([scene.warp(points0, t) for t in range(T)])
    for t in range(T):
        bad = np.flatnonzero(~in_bounds(positions[t], w, h))
        if len(bad):
            raise ConfigRejected(
                f"point {bad[0]} leaves the image at frame {t}", frame=t, point=int(bad[0])
            )
    masks = np.stack([scene.mask(t) for t in range(T)])
    occluded = np.stack([mask_contains(masks[t], positions[t]) for t in range(T)])
    visible = np.ones(occluded.shape, dtype=bool)
    return GroundTruth(positions, occluded, masks, visible), scene


class Texture:
    """Band-limited random texture: a sum of plane waves over a few octaves."""

    def __init__(self, seed: int, wavelengths: Sequence[float] = (48, 24, 12, 6), per_octave: int = 8):
        rng = np.random.default_rng(seed)
        k, phase, amp = [], [], []
        for i, wl in enumerate(wavelengths):
            theta = rng.uniform(0, 2 * math.pi, per_octave)
            scale = rng.uniform(0.8, 1.25, per_octave) / wl
            k.append(np.column_stack([np.cos(theta), np.sin(theta)]) * scale[:, None])
            phase.append(rng.uniform(0, 2 * math.pi, per_octave))
            amp.append(np.full(per_octave, 1.0 / math.sqrt(i + 1)))
        self.k = 2 * math.pi * np.concatenate(k)
        self.phase = np.concatenate(phase)
        self.amp = np.concatenate(amp)
        self.norm = math.sqrt(0.5 * float(np.sum(self.amp ** 2)))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        v = np.cos(points @ self.k.T + self.phase) @ self.amp
        return 128.0 + 45.0 * v / self.norm


def render_frames(config: SceneConfig, gt: GroundTruth | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Render 8-bit frames and the occluder masks painted into them."""
    if gt is None or gt.masks.size == 0:
        gt, _ = generate_scene(config)
    deform = Deformation(config)
    texture = Texture(config.texture_seed)
    h, w = config.height, config.width
    ys, xs = np.mgrid[0:h, 0:w]
    grid = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    frames = np.empty((config.frame_count, h, w), dtype=np.uint8)
    for t in range(config.frame_count):
        values = texture(deform.unwarp(grid, t)).reshape(h, w)
        img = np.clip(np.rint(values), 0, 255).astype(np.uint8)
        img[gt.masks[t]] = OCCLUDER_VALUE
        frames[t] = img
    return frames, gt.masks


def scene_features(
    backend: FlowBackend, scene: Scene, frames: np.ndarray | None = None
) -> list[FrameFeatures]:
    if isinstance(backend, OracleBackend):
        return [backend.extract_features(None, t) for t in range(scene.frame_count)]
    if frames is None:
        frames, _ = render_frames(scene.config)
    return [backend.extract_features(img, t) for t, img in enumerate(frames)]


def calibrate_tau(
    backend_factory: Callable[[Scene], FlowBackend],
    scenes: Sequence[SceneConfig],
    target_fpr: float,
    offsets: Sequence[int] = (1,),
) -> float:
    """Pick the error threshold that flags ``target_fpr`` of visible samples.

    ``backend_factory`` builds a backend for each generated scene. Samples are
    forward-backward errors of ground-truth positions between frames ``t - d``
    and ``t`` for every offset ``d``.
    """
    if not 0 < target_fpr < 1:
        raise InvalidInputError(f"target_fpr must lie in (0, 1), got {target_fpr}")
    samples = []
    for cfg in scenes:
        if cfg.occluders:
            raise InvalidInputError("calibration scenes must be free of occluders")
        gt, scene = generate_scene(cfg)
        backend = backend_factory(scene)
        feats = scene_features(backend, scene)
        n = gt.positions.shape[1]
        for d in offsets:
            for t in range(d, gt.frame_count):
                ref = FrameRecord(t - d, feats[t - d], gt.positions[t - d], np.ones(n, dtype=bool))
                _, epe = forward_backward_epe(ref, feats[t], backend)
                samples.append(epe[np.isfinite(epe)])
    samples = np.concatenate(samples) if samples else np.empty(0)
    if samples.size == 0:
        raise InvalidInputError("no usable forward-backward samples for calibration")
    return float(np.quantile(samples, 1.0 - target_fpr))


def synthetic_stereo_pair(
    width: int = 128,
    height: int = 96,
    blob: tuple[int, int, int, int] = (40, 30, 70, 60),
    blob_disparity: float = 20.0,
    background_disparity: float = 5.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rectified textured pair with a near rectangular blob ``(x0, y0, x1, y1)``, inclusive.

    Returns ``(left, right, blob_mask)``; the mask is in left-image coordinates.
    """
    bg, fg = Texture(seed), Texture(seed + 1)
    ys, xs = np.mgrid[0:height, 0:width]
    x0, y0, x1, y1 = blob
    in_blob = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
    grid = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    left = np.where(in_blob.ravel(), fg(grid), bg(grid)).reshape(height, width)
    # a right pixel at x shows whatever the left view has at x + d
    shifted_blob = grid + [blob_disparity, 0.0]
    hits = (
        (shifted_blob[:, 0] >= x0) & (shifted_blob[:, 0] <= x1)
        & (shifted_blob[:, 1] >= y0) & (shifted_blob[:, 1] <= y1)
    )
    right = np.where(hits, fg(shifted_blob), bg(grid + [background_disparity, 0.0])).reshape(height, width)
    return np.rint(left), np.rint(right), in_blob
