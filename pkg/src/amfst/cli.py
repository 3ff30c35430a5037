"""Command-line entry point.

Exit codes: 0 ok, 2 bad configuration, 3 missing input, 4 misaligned
inputs, 5 degenerate data.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigRejected, ContractViolation, InvalidInputError
from .flow_backend import make_backend
from .io import read_frames, read_gray, read_json, read_queries, write_json, write_queries, write_sequence
from .metrics import evaluate
from .occlusion_init import (
    auto_disparity_range,
    compute_disparity,
    kmedoids,
    load_mask_sequence,
    threshold_foreground,
)
from .plotting import plot_duration_curves
from .runner import TRACKERS, TrackerParams, TrackRun, run_tracker
from .synth import GroundTruth, Scene, SceneConfig, calibrate_tau, generate_scene, render_frames, scene_features
from .tracker_mfst import DEFAULT_INTERVALS, default_tau

log = logging.getLogger("amfst")

TRAJECTORY_VERSION = 1
REPORT_VERSION = 1
MAX_MEDOID_POINTS = 2000
MIN_CALIBRATED_TAU = 1e-3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _need(path, what: str) -> Path:
    if path is None:
        raise CliError(2, f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise CliError(3, f"{what} not found: {p}")
    return p


def _intervals(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad interval list {text!r}") from exc


def _tau_arg(text: str):
    if text == "calibrate":
        return text
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("tau must be a number or 'calibrate'") from exc


# -- shared run setup ---------------------------------------------------------


@dataclasses.dataclass
class RunSpec:
    tracker: str = "amfst"
    backend: str = "oracle"
    tau: float | str | None = None
    nf: int = 6
    combo_size: int | None = None
    intervals: tuple[int, ...] = DEFAULT_INTERVALS
    sigma: float = 0.5
    seed: int = 0
    scene: str | None = None
    frames: str | None = None
    masks: str | None = None
    queries: str | None = None

    @classmethod
    def from_args(cls, args) -> "RunSpec":
        fields = {f.name for f in dataclasses.fields(cls)}
        values = {k: v for k, v in vars(args).items() if k in fields and v is not None}
        return cls(**values)

    @classmethod
    def from_dict(cls, data: dict, base: "RunSpec") -> "RunSpec":
        fields = {f.name for f in dataclasses.fields(cls)}
        merged = dataclasses.asdict(base)
        merged.update({k: v for k, v in data.items() if k in fields})
        if isinstance(merged["intervals"], str):
            merged["intervals"] = _intervals(merged["intervals"])
        merged["intervals"] = tuple(merged["intervals"])
        return cls(**merged)

    def echo(self, tau: float) -> dict:
        out = dataclasses.asdict(self)
        out["intervals"] = list(self.intervals)
        out["tau"] = tau
        out["tau_requested"] = self.tau
        return out


@dataclasses.dataclass
class PreparedRun:
    features: list
    backend: object
    queries: np.ndarray
    masks: object
    scene: Scene | None
    width: int
    height: int


def _load_scene(spec: RunSpec) -> tuple[SceneConfig, GroundTruth, Scene]:
    path = _need(spec.scene, "scene")
    try:
        config = SceneConfig.from_dict(read_json(path))
        gt, scene = generate_scene(config)
    except (InvalidInputError, ConfigRejected, TypeError) as exc:
        raise CliError(2, f"bad scene config {path}: {exc}") from exc
    return config, gt, scene


def prepare(spec: RunSpec) -> PreparedRun:
    if spec.tracker not in TRACKERS:
        raise CliError(2, f"unknown tracker {spec.tracker!r}")
    scene = None
    if spec.scene is not None:
        _, gt, scene = _load_scene(spec)
    if spec.backend in ("oracle", "oracle-noisy"):
        if scene is None:
            raise CliError(2, f"backend {spec.backend} needs --scene")
        try:
            backend = make_backend(spec.backend, scene, sigma=spec.sigma, seed=spec.seed)
        except InvalidInputError as exc:
            raise CliError(2, str(exc)) from exc
        features = scene_features(backend, scene)
    elif spec.backend == "block-matching":
        backend = make_backend("block-matching")
        if spec.frames is not None:
            frames = read_frames(_need(spec.frames, "frames"))
        elif scene is not None:
            frames, _ = render_frames(scene.config)
        else:
            raise CliError(2, "block-matching needs --frames or --scene")
        features = [backend.extract_features(img, t) for t, img in enumerate(frames)]
    else:
        raise CliError(2, f"unknown backend {spec.backend!r}")

    if spec.queries is not None:
        queries = read_queries(_need(spec.queries, "queries"))
    elif scene is not None:
        queries = scene.points0
    else:
        raise CliError(2, "--queries is required without --scene")

    width, height = features[0].width, features[0].height
    masks = None
    if spec.masks is not None:
        masks = load_mask_sequence(_need(spec.masks, "masks"))
        if masks.shape != (height, width):
            raise CliError(4, f"masks are {masks.shape[1]}x{masks.shape[0]}, frames are {width}x{height}")
        if len(masks) < len(features):
            raise CliError(4, f"{len(masks)} masks for {len(features)} frames")
    return PreparedRun(features, backend, queries, masks, scene, width, height)


def resolve_tau(spec: RunSpec, seq: PreparedRun) -> float:
    if spec.tau is None:
        return default_tau(seq.width, seq.height)
    if spec.tau != "calibrate":
        if not float(spec.tau) > 0:
            raise CliError(2, "tau must be positive")
        return float(spec.tau)
    if seq.scene is None:
        raise CliError(2, "--tau calibrate needs --scene")
    clean = dataclasses.replace(seq.scene.config, occluders=[])
    tau = calibrate_tau(
        lambda s: make_backend(spec.backend, s, sigma=spec.sigma, seed=spec.seed), [clean], 0.01
    )
    log.info("calibrated tau = %.4f px", tau)
    return max(tau, MIN_CALIBRATED_TAU)


def execute(spec: RunSpec) -> tuple[TrackRun, float, PreparedRun]:
    seq = prepare(spec)
    tau = resolve_tau(spec, seq)
    params = TrackerParams(
        kind=spec.tracker, tau=tau, n_f=spec.nf, combo_size=spec.combo_size, intervals=spec.intervals
    )
    try:
        run = run_tracker(params, seq.backend, seq.features, seq.queries, seq.masks)
    except InvalidInputError as exc:
        raise CliError(2, str(exc)) from exc
    return run, tau, seq


def trajectory_json(run: TrackRun, spec: RunSpec, tau: float) -> dict:
    return {
        "version": TRAJECTORY_VERSION,
        "generator": f"amfst {__version__}",
        "config": spec.echo(tau),
        "frames": [f.to_json() for f in run.frames],
    }


def latency_ms(run: TrackRun) -> tuple[float, float]:
    if not run.step_seconds:
        return 0.0, 0.0
    ms = np.asarray(run.step_seconds) * 1e3
    return float(ms.mean()), float(np.percentile(ms, 95))


# -- commands -------------------------------------------------------------------


def cmd_track(args) -> int:
    spec = RunSpec.from_args(args)
    run, tau, _ = execute(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, trajectory_json(run, spec, tau))
    mean, p95 = latency_ms(run)
    log.info("%s: %d frames, tau %.3f px, step latency mean %.3f ms, p95 %.3f ms",
             spec.tracker, len(run.frames), tau, mean, p95)
    return 0


def _trajectory_arrays(doc: dict) -> tuple[np.ndarray, np.ndarray]:
    frames = sorted(doc["frames"], key=lambda f: f["t"])
    pos = np.array([[(p["x"], p["y"]) for p in f["points"]] for f in frames], dtype=np.float64)
    occ = np.array([[bool(p.get("occluded", False)) for p in f["points"]] for f in frames])
    return pos, occ


def _check_aligned(pred: np.ndarray, gt: GroundTruth):
    if pred.shape != gt.positions.shape:
        raise CliError(
            4,
            f"trajectory has {pred.shape[0]} frames x {pred.shape[1]} points, "
            f"ground truth has {gt.positions.shape[0]} frames x {gt.positions.shape[1]} points",
        )


def write_curve_csv(path, curves: dict[str, list[tuple[int, float]]]) -> None:
    names = list(curves)
    ts = sorted({t for c in curves.values() for t, _ in c})
    lookup = {n: dict(c) for n, c in curves.items()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"mee_px_{n}" if len(names) > 1 else "mee_px" for n in names])
        for t in ts:
            w.writerow([t] + [repr(lookup[n][t]) if t in lookup[n] else "" for n in names])


def cmd_evaluate(args) -> int:
    traj = read_json(_need(args.trajectory, "trajectory"))
    gt = GroundTruth.from_json(read_json(_need(args.gt, "gt")))
    pred, _ = _trajectory_arrays(traj)
    _check_aligned(pred, gt)
    report = evaluate(pred, gt.positions, gt.visible, gt.occluded)
    doc = {"version": REPORT_VERSION, **report.to_json()}
    if args.out:
        write_json(args.out, doc)
    else:
        print(json.dumps(doc, indent=1))
    if args.curve:
        write_curve_csv(args.curve, {"run": report.mee_by_duration})
        plot_duration_curves({"run": report.mee_by_duration}, Path(args.curve).with_suffix(".png"))
    return 0


def cmd_synth(args) -> int:
    path = _need(args.scene, "scene")
    try:
        config = SceneConfig.from_dict(read_json(path))
        gt, scene = generate_scene(config)
    except ConfigRejected as exc:
        raise CliError(2, f"scene rejected: {exc}") from exc
    except (InvalidInputError, TypeError) as exc:
        raise CliError(2, f"bad scene config: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "scene.json", config.to_dict())
    write_json(out / "ground_truth.json", gt.to_json())
    write_queries(out / "queries.csv", scene.points0)
    write_sequence(out / "masks", (m.astype(np.uint8) * 255 for m in gt.masks))
    if not args.no_render:
        frames, _ = render_frames(config, gt)
        write_sequence(out / "frames", frames)
    log.info("scene written to %s (%d frames, %d points)", out, config.frame_count, len(scene.points0))
    return 0


def cmd_init_queries(args) -> int:
    left = read_gray(_need(args.left, "left"))
    right = read_gray(_need(args.right, "right"))
    if left.shape != right.shape:
        raise CliError(4, f"stereo pair sizes differ: {left.shape} vs {right.shape}")
    dmap = compute_disparity(left, right, max_disp=args.max_disp)
    if args.disparity_range:
        lo, hi = args.disparity_range
    else:
        try:
            lo, hi = auto_disparity_range(dmap)
        except InvalidInputError as exc:
            raise CliError(5, f"{exc}; pass --disparity-range manually") from exc
        if not lo < hi:
            raise CliError(5, f"auto disparity range [{lo}, {hi}] is empty; pass --disparity-range manually")
    print(f"disparity range: {float(lo)!r} {float(hi)!r}")
    try:
        fg = threshold_foreground(dmap, lo, hi)
    except InvalidInputError as exc:
        raise CliError(2, str(exc)) from exc
    if len(fg) == 0:
        raise CliError(5, "no foreground pixels in the disparity range; pass --disparity-range manually")
    if args.k > len(fg):
        raise CliError(5, f"k={args.k} exceeds the {len(fg)} foreground pixels; lower k or widen the range")
    if len(fg) > MAX_MEDOID_POINTS:
        fg = fg[np.linspace(0, len(fg) - 1, MAX_MEDOID_POINTS).round().astype(int)]
    write_queries(args.out, kmedoids(fg, args.k))
    return 0


def cmd_compare(args) -> int:
    base = RunSpec.from_args(args)
    if args.runs:
        entries = read_json(_need(args.runs, "runs"))
        specs = [RunSpec.from_dict(e, base) for e in entries]
    else:
        specs = [dataclasses.replace(base, tracker=t) for t in (args.tracker_list or TRACKERS)]
    scenes = {s.scene for s in specs}
    if len(scenes) != 1:
        raise CliError(4, f"runs use different scenes: {sorted(map(str, scenes))}")

    gt = None
    if args.gt:
        gt = GroundTruth.from_json(read_json(_need(args.gt, "gt")))
    elif base.scene is not None or specs[0].scene is not None:
        _, gt, _ = _load_scene(specs[0])
    if gt is None:
        raise CliError(2, "compare needs --gt or --scene")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, curves, seen = [], {}, {}
    for spec in specs:
        run, tau, _ = execute(spec)
        pred = run.positions
        _check_aligned(pred, gt)
        report = evaluate(pred, gt.positions, gt.visible, gt.occluded)
        seen[spec.tracker] = seen.get(spec.tracker, 0) + 1
        label = spec.tracker if seen[spec.tracker] == 1 else f"{spec.tracker}#{seen[spec.tracker]}"
        mean, p95 = latency_ms(run)
        rows.append({
            "method": label,
            "tau_px": tau,
            "mee_px": report.mee,
            "mcd_px": report.mcd,
            "delta_avg": report.delta_avg,
            "delta64_occluded": report.delta64_occluded,
            "latency_ms_mean": mean,
            "latency_ms_p95": p95,
        })
        curves[label] = report.mee_by_duration

    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    write_curve_csv(out / "curves.csv", curves)
    plot_duration_curves(curves, out / "mee_over_duration.png", title="MEE over clip duration")
    write_json(out / "report.json", {"version": REPORT_VERSION, "rows": rows,
                                     "mee_by_duration": {k: [[t, v] for t, v in c] for k, c in curves.items()}})
    for r in rows:
        print(f"{r['method']:>10}  MEE {r['mee_px']:8.3f}  MCD {r['mcd_px']:8.3f}  "
              f"d_avg {r['delta_avg']:.3f}  {r['latency_ms_mean']:.2f} ms/frame")
    return 0


# -- parser ---------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser, tracker_repeat: bool = False):
    if tracker_repeat:
        p.add_argument("--tracker", dest="tracker_list", action="append", choices=TRACKERS,
                       help="tracker to include; repeat for several (default: all)")
    else:
        p.add_argument("--tracker", choices=TRACKERS, default="amfst")
    p.add_argument("--backend", choices=("oracle", "oracle-noisy", "block-matching"), default=None)
    p.add_argument("--tau", type=_tau_arg, default=None,
                   help="EPE occlusion threshold in px, or 'calibrate' (default: 2 px at 512x512)")
    p.add_argument("--nf", type=int, default=None, help="reliable frames kept by amfst")
    p.add_argument("--combo-size", type=int, default=None, help="frames selected per step (default nf)")
    p.add_argument("--intervals", type=_intervals, default=None, help="mfst offsets, e.g. 1,2,4,8,16,32")
    p.add_argument("--sigma", type=float, default=None, help="noise std for oracle-noisy (px)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scene", help="scene config JSON")
    p.add_argument("--frames", help="directory of numbered PNG frames")
    p.add_argument("--masks", help="directory of numbered PNG instrument masks")
    p.add_argument("--queries", help="CSV of query points with header x,y")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amfst", description="Occlusion-aware sparse point tracking.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="track query points through a sequence")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="trajectory JSON")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="score a trajectory against ground truth")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="report JSON (default: stdout)")
    p.add_argument("--curve", help="CSV of MEE per frame; a PNG plot is written alongside")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    p.add_argument("--scene", required=True, help="scene config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-render", action="store_true", help="skip rendering frames")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-queries", help="pick instrument query points from a stereo pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--disparity-range", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--max-disp", type=int, default=64)
    p.add_argument("--out", required=True, help="queries CSV")
    p.set_defaults(func=cmd_init_queries)

    p = sub.add_parser("compare", help="run several trackers on one scene and tabulate")
    _add_run_flags(p, tracker_repeat=True)
    p.add_argument("--runs", help="JSON list of run configs overriding the shared flags")
    p.add_argument("--gt", help="ground truth JSON (default: regenerate from --scene)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (InvalidInputError, ConfigRejected) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
