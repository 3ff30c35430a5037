"""File formats: PNG frames and masks, query CSVs, JSON documents."""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError

_LUMA = np.array([0.299, 0.587, 0.114])


def read_gray(path) -> np.ndarray:
    """Read a PNG as float64 intensities; colour images are reduced by luma."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr[..., :3].astype(np.float64) @ _LUMA
    return arr.astype(np.float64)


def write_png(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, optimize=False)


def numbered_pngs(directory) -> dict[int, Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    out = {}
    for p in directory.iterdir():
        m = re.fullmatch(r"(\d+)\.png", p.name, flags=re.IGNORECASE)
        if m:
            out[int(m.group(1))] = p
    return out


def contiguous(files: dict[int, Path], what: str) -> list[Path]:
    if not files:
        raise InvalidInputError(f"no numbered PNG {what} found")
    missing = sorted(set(range(max(files) + 1)) - set(files))
    if missing:
        raise InvalidInputError(f"{what} sequence has a gap: missing frame {missing[0]:03d}")
    return [files[i] for i in range(len(files))]


def read_frames(directory) -> list[np.ndarray]:
    frames = [read_gray(p) for p in contiguous(numbered_pngs(directory), "frame")]
    if len({f.shape for f in frames}) != 1:
        raise InvalidInputError("frames differ in size")
    return frames


def write_sequence(directory, images) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, img in enumerate(images):
        write_png(directory / f"{t:03d}.png", img)


def read_queries(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y"} <= set(reader.fieldnames):
            raise InvalidInputError(f"{path}: expected a header with columns x,y")
        pts = [(float(row["x"]), float(row["y"])) for row in reader]
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


def write_queries(path, points) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y"])
        for x, y in np.asarray(points, dtype=np.float64).reshape(-1, 2):
            writer.writerow([repr(float(x)), repr(float(y))])


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=False)
        fh.write("\n")
