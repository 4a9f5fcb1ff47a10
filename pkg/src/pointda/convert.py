"""Convert external point-annotation formats into the package's JSON layout.

Each converter turns one input file into an ``(N, 2)`` array of ``(x, y)``
pixel coordinates. Third-party formats plug in either with
:func:`register_converter` or through the ``pointda.converters`` entry-point
group (value: a callable ``path -> array``).
"""
from __future__ import annotations

import csv
import json
from importlib.metadata import entry_points
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import AnnotationParseError, InvalidArgumentError

Converter = Callable[[Path], np.ndarray]
CONVERTERS: dict[str, tuple[Converter, str]] = {}
ENTRY_POINT_GROUP = "pointda.converters"


def register_converter(name: str, pattern: str = "*"):
    def deco(fn: Converter) -> Converter:
        CONVERTERS[name] = (fn, pattern)
        return fn

    return deco


@register_converter("points-json", "*.json")
def _points_json(path: Path) -> np.ndarray:
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if isinstance(payload, dict):
        payload = payload.get("points", payload.get("annotations"))
    return np.asarray(payload, dtype=np.float64).reshape(-1, 2)


@register_converter("csv", "*.csv")
def _csv(path: Path) -> np.ndarray:
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header
                raise AnnotationParseError(f"{path}: line {lineno}: expected 'x,y'") from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)


@register_converter("shtech-mat", "*.mat")
def _shtech_mat(path: Path) -> np.ndarray:
    """ShanghaiTech ``GT_IMG_n.mat``: ``image_info[0][0][0][0][0]`` holds the points."""
    try:
        from scipy.io import loadmat
    except ImportError:
        raise InvalidArgumentError("the shtech-mat converter needs scipy (pip install scipy)") from None
    mat = loadmat(path)
    return np.asarray(mat["image_info"][0][0][0][0][0], dtype=np.float64).reshape(-1, 2)


def _load_plugins() -> None:
    for ep in entry_points(group=ENTRY_POINT_GROUP):
        if ep.name not in CONVERTERS:
            CONVERTERS[ep.name] = (ep.load(), "*")


def available_formats() -> list[str]:
    _load_plugins()
    return sorted(CONVERTERS)


def convert_annotations(fmt: str, source, out_dir) -> list[Path]:
    """Convert one file or every matching file in a directory; returns written paths.

    ShanghaiTech-style ``GT_`` prefixes are dropped so output stems match the
    image stems.
    """
    _load_plugins()
    if fmt not in CONVERTERS:
        raise InvalidArgumentError(f"unknown annotation format {fmt!r}; available: {', '.join(sorted(CONVERTERS))}")
    fn, pattern = CONVERTERS[fmt]
    src = Path(source)
    files = sorted(src.glob(pattern)) if src.is_dir() else [src]
    if not files:
        raise InvalidArgumentError(f"no {pattern} files under {src}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for f in files:
        points = fn(f)
        stem = f.stem[3:] if f.stem.startswith("GT_") else f.stem
        dest = out / f"{stem}.json"
        dest.write_text(json.dumps({"points": np.asarray(points, dtype=np.float64).tolist()}))
        written.append(dest)
    return written
