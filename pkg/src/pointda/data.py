"""Synthetic dot-crowd domains and the on-disk dataset layout.

Layout written by :func:`generate_domain_pair` and read by :func:`load_dataset`::

    <root>/manifest.json
    <root>/source/images/<id>.png
    <root>/source/annotations/<id>.json      {"points": [[x, y], ...]}
    <root>/target/images/<id>.png
    <root>/target/eval_labels/<id>.json      scoring only, never seen by training

Point coordinates are pixels with the origin at the centre of the top-left
pixel; a valid point satisfies ``0 <= x <= w - 1`` and ``0 <= y <= h - 1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import (
    AnnotationParseError,
    DatasetIntegrityError,
    InvalidArgumentError,
    MissingLabelsError,
    PlacementError,
)
from .geometry import PointSet

FORMAT_VERSION = "1"
BACKGROUNDS = ("flat", "gradient", "noise-texture")
PROFILES = ("gaussian", "ring")
MIN_SEPARATION = 2.0
BLOB_AMPLITUDE = 0.7


@dataclass(frozen=True)
class SceneParams:
    image_size: int = 128
    count_range: tuple[int, int] = (5, 15)
    dot_radius_range: tuple[float, float] = (2.0, 3.0)
    background: str = "flat"
    illumination: float = 1.0
    blob_profile: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "count_range", tuple(int(c) for c in self.count_range))
        object.__setattr__(self, "dot_radius_range", tuple(float(r) for r in self.dot_radius_range))
        lo, hi = self.count_range
        rlo, rhi = self.dot_radius_range
        problems = []
        if self.image_size < 1:
            problems.append("image_size must be positive")
        if not 0 <= lo <= hi:
            problems.append(f"count_range must satisfy 0 <= min <= max, got {self.count_range}")
        if not 1 <= rlo <= rhi:
            problems.append(f"dot_radius_range must satisfy 1 <= min <= max, got {self.dot_radius_range}")
        if not self.illumination > 0:
            problems.append(f"illumination gain must be > 0, got {self.illumination}")
        if self.background not in BACKGROUNDS:
            problems.append(f"background must be one of {BACKGROUNDS}, got {self.background!r}")
        if self.blob_profile not in PROFILES:
            problems.append(f"blob_profile must be one of {PROFILES}, got {self.blob_profile!r}")
        if problems:
            raise InvalidArgumentError("; ".join(problems))


DEFAULT_SOURCE = SceneParams(dot_radius_range=(2.0, 3.0), background="flat", illumination=1.0, seed=1)
DEFAULT_TARGET = SceneParams(dot_radius_range=(4.0, 6.0), background="noise-texture", illumination=0.6, seed=2)


@dataclass(frozen=True)
class DomainPairSpec:
    source: SceneParams = DEFAULT_SOURCE
    target: SceneParams = DEFAULT_TARGET

    @property
    def shift_axes(self) -> list[str]:
        return [
            f.name
            for f in fields(SceneParams)
            if f.name != "seed" and getattr(self.source, f.name) != getattr(self.target, f.name)
        ]

    def validate(self):
        if not self.shift_axes:
            raise InvalidArgumentError("source and target scene parameters are identical; no domain shift")


@dataclass
class Sample:
    image: np.ndarray  # (rows, cols, 3) uint8
    points: PointSet | None
    domain: str  # "source" | "target"
    id: str
    meta: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    @property
    def height(self) -> int:
        return int(self.image.shape[0])


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1)
    k = np.exp(-(t**2) / (2 * sigma**2))
    k /= k.sum()
    img = np.apply_along_axis(lambda r: np.convolve(np.pad(r, radius, mode="reflect"), k, "valid"), 0, img)
    return np.apply_along_axis(lambda r: np.convolve(np.pad(r, radius, mode="reflect"), k, "valid"), 1, img)


def _background(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "flat":
        return np.full((size, size), 0.25)
    if kind == "gradient":
        return np.tile(np.linspace(0.1, 0.45, size), (size, 1))
    noise = _blur(rng.standard_normal((size, size)), sigma=2.0)
    noise /= noise.std() + 1e-12
    return 0.3 + 0.12 * noise


def _place_centers(n: int, size: int, rng: np.random.Generator, max_tries: int = 200) -> np.ndarray:
    centers = np.zeros((0, 2))
    budget = max_tries * max(n, 1)
    while len(centers) < n:
        if budget == 0:
            raise PlacementError(
                f"placed only {len(centers)} of {n} centres in a {size}px image; lower count_range or raise image_size"
            )
        budget -= 1
        c = rng.uniform(0, size - 1, size=2)
        if len(centers) and np.min(np.hypot(*(centers - c).T)) < MIN_SEPARATION:
            continue
        centers = np.vstack([centers, c])
    return centers


def _render_blobs(centers, radii, profile: str, size: int) -> np.ndarray:
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.zeros((size, size))
    for (x, y), r in zip(centers, radii):
        d2 = (cols - x) ** 2 + (rows - y) ** 2
        if profile == "gaussian":
            blob = np.exp(-d2 / (2 * (r / 2) ** 2))
        else:
            blob = np.exp(-((np.sqrt(d2) - 0.6 * r) ** 2) / (2 * (r / 4) ** 2))
        out = np.maximum(out, blob)
    return BLOB_AMPLITUDE * out


def generate_scene(params: SceneParams, rng=None, sample_id: str = "scene", domain: str = "source") -> Sample:
    """Render one scene; deterministic in ``rng`` (defaults to ``params.seed``)."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(params.seed if rng is None else rng)
    size = params.image_size
    n = int(rng.integers(params.count_range[0], params.count_range[1] + 1))
    centers = _place_centers(n, size, rng)
    radii = rng.uniform(*params.dot_radius_range, size=n)
    bg = _background(params.background, size, rng)
    lum = np.clip(params.illumination * (bg + _render_blobs(centers, radii, params.blob_profile, size)), 0, 1)
    tint = np.array([1.0, 0.95, 0.9])
    image = np.round(lum[..., None] * tint * 255).astype(np.uint8)
    return Sample(
        image=image,
        points=PointSet(centers),
        domain=domain,
        id=sample_id,
        meta={"radii": radii.tolist()},
    )


def _write_json(path: Path, payload) -> None:
    try:
        path.write_text(json.dumps(payload))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def generate_domain_pair(spec: DomainPairSpec, n_source: int, n_target: int, out_dir) -> Path:
    spec.validate()
    root = Path(out_dir)
    dirs = {
        "source": ["images", "annotations"],
        "target": ["images", "eval_labels"],
    }
    for domain, subdirs in dirs.items():
        for sub in subdirs:
            (root / domain / sub).mkdir(parents=True, exist_ok=True)
    scene_log = {}
    for domain, params, count in (("source", spec.source, n_source), ("target", spec.target, n_target)):
        label_dir = "annotations" if domain == "source" else "eval_labels"
        seeds = np.random.SeedSequence(params.seed).spawn(count)
        log = []
        for idx, seq in enumerate(seeds):
            sid = f"{domain[0]}{idx:05d}"
            sample = generate_scene(params, np.random.default_rng(seq), sid, domain)
            img_path = root / domain / "images" / f"{sid}.png"
            try:
                Image.fromarray(sample.image).save(img_path)
            except OSError as exc:
                raise OSError(f"cannot write {img_path}: {exc}") from exc
            _write_json(root / domain / label_dir / f"{sid}.json", {"points": sample.points.points.tolist()})
            log.append({"id": sid, "count": len(sample.points), "radii": sample.meta["radii"]})
        scene_log[domain] = log
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": {"source": asdict(spec.source), "target": asdict(spec.target)},
        "shift_axes": spec.shift_axes,
        "counts": {"source": n_source, "target": n_target},
    }
    _write_json(root / "manifest.json", manifest)
    _write_json(root / "scene_log.json", scene_log)
    return root


def read_annotation(path: Path, width: int | None = None, height: int | None = None) -> PointSet:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DatasetIntegrityError(f"missing annotation file {path}") from None
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    try:
        pts = PointSet.from_list(payload["points"])
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationParseError(f"{path}: expected {{\"points\": [[x, y], ...]}} ({exc})") from None
    if width is not None and height is not None and len(pts):
        x, y = pts.points[:, 0], pts.points[:, 1]
        bad = (x < 0) | (x > width - 1) | (y < 0) | (y > height - 1)
        if bad.any():
            first = tuple(pts.points[np.argmax(bad)])
            raise DatasetIntegrityError(f"{path}: point {first} lies outside the {width}x{height} image")
    return pts


class PointDataset:
    """Lazily loaded samples of one domain split.

    ``split="train"`` on the target domain never exposes points; labels of
    the target domain are reachable only through ``split="eval"``.
    """

    def __init__(self, root, domain: str, split: str = "train", cache: bool = True):
        if domain not in ("source", "target"):
            raise InvalidArgumentError(f"domain must be 'source' or 'target', got {domain!r}")
        if split not in ("train", "eval"):
            raise InvalidArgumentError(f"split must be 'train' or 'eval', got {split!r}")
        self.root = Path(root)
        self.domain = domain
        self.split = split
        image_dir = self.root / domain / "images"
        if not image_dir.is_dir():
            raise DatasetIntegrityError(f"missing image directory {image_dir}")
        self.paths = sorted(image_dir.glob("*.png"))
        if domain == "source":
            self.label_dir = self.root / "source" / "annotations"
        elif split == "eval":
            self.label_dir = self.root / "target" / "eval_labels"
        else:
            self.label_dir = None
        if self.label_dir is not None:
            missing = [p.name for p in self.paths if not (self.label_dir / f"{p.stem}.json").exists()]
            if missing:
                raise DatasetIntegrityError(f"no annotation in {self.label_dir} for: {', '.join(missing)}")
        self._cache = {} if cache else None

    @property
    def labeled(self) -> bool:
        return self.label_dir is not None

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, idx: int) -> Sample:
        if self._cache is not None and idx in self._cache:
            return self._cache[idx]
        path = self.paths[idx]
        with Image.open(path) as im:
            image = np.asarray(im.convert("RGB"))
        points = None
        if self.label_dir is not None:
            points = read_annotation(self.label_dir / f"{path.stem}.json", image.shape[1], image.shape[0])
        sample = Sample(image=image, points=points, domain=self.domain, id=path.stem)
        if self._cache is not None:
            self._cache[idx] = sample
        return sample

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def require_labels(self):
        if not self.labeled:
            raise MissingLabelsError(f"{self.domain}/{self.split} split carries no labels")


def load_dataset(root, domain: str, split: str = "train", cache: bool = True) -> PointDataset:
    return PointDataset(root, domain, split, cache)


@dataclass(frozen=True)
class AugConfig:
    crop_size: int = 128
    flip_prob: float = 0.5


def augment(sample: Sample, cfg: AugConfig, rng: np.random.Generator) -> Sample:
    """Random crop to ``crop_size`` then horizontal flip with ``flip_prob``.

    A point survives the crop iff ``x0 <= x < x0 + crop`` (same for y); the
    flip maps ``x`` to ``(w - 1) - x``.
    """
    h, w = sample.image.shape[:2]
    c = cfg.crop_size
    if c > w or c > h:
        raise InvalidArgumentError(f"crop_size {c} exceeds image size {w}x{h}")
    x0 = int(rng.integers(0, w - c + 1))
    y0 = int(rng.integers(0, h - c + 1))
    flip = bool(rng.random() < cfg.flip_prob)
    return crop_flip(sample, x0, y0, c, flip)


def crop_flip(sample: Sample, x0: int, y0: int, crop: int, flip: bool) -> Sample:
    image = sample.image[y0 : y0 + crop, x0 : x0 + crop]
    points = None
    if sample.points is not None:
        pts = sample.points.points
        keep = (pts[:, 0] >= x0) & (pts[:, 0] < x0 + crop) & (pts[:, 1] >= y0) & (pts[:, 1] < y0 + crop)
        pts = pts[keep] - (x0, y0)
        if flip:
            pts = pts.copy()
            pts[:, 0] = (crop - 1) - pts[:, 0]
        points = PointSet(pts)
    if flip:
        image = image[:, ::-1]
    return replace(sample, image=np.ascontiguousarray(image), points=points)


def to_tensor_batch(images: Sequence[np.ndarray]):
    """Stack ``(rows, cols, 3)`` uint8 images into a float ``(B, 3, rows, cols)`` tensor in [0, 1]."""
    import torch

    arr = np.stack(images).astype(np.float32) / 255.0
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()
