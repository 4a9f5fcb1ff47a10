"""Counting metrics and qualitative artifacts.

``mse`` is the crowd-counting convention: the *root* of the mean squared
count error, so ``mae <= mse`` always holds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image, ImageDraw

from .data import PointDataset, Sample, to_tensor_batch
from .errors import InvalidArgumentError
from .geometry import AnchorGrid, PointSet, decode_points
from .losses import entropy_loss, entropy_map
from .network import PointProposalNet, PredictionMaps

METRICS_HEADER = ["dataset", "split", "step", "n_images", "mae", "mse", "mean_entropy"]
PER_IMAGE_HEADER = ["id", "gt_count", "pred_count", "confidence_mean"]


@dataclass
class ImageRow:
    id: str
    gt_count: int
    pred_count: int
    confidence_mean: float


@dataclass
class MetricsRecord:
    dataset: str
    split: str
    n_images: int
    mae: float
    mse: float
    mean_entropy: float
    rows: list[ImageRow] = field(default_factory=list)
    step: int = 0

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in METRICS_HEADER}


def extract_points(maps: PredictionMaps, grid: AnchorGrid, threshold: float = 0.5) -> PointSet:
    """Decode every slot whose positive probability reaches ``threshold`` (single image, no NMS)."""
    if not 0 < threshold < 1:
        raise InvalidArgumentError(f"threshold must lie in (0, 1), got {threshold}")
    offsets = maps.offsets.detach().cpu().double().numpy() if torch.is_tensor(maps.offsets) else np.asarray(maps.offsets)
    cls = maps.cls.detach().cpu().double().numpy() if torch.is_tensor(maps.cls) else np.asarray(maps.cls)
    pos = cls[..., 0]
    keep = pos >= threshold
    pts = decode_points(offsets, grid)[keep]
    return PointSet(pts, np.clip(pos[keep], 0.0, 1.0))


def count_metrics(pred_counts: Sequence[int], gt_counts: Sequence[int]) -> tuple[float, float]:
    if len(pred_counts) != len(gt_counts):
        raise InvalidArgumentError(f"{len(pred_counts)} predictions vs {len(gt_counts)} ground truths")
    if not len(pred_counts):
        raise InvalidArgumentError("count_metrics needs at least one image")
    err = np.asarray(pred_counts, dtype=np.float64) - np.asarray(gt_counts, dtype=np.float64)
    return float(np.mean(np.abs(err))), float(math.sqrt(np.mean(err**2)))


@torch.no_grad()
def predict(model: PointProposalNet, images: Sequence[np.ndarray], batch_size: int = 16) -> PredictionMaps:
    """Forward same-sized uint8 images in mini-batches on a frozen model."""
    was_training = model.training
    model.eval()
    offs, clss = [], []
    try:
        for start in range(0, len(images), batch_size):
            maps = model(to_tensor_batch(images[start : start + batch_size]))
            offs.append(maps.offsets)
            clss.append(maps.cls)
    finally:
        model.train(was_training)
    return PredictionMaps(torch.cat(offs), torch.cat(clss))


def evaluate(model: PointProposalNet, dataset: PointDataset, threshold: float = 0.5, step: int = 0, name: str = "") -> MetricsRecord:
    dataset.require_labels()
    entropies = []
    # Group by image size so batching never mixes shapes.
    by_size: dict[tuple[int, int], list[Sample]] = {}
    for sample in dataset:
        by_size.setdefault(sample.image.shape[:2], []).append(sample)
    results = {}
    for (h, w), samples in by_size.items():
        grid = model.grid_for(h, w)
        maps = predict(model, [s.image for s in samples])
        for n, sample in enumerate(samples):
            m = maps[n]
            pts = extract_points(m, grid, threshold)
            conf = float(pts.confidences.mean()) if len(pts) else 0.0
            results[sample.id] = ImageRow(sample.id, len(sample.points), len(pts), conf)
            entropies.append(float(entropy_loss(m.cls)))
    rows = [results[s_id] for s_id in sorted(results)]
    mae, mse = count_metrics([r.pred_count for r in rows], [r.gt_count for r in rows])
    return MetricsRecord(
        dataset=name or str(dataset.root),
        split=f"{dataset.domain}_{dataset.split}",
        n_images=len(rows),
        mae=mae,
        mse=mse,
        mean_entropy=float(np.mean(entropies)),
        rows=rows,
        step=step,
    )


def threshold_sweep(model, dataset, thresholds: Sequence[float], step: int = 0, name: str = "") -> list[MetricsRecord]:
    """Score ``dataset`` at each threshold; records are named ``<name>@<threshold>``."""
    name = name or str(dataset.root)
    return [evaluate(model, dataset, t, step=step, name=f"{name}@{t:g}") for t in thresholds]


def write_metrics_csv(path, records: Sequence[MetricsRecord], append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        if new:
            writer.writeheader()
        for rec in records:
            writer.writerow(rec.as_row())


def write_per_image_csv(path, record: MetricsRecord) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PER_IMAGE_HEADER)
        for r in record.rows:
            writer.writerow([r.id, r.gt_count, r.pred_count, f"{r.confidence_mean:.6f}"])


PRED_COLOR = (255, 40, 40)
GT_COLOR = (40, 255, 40)


def _draw_points(draw: ImageDraw.ImageDraw, pts: np.ndarray, color, size: int) -> None:
    for x, y in pts:
        draw.line([(x - size, y), (x + size, y)], fill=color)
        draw.line([(x, y - size), (x, y + size)], fill=color)


def entropy_heatmap(maps: PredictionMaps, grid: AnchorGrid) -> np.ndarray:
    """Per-window max slot entropy as uint8 ``(H*s, W*s)``; 0 = certain, 255 = 1 bit."""
    ent = entropy_map(maps.cls.detach().double()).amax(dim=-1).cpu().numpy()  # (W, H)
    pixels = np.round(np.clip(ent, 0.0, 1.0) * 255).astype(np.uint8).T
    return np.kron(pixels, np.ones((grid.stride, grid.stride), dtype=np.uint8))


def render_artifacts(model: PointProposalNet, sample: Sample, out_dir, threshold: float = 0.5) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = sample.image.shape[:2]
    grid = model.grid_for(h, w)
    maps = predict(model, [sample.image])[0]
    pred = extract_points(maps, grid, threshold)
    canvas = Image.fromarray(sample.image).convert("RGB")
    draw = ImageDraw.Draw(canvas)
    if sample.points is not None:
        _draw_points(draw, sample.points.points, GT_COLOR, 2)
    _draw_points(draw, pred.points, PRED_COLOR, 2)
    overlay_path = out / f"{sample.id}_overlay.png"
    entropy_path = out / f"{sample.id}_entropy.png"
    canvas.save(overlay_path)
    Image.fromarray(entropy_heatmap(maps, grid), mode="L").save(entropy_path)
    return overlay_path, entropy_path
