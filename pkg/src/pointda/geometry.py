"""Anchor lattice and the offset <-> pixel coordinate mapping.

Axis conventions used throughout the package:

* A point is ``(x, y)`` in pixels, origin at the top-left pixel centre,
  ``x`` along columns and ``y`` along rows.
* Prediction maps are indexed ``[i, j, k, c]`` with ``i`` the column cell
  (``0 <= i < W``), ``j`` the row cell, ``k`` the slot inside the cell and
  ``c`` the component. Offset component 0 moves along ``x``, component 1
  along ``y``. Leading batch dimensions are allowed.
* Images are stored row-major, ``(rows, cols, 3)``.

A slot in cell ``(i, j)`` with offsets ``(di, dj)`` sits at
``(s * (i + di), s * (j + dj))``. Offsets are measured from the cell's
top-left corner, not its centre, and decoded points are never clipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import InvalidArgumentError, OutOfRangeError


@dataclass(frozen=True)
class AnchorGrid:
    feat_w: int
    feat_h: int
    slots_per_cell: int
    stride: int
    image_w: int
    image_h: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.feat_w, self.feat_h, self.slots_per_cell)

    @property
    def num_slots(self) -> int:
        return self.feat_w * self.feat_h * self.slots_per_cell

    def slot_cell(self, slot_index: int) -> tuple[int, int]:
        """Cell ``(i, j)`` of a flattened slot index (``i``-major, then ``j``, then ``k``)."""
        i, rem = divmod(int(slot_index), self.feat_h * self.slots_per_cell)
        return i, rem // self.slots_per_cell


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray  # (N, 2) float64, columns x, y
    confidences: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.confidences is not None:
            conf = np.asarray(self.confidences, dtype=np.float64).reshape(-1)
            if conf.shape[0] != pts.shape[0]:
                raise InvalidArgumentError("one confidence per point required")
            if np.any((conf < 0) | (conf > 1)):
                raise InvalidArgumentError("confidences must lie in [0, 1]")
            object.__setattr__(self, "confidences", conf)

    @classmethod
    def from_list(cls, points: Sequence[Sequence[float]], confidences=None) -> "PointSet":
        return cls(np.asarray(points, dtype=np.float64).reshape(-1, 2), confidences)

    def __len__(self) -> int:
        return int(self.points.shape[0])


def build_anchor_grid(image_w: int, image_h: int, stride: int = 8, slots_per_cell: int = 4) -> AnchorGrid:
    args = {"image_w": image_w, "image_h": image_h, "stride": stride, "slots_per_cell": slots_per_cell}
    for name, value in args.items():
        if isinstance(value, bool) or int(value) != value or value < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {value!r}")
    image_w, image_h, stride, slots_per_cell = (int(v) for v in args.values())
    return AnchorGrid(
        feat_w=math.ceil(image_w / stride),
        feat_h=math.ceil(image_h / stride),
        slots_per_cell=slots_per_cell,
        stride=stride,
        image_w=image_w,
        image_h=image_h,
    )


def _cell_indices(grid: AnchorGrid, like):
    if isinstance(like, torch.Tensor):
        i = torch.arange(grid.feat_w, dtype=like.dtype, device=like.device)
        j = torch.arange(grid.feat_h, dtype=like.dtype, device=like.device)
    else:
        i = np.arange(grid.feat_w, dtype=np.float64)
        j = np.arange(grid.feat_h, dtype=np.float64)
    return i[:, None, None], j[None, :, None]


def decode_points(offsets, grid: AnchorGrid):
    """Map an offset map ``(..., W, H, D, 2)`` to pixel coordinates of the same shape.

    Works on numpy arrays and torch tensors; for tensors the result stays on
    the autograd graph.
    """
    if tuple(offsets.shape[-4:]) != (*grid.shape, 2):
        raise InvalidArgumentError(
            f"offset map shape {tuple(offsets.shape)} does not end with {(*grid.shape, 2)}"
        )
    i, j = _cell_indices(grid, offsets)
    x = grid.stride * (i + offsets[..., 0])
    y = grid.stride * (j + offsets[..., 1])
    if isinstance(offsets, torch.Tensor):
        return torch.stack((x, y), dim=-1)
    return np.stack((x, y), axis=-1)


def encode_offsets(target, cell, grid: AnchorGrid, tol: float = 1e-12) -> tuple[float, float]:
    """Inverse of :func:`decode_points` for one point and one cell."""
    x, y = float(target[0]), float(target[1])
    i, j = int(cell[0]), int(cell[1])
    di = x / grid.stride - i
    dj = y / grid.stride - j
    if abs(di) > 1 + tol or abs(dj) > 1 + tol:
        raise OutOfRangeError(
            f"point ({x}, {y}) is not reachable from cell ({i}, {j}) at stride {grid.stride}"
        )
    return di, dj


def home_cell(point, grid: AnchorGrid) -> tuple[int, int]:
    """The cell whose window ``[s*i, s*(i+1))`` contains ``point``, clamped to the grid."""
    i = min(max(int(math.floor(point[0] / grid.stride)), 0), grid.feat_w - 1)
    j = min(max(int(math.floor(point[1] / grid.stride)), 0), grid.feat_h - 1)
    return i, j
