"""One-to-one assignment of ground-truth points to proposal slots.

Slots are flattened in ``(i, j, k)`` order, i.e. the C order of a
``(W, H, D)`` array. A matched slot is positive; every other slot is
negative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from . import _core
from .errors import EmptyGroundTruthError, InfeasibleAssignmentError, InvalidArgumentError
from .geometry import AnchorGrid, PointSet, encode_offsets

logger = logging.getLogger(__name__)

DEFAULT_DIST_WEIGHT = 0.05
UNREACHABLE_PENALTY = 1e3


@dataclass
class Matching:
    pairs: list[tuple[int, int]]  # (slot_index, gt_index), ordered by gt_index
    unmatched_slots: list[int]
    num_slots: int

    @property
    def slot_indices(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs], dtype=np.int64)

    @property
    def gt_indices(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], dtype=np.int64)

    def total_cost(self, costs) -> float:
        costs = np.asarray(costs)
        return float(sum(costs[s, g] for s, g in self.pairs))


@dataclass
class Targets:
    slot_indices: np.ndarray  # (N,) flattened positive slots
    gt_indices: np.ndarray  # (N,)
    loc_offsets: np.ndarray  # (N, 2) offset targets in [-1, 1]
    loc_points: np.ndarray  # (N, 2) pixel targets
    cls: np.ndarray  # (W, H, D, 2) one-hot (pos, neg)
    clamped: list[int] = field(default_factory=list)


def _numpy(a):
    if isinstance(a, torch.Tensor):
        return a.detach().cpu().double().numpy()
    return np.asarray(a, dtype=np.float64)


def build_cost_matrix(
    decoded_points,
    cls_map,
    gt: PointSet,
    dist_weight: float = DEFAULT_DIST_WEIGHT,
    grid: AnchorGrid | None = None,
    unreachable_penalty: float = UNREACHABLE_PENALTY,
) -> np.ndarray:
    """Cost of giving gt point ``n`` to slot ``p``: ``w * ||p_hat - p_n|| - cls_pos``.

    ``decoded_points`` and ``cls_map`` may be ``(W, H, D, 2)`` maps or flat
    ``(P, 2)`` arrays. Returns a ``(P, len(gt))`` float64 matrix. When
    ``grid`` is given, pairs whose gt point lies outside the slot cell's
    offset range get ``unreachable_penalty`` added, so they are only chosen
    when nothing reachable is left.
    """
    pts = _numpy(decoded_points).reshape(-1, 2)
    cls = _numpy(cls_map).reshape(-1, 2)
    if pts.shape[0] != cls.shape[0]:
        raise InvalidArgumentError(f"{pts.shape[0]} decoded points but {cls.shape[0]} class pairs")
    if len(gt) == 0:
        raise EmptyGroundTruthError("no ground-truth points; every slot is negative")
    diff = pts[:, None, :] - gt.points[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    cost = dist_weight * dist - cls[:, :1]
    if grid is not None:
        cost += unreachable_penalty * ~reachable_mask(grid, gt)
    return cost


def reachable_mask(grid: AnchorGrid, gt: PointSet) -> np.ndarray:
    """``(P, N)`` bool: slot's cell can place a point on gt ``n`` with offsets in [-1, 1]."""
    i, j = np.unravel_index(np.arange(grid.num_slots), grid.shape)[:2]
    u = gt.points[None, :, 0] / grid.stride - i[:, None]
    v = gt.points[None, :, 1] / grid.stride - j[:, None]
    return (np.abs(u) <= 1) & (np.abs(v) <= 1)


def hungarian_assign(costs) -> Matching:
    """Minimum-total-cost injective map from gt points (columns) to slots (rows)."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2:
        raise InvalidArgumentError(f"cost matrix must be 2-D, got shape {costs.shape}")
    num_slots, num_gt = costs.shape
    if num_gt > num_slots:
        raise InfeasibleAssignmentError(
            f"{num_gt} ground-truth points but only {num_slots} slots; raise slots_per_cell or lower the stride"
        )
    if not np.all(np.isfinite(costs)):
        raise InvalidArgumentError("cost matrix contains non-finite entries")
    if num_gt == 0:
        return Matching([], list(range(num_slots)), num_slots)
    slot_of_gt = _core.solve_rows(np.ascontiguousarray(costs.T))
    pairs = [(int(s), g) for g, s in enumerate(slot_of_gt)]
    taken = set(int(s) for s in slot_of_gt)
    unmatched = [s for s in range(num_slots) if s not in taken]
    return Matching(pairs, unmatched, num_slots)


def derive_targets(match: Matching, gt: PointSet, grid: AnchorGrid) -> Targets:
    if match.num_slots != grid.num_slots:
        raise InvalidArgumentError(f"matching covers {match.num_slots} slots, grid has {grid.num_slots}")
    cls = np.zeros((grid.num_slots, 2))
    cls[:, 1] = 1.0
    slots = match.slot_indices
    gts = match.gt_indices
    offsets = np.zeros((len(slots), 2))
    clamped = []
    for n, (slot, g) in enumerate(match.pairs):
        cell = grid.slot_cell(slot)
        point = gt.points[g]
        try:
            offsets[n] = encode_offsets(point, cell, grid)
        except ValueError:
            raw = point / grid.stride - np.asarray(cell, dtype=np.float64)
            offsets[n] = np.clip(raw, -1.0, 1.0)
            clamped.append(slot)
            logger.warning("gt point %s unreachable from cell %s; offset target clamped", tuple(point), cell)
    points = gt.points[gts].copy() if len(gts) else np.zeros((0, 2))
    for n, slot in enumerate(slots):
        if slot in clamped:
            points[n] = grid.stride * (np.asarray(grid.slot_cell(slot), dtype=np.float64) + offsets[n])
    if len(slots):
        cls[slots] = (1.0, 0.0)
    return Targets(
        slot_indices=slots,
        gt_indices=gts,
        loc_offsets=offsets,
        loc_points=points,
        cls=cls.reshape(*grid.shape, 2),
        clamped=clamped,
    )


def match_image(
    decoded_points,
    cls_map,
    gt: PointSet,
    grid: AnchorGrid,
    dist_weight: float = DEFAULT_DIST_WEIGHT,
    reachable_only: bool = True,
) -> Targets:
    """Cost matrix, assignment and targets for one image; empty gt gives all-negative targets."""
    if len(gt) == 0:
        match = Matching([], list(range(grid.num_slots)), grid.num_slots)
    else:
        costs = build_cost_matrix(decoded_points, cls_map, gt, dist_weight, grid if reachable_only else None)
        match = hungarian_assign(costs)
    return derive_targets(match, gt, grid)
