import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pointda import _core
from pointda.errors import EmptyGroundTruthError, InfeasibleAssignmentError
from pointda.geometry import PointSet, build_anchor_grid, decode_points
from pointda.matching import (
    Matching,
    build_cost_matrix,
    derive_targets,
    hungarian_assign,
    match_image,
    reachable_mask,
)


def brute_force_min(costs):
    """Minimum total cost over every injective gt -> slot map."""
    n_slots, n_gt = costs.shape
    best = math.inf
    for slots in itertools.permutations(range(n_slots), n_gt):
        best = min(best, sum(costs[s, g] for g, s in enumerate(slots)))
    return best


def test_cost_single_slot():
    cost = build_cost_matrix(np.array([[0.0, 0.0]]), np.array([[0.5, 0.5]]), PointSet.from_list([[3, 4]]), 1.0)
    assert cost.tolist() == [[4.5]]


def test_cost_slot_on_gt():
    cost = build_cost_matrix(np.array([[2.0, 7.0]]), np.array([[1.0, 0.0]]), PointSet.from_list([[2, 7]]), 1.0)
    assert cost.tolist() == [[-1.0]]


def test_cost_symmetric_layout():
    # two slots and two gts mirrored about x = 5: cost[0,1] == cost[1,0]
    pts = np.array([[0.0, 0.0], [10.0, 0.0]])
    cls = np.array([[0.3, 0.7], [0.3, 0.7]])
    gt = PointSet.from_list([[1.0, 2.0], [9.0, 2.0]])
    cost = build_cost_matrix(pts, cls, gt, 0.5)
    # direct evaluation: near pair sqrt(1+4), far pair sqrt(81+4)
    near = 0.5 * math.sqrt(5) - 0.3
    far = 0.5 * math.sqrt(85) - 0.3
    np.testing.assert_allclose(cost, [[near, far], [far, near]], rtol=1e-15)
    np.testing.assert_allclose(cost, cost.T)


def test_cost_empty_gt():
    with pytest.raises(EmptyGroundTruthError):
        build_cost_matrix(np.zeros((4, 2)), np.full((4, 2), 0.5), PointSet.from_list([]))


def test_hungarian_2x2():
    m = hungarian_assign([[1, 2], [2, 1]])
    assert sorted(m.pairs) == [(0, 0), (1, 1)]
    assert m.total_cost(np.array([[1, 2], [2, 1]])) == 2


def test_hungarian_single():
    assert hungarian_assign([[5]]).pairs == [(0, 0)]


def test_hungarian_5x5_against_brute_force():
    rng = np.random.default_rng(11)
    costs = rng.integers(0, 20, (5, 5)).astype(float)
    m = hungarian_assign(costs)
    assert m.total_cost(costs) == brute_force_min(costs)


def test_hungarian_infeasible():
    with pytest.raises(InfeasibleAssignmentError):
        hungarian_assign(np.zeros((2, 3)))


def test_hungarian_no_gt():
    m = hungarian_assign(np.zeros((3, 0)))
    assert m.pairs == [] and m.unmatched_slots == [0, 1, 2]


def test_hungarian_deterministic_ties():
    m1 = hungarian_assign(np.zeros((6, 3)))
    m2 = hungarian_assign(np.zeros((6, 3)))
    assert m1.pairs == m2.pairs
    assert sorted(s for s, _ in m1.pairs) == [0, 1, 2]


@settings(max_examples=150, deadline=None)
@given(
    data=st.data(),
    n_gt=st.integers(1, 6),
    extra=st.integers(0, 2),
)
def test_oracle_equivalence(data, n_gt, extra):
    n_slots = min(n_gt + extra, 7)
    flat = data.draw(st.lists(st.integers(-20, 20), min_size=n_slots * n_gt, max_size=n_slots * n_gt))
    costs = np.array(flat, dtype=float).reshape(n_slots, n_gt)
    m = hungarian_assign(costs)
    assert m.total_cost(costs) == brute_force_min(costs)
    assert len({s for s, _ in m.pairs}) == len(m.pairs) == n_gt
    assert set(m.unmatched_slots).isdisjoint(s for s, _ in m.pairs)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_permuting_gt_keeps_cost_and_positive_set(seed):
    rng = np.random.default_rng(seed)
    costs = rng.integers(0, 9, (7, 4)).astype(float)
    perm = rng.permutation(4)
    a = hungarian_assign(costs)
    b = hungarian_assign(costs[:, perm])
    assert a.total_cost(costs) == b.total_cost(costs[:, perm])
    # positive sets can differ under ties; compare against the oracle instead
    assert b.total_cost(costs[:, perm]) == brute_force_min(costs)


def test_permuting_gt_keeps_positive_set_without_ties():
    rng = np.random.default_rng(3)
    costs = rng.normal(size=(30, 6))
    perm = rng.permutation(6)
    a = hungarian_assign(costs)
    b = hungarian_assign(costs[:, perm])
    assert {s for s, _ in a.pairs} == {s for s, _ in b.pairs}
    assa = dict((g, s) for s, g in a.pairs)
    assb = dict((g, s) for s, g in b.pairs)
    assert all(assb[n] == assa[perm[n]] for n in range(6))


def test_backends_agree():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 10))
        m = int(rng.integers(n, 40))
        c = rng.integers(0, 4, (n, m)).astype(float)
        assert np.array_equal(_core.fallback.solve_rows(c), _core.solve_rows(c))


def _grid_and_gt():
    grid = build_anchor_grid(16, 8, 8, 2)  # W=2, H=1, D=2 -> 4 slots
    return grid


def test_derive_targets_one_match():
    grid = _grid_and_gt()
    gt = PointSet.from_list([[3.0, 2.0]])
    m = Matching([(0, 0)], [1, 2, 3], grid.num_slots)
    t = derive_targets(m, gt, grid)
    cls = t.cls.reshape(-1, 2)
    assert cls.tolist() == [[1, 0], [0, 1], [0, 1], [0, 1]]
    np.testing.assert_allclose(t.loc_offsets, [[3 / 8, 2 / 8]])


def test_derive_targets_empty_gt():
    grid = _grid_and_gt()
    t = match_image(np.zeros((*grid.shape, 2)), np.full((*grid.shape, 2), 0.5), PointSet.from_list([]), grid)
    assert t.loc_offsets.shape == (0, 2)
    assert np.all(t.cls[..., 1] == 1)


def test_derive_targets_corner_zero_offset():
    grid = _grid_and_gt()
    gt = PointSet.from_list([[8.0, 0.0]])
    slot = np.ravel_multi_index((1, 0, 1), grid.shape)
    t = derive_targets(Matching([(int(slot), 0)], [], grid.num_slots), gt, grid)
    assert t.loc_offsets.tolist() == [[0.0, 0.0]]


def test_derive_targets_clamps_unreachable(caplog):
    grid = build_anchor_grid(64, 8, 8, 1)
    gt = PointSet.from_list([[40.0, 4.0]])
    t = derive_targets(Matching([(0, 0)], list(range(1, 8)), grid.num_slots), gt, grid)
    assert t.loc_offsets.tolist() == [[1.0, 0.5]]
    assert t.clamped == [0]
    assert "unreachable" in caplog.text
    np.testing.assert_allclose(t.loc_points, [[8.0, 4.0]])


def test_label_partition_and_reachability():
    rng = np.random.default_rng(0)
    grid = build_anchor_grid(64, 64, 8, 4)
    off = rng.uniform(-1, 1, (*grid.shape, 2))
    p = rng.uniform(0, 1, grid.shape)
    cls = np.stack([p, 1 - p], -1)
    gt = PointSet(rng.uniform(0, 63, (20, 2)))
    t = match_image(decode_points(off, grid), cls, gt, grid)
    labels = t.cls.reshape(-1, 2)
    assert np.all(labels.sum(1) == 1)
    assert int(labels[:, 0].sum()) == len(gt)
    assert t.clamped == []
    assert reachable_mask(grid, gt)[t.slot_indices, t.gt_indices].all()
