"""Pure-Python/numpy backend, used when the compiled extension is unavailable."""
import numpy as np


def solve_rows(cost):
    """Assign every row to a distinct column minimising the total cost.

    Same shortest-augmenting-path algorithm as the compiled kernel; the
    column scan is vectorised but visits candidates in the same order, so the
    two backends agree exactly, ties included.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.intp)
    way = np.zeros(m + 1, dtype=np.intp)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = np.flatnonzero(~used[1:]) + 1
            cur = cost[i0 - 1, free - 1] - u[i0] - v[free]
            better = cur < minv[free]
            minv[free[better]] = cur[better]
            way[free[better]] = j0
            pos = int(np.argmin(minv[free]))
            delta = minv[free[pos]]
            j1 = int(free[pos])
            used_idx = np.flatnonzero(used)
            u[p[used_idx]] += delta
            v[used_idx] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break

    col = np.empty(n, dtype=np.int64)
    rows = p[1:]
    assigned = np.flatnonzero(rows)
    col[rows[assigned] - 1] = assigned
    return col
