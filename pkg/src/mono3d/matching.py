"""Minimum-cost bipartite assignment (Kuhn-Munkres) with a canonical tie-break."""

from __future__ import annotations

from collections import deque

import numpy as np

PAD_COST = 1.0


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve a square assignment problem with potentials.

    Returns ``(row_of_col, u, v)`` where ``row_of_col[j]`` is the row assigned
    to column j and ``u``/``v`` are feasible duals: ``cost[i, j] >= u[i] + v[j]``
    with equality on every assigned pair.
    """
    n = cost.shape[0]
    INF = float("inf")
    # 1-based arrays; index 0 is the virtual root of each augmenting search
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    a = cost.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            row = a[i0 - 1]
            ui0 = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_of_col = np.array([p[j] - 1 for j in range(1, n + 1)], dtype=int)
    return row_of_col, np.array(u[1:]), np.array(v[1:])


def _can_rematch(tight, free_rows, free_cols, match_col_of_row, match_row_of_col, start_row, target_col):
    """Alternating-path search from ``start_row`` to ``target_col`` over free vertices.

    On success the matching is rewritten along the path and True returned.
    """
    parent = {start_row: None}
    queue = deque([start_row])
    while queue:
        r = queue.popleft()
        for c in free_cols:
            if not tight[r, c]:
                continue
            if c == target_col:
                # augment back along the path
                while r is not None:
                    prev_c = match_col_of_row[r]
                    match_col_of_row[r] = c
                    match_row_of_col[c] = r
                    c = prev_c
                    r = parent[r]
                return True
            nxt = match_row_of_col[c]
            if nxt in free_rows and nxt not in parent:
                parent[nxt] = r
                queue.append(nxt)
    return False


def _lexicographic_matching(tight: np.ndarray, row_of_col: np.ndarray) -> np.ndarray:
    """Among perfect matchings of the tight-edge graph, pick the one whose
    column-by-column row choices are lexicographically smallest."""
    n = tight.shape[0]
    match_row_of_col = {int(j): int(row_of_col[j]) for j in range(n)}
    match_col_of_row = {r: c for c, r in match_row_of_col.items()}
    free_rows = set(range(n))
    free_cols = list(range(n))
    for j in range(n):
        free_cols.remove(j)
        free_rows_order = sorted(free_rows)
        for i in free_rows_order:
            if not tight[i, j]:
                continue
            current = match_row_of_col[j]
            if current == i:
                break
            # put i on j; the displaced row must reach the column i vacates
            old_c = match_col_of_row[i]
            saved = (dict(match_col_of_row), dict(match_row_of_col))
            match_col_of_row[i] = j
            match_row_of_col[j] = i
            del match_row_of_col[old_c]
            match_col_of_row[current] = None
            rest_rows = free_rows - {i}
            if _can_rematch(tight, rest_rows, free_cols, match_col_of_row, match_row_of_col, current, old_c):
                break
            match_col_of_row, match_row_of_col = saved
        free_rows.discard(match_row_of_col[j])
    return np.array([match_row_of_col[j] for j in range(n)], dtype=int)


def min_cost_matching(cost, pad: float = PAD_COST) -> list[tuple[int, int]]:
    """Optimal one-to-one assignment between rows (predictions) and columns (targets).

    Rectangular inputs are padded to square with ``pad``. Among optimal
    assignments the one that is lexicographically smallest in
    (column, row) order is returned, so the result never depends on solver
    internals. Pairs are returned sorted by column.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2D matrix")
    P, T = cost.shape
    if P == 0 or T == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    n = max(P, T)
    square = np.full((n, n), float(pad))
    square[:P, :T] = cost
    row_of_col, u, v = hungarian(square)
    reduced = square - u[:, None] - v[None, :]
    tol = 1e-10 * max(1.0, float(np.abs(square).max()))
    tight = reduced <= tol
    rows = _lexicographic_matching(tight, row_of_col)
    return [(int(rows[j]), j) for j in range(T) if rows[j] < P]


def assignment_cost(cost, pairs) -> float:
    cost = np.asarray(cost, dtype=float)
    return float(sum(cost[i, j] for i, j in sorted(pairs)))
