"""Minimum-weight perfect matching on the padded keypoint bipartite graph.

Rows are source keypoints, columns target keypoints. When the two sides
differ in size the smaller side is padded with virtual nodes whose edges all
carry the mismatch threshold, so a perfect matching always exists. Edges at
or above the threshold are capped to it; any selected edge with weight equal
to the threshold is a mismatch and its real endpoints end up unmatched.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray

ORACLE_MAX_N = 9


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class CostMatrix:
    values: NDArray[np.float64]
    m: int
    n: int
    threshold: float

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def penalty(self) -> float:
        """Per-unmatched-keypoint penalty; always half the threshold."""
        return self.threshold / 2.0


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]
    unmatched_source: tuple[int, ...]
    unmatched_target: tuple[int, ...]
    total_cost: float
    energy: float
    assignment: tuple[int, ...]  # column chosen for every row of the padded matrix

    @property
    def unmatched_count(self) -> int:
        return len(self.unmatched_source) + len(self.unmatched_target)


def build_cost_matrix(cd: ArrayLike, threshold: float) -> CostMatrix:
    cd = np.asarray(cd, dtype=np.float64)
    if cd.ndim != 2 or cd.shape[0] == 0 or cd.shape[1] == 0:
        raise AssignmentError("empty keypoint set")
    if not threshold > 0 or not math.isfinite(threshold):
        raise AssignmentError(f"threshold must be positive and finite, got {threshold}")
    if not np.all(np.isfinite(cd)):
        raise AssignmentError("compound distances must be finite")
    m, n = cd.shape
    size = max(m, n)
    values = np.full((size, size), float(threshold))
    block = values[:m, :n]
    mask = cd < threshold
    block[mask] = cd[mask]
    values.flags.writeable = False
    return CostMatrix(values, m, n, float(threshold))


def _result_from_assignment(cost: CostMatrix, cols) -> MatchResult:
    vals = cost.values
    rows = range(cost.size)
    total = math.fsum(vals[r, c] for r, c in zip(rows, cols))
    pairs = tuple(
        (r, int(c)) for r, c in zip(rows, cols)
        if r < cost.m and c < cost.n and vals[r, c] < cost.threshold
    )
    matched_s = {p[0] for p in pairs}
    matched_t = {p[1] for p in pairs}
    un_s = tuple(i for i in range(cost.m) if i not in matched_s)
    un_t = tuple(j for j in range(cost.n) if j not in matched_t)
    energy = match_energy(pairs, len(un_s) + len(un_t), cost.values, cost.penalty)
    return MatchResult(pairs, un_s, un_t, total, energy, tuple(int(c) for c in cols))


def match_energy(pairs, unmatched_count: int, cd: ArrayLike, penalty: float) -> float:
    """Data cost over matched pairs plus ``penalty`` per unmatched keypoint."""
    cd = np.asarray(cd)
    return math.fsum([cd[i, j] for i, j in pairs] + [penalty] * unmatched_count)


def km_solve(cost: CostMatrix) -> MatchResult:
    """Kuhn-Munkres with slack variables, O(N^3).

    Rows are inserted one at a time; each insertion grows a shortest
    augmenting path over the equality subgraph, keeping the per-column
    minimum slack so that every dual update costs O(N). Ties resolve to the
    lowest column index.
    """
    a = cost.values
    n = cost.size
    inf = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.intp)  # owner[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        slack = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            reduced = a[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (reduced < slack[1:])
            slack[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, slack[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            slack[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = np.empty(n, dtype=np.intp)
    cols[owner[1:] - 1] = np.arange(n)
    return _result_from_assignment(cost, cols)


@lru_cache(maxsize=None)
def _permutations(n: int) -> NDArray[np.intp]:
    return np.array(list(itertools.permutations(range(n))), dtype=np.intp).reshape(-1, n)


def brute_force_solve(cost: CostMatrix) -> MatchResult:
    """Exhaustive search over all N! assignments.

    Among optimal assignments the lexicographically smallest column sequence
    wins (lowest row, then lowest column).
    """
    n = cost.size
    if n > ORACLE_MAX_N:
        raise AssignmentError("oracle size limit")
    perms = _permutations(n)
    rough = cost.values[np.arange(n), perms].sum(axis=1)
    slack = 1e-9 * max(1.0, float(np.abs(rough).max()))
    best, best_cols = math.inf, None
    # permutations are in lexicographic order; exact sums decide among near-ties
    for k in np.flatnonzero(rough <= rough.min() + slack):
        exact = math.fsum(cost.values[np.arange(n), perms[k]])
        if exact < best:
            best, best_cols = exact, perms[k]
    return _result_from_assignment(cost, best_cols)


def dump_csv(cost: CostMatrix, result: MatchResult, path) -> None:
    """Write the padded matrix followed by the selected edges."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# m", cost.m, "n", cost.n, "threshold", repr(cost.threshold)])
        for row in cost.values:
            w.writerow([repr(float(x)) for x in row])
        w.writerow([])
        w.writerow(["row", "col", "weight", "status"])
        pairs = set(result.pairs)
        for r, c in enumerate(result.assignment):
            weight = cost.values[r, c]
            if (r, c) in pairs:
                status = "match"
            elif r >= cost.m or c >= cost.n:
                status = "virtual"
            else:
                status = "mismatch"
            w.writerow([r, c, repr(float(weight)), status])
