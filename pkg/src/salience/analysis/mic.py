"""Maximal information coefficient by approximate grid search.

For each row count ``ny`` the y axis is equipartitioned by rank; the x axis is
reduced to clumps (runs of x-sorted points sharing a row), merged into at most
``c * nx_max`` superclumps, and a dynamic program picks the column boundaries that
minimise H(Y|X) for every column count at once. Both orientations are searched
and the best mutual information is normalised by log(min(nx, ny)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from salience.errors import DataError


@dataclass(frozen=True)
class MICResult:
    value: float
    constant: bool = False    # an input was constant; value is 0 by convention


def _equipartition(sorted_vals: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin labels for already-sorted values: equal counts, ties never split."""
    n = sorted_vals.size
    # boundaries of tie groups
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    sizes = np.diff(np.r_[starts, n])
    return _equipartition_groups(sizes, n_bins, n)[np.repeat(np.arange(sizes.size), sizes)]


def _equipartition_groups(sizes: np.ndarray, n_bins: int, n: int) -> np.ndarray:
    """Greedy equal-mass assignment of consecutive indivisible groups to bins."""
    labels = np.empty(sizes.size, dtype=np.int64)
    desired = n / n_bins
    row, current, assigned = 0, 0, 0
    for g, size in enumerate(sizes):
        if current and abs(current + size - desired) > abs(current - desired):
            row += 1
            assigned += current
            current = 0
            remaining_bins = max(n_bins - row, 1)
            desired = (n - assigned) / remaining_bins
        labels[g] = row
        current += size
    return labels


def _superclump_counts(x: np.ndarray, rows: np.ndarray, ny: int, max_clumps: int) -> np.ndarray:
    """(m, ny) row counts per superclump along x."""
    order = np.argsort(x, kind="mergesort")
    xs, rs = x[order], rows[order]
    n = xs.size
    # tie groups in x; a group whose points span several rows stays one mixed clump
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    first = rs[starts]
    mixed = np.array([np.any(rs[a:b] != rs[a]) for a, b in zip(starts, ends)]) \
        if starts.size < n else np.zeros(n, dtype=bool)
    label = np.where(mixed, -1, first)
    new_clump = np.r_[True, (label[1:] != label[:-1]) | (label[1:] < 0) | (label[:-1] < 0)]
    clump_of_group = np.cumsum(new_clump) - 1
    group_sizes = ends - starts
    n_clumps = clump_of_group[-1] + 1
    clump_sizes = np.bincount(clump_of_group, weights=group_sizes).astype(np.int64)
    if n_clumps > max_clumps:
        super_of_clump = _equipartition_groups(clump_sizes, max_clumps, n)
    else:
        super_of_clump = np.arange(n_clumps)
    super_of_point = np.repeat(super_of_clump[clump_of_group], group_sizes)
    m = super_of_clump[-1] + 1
    counts = np.zeros((m, ny), dtype=np.int64)
    np.add.at(counts, (super_of_point, rs), 1)
    return counts


@numba.njit(cache=True)
def _min_conditional_entropy(counts, max_cols):
    """min over partitions into <= l columns of n * H(Y|X), for l = 1..max_cols."""
    m, ny = counts.shape
    cum = np.zeros((m + 1, ny))
    for k in range(m):
        for r in range(ny):
            cum[k + 1, r] = cum[k, r] + counts[k, r]
    tot = np.zeros(m + 1)
    for k in range(m + 1):
        s = 0.0
        for r in range(ny):
            s += cum[k, r]
        tot[k] = s
    # cost[s, k]: n_col * H(Y | column spanning superclumps s..k-1)
    cost = np.zeros((m + 1, m + 1))
    for s in range(m):
        for k in range(s + 1, m + 1):
            nc = tot[k] - tot[s]
            acc = 0.0
            for r in range(ny):
                c = cum[k, r] - cum[s, r]
                if c > 0:
                    acc += c * math.log(nc / c)
            cost[s, k] = acc
    L = min(max_cols, m)
    best = np.full((L + 1, m + 1), np.inf)
    for k in range(1, m + 1):
        best[1, k] = cost[0, k]
    for l in range(2, L + 1):
        for k in range(l, m + 1):
            b = best[l - 1, k]  # fewer columns is always allowed
            for s in range(l - 1, k):
                v = best[l - 1, s] + cost[s, k]
                if v < b:
                    b = v
            best[l, k] = b
    out = np.empty(max_cols + 1)
    out[0] = np.inf
    for l in range(1, max_cols + 1):
        out[l] = best[min(l, L), m]
    return out


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def _oriented(x: np.ndarray, y: np.ndarray, B: float, c: float) -> float:
    n = x.size
    y_order = np.argsort(y, kind="mergesort")
    best = 0.0
    for ny in range(2, int(B // 2) + 1):
        max_cols = int(B // ny)
        if max_cols < 2:
            break
        rows = np.empty(n, dtype=np.int64)
        rows[y_order] = _equipartition(y[y_order], ny)
        hy = _entropy(np.bincount(rows))
        counts = _superclump_counts(x, rows, int(rows.max()) + 1, int(c * max_cols))
        cond = _min_conditional_entropy(counts, max_cols)
        for nx in range(2, max_cols + 1):
            mi = hy - cond[nx] / n
            best = max(best, mi / math.log(min(nx, ny)))
    return best


def mic(x, y, alpha: float = 0.6, c: float = 15.0) -> MICResult:
    """MIC in [0, 1] with grid cap B(n) = n**alpha and ``c`` superclumps per column."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise DataError(f"mic: length mismatch {x.size} vs {y.size}")
    if x.size < 20:
        raise DataError(f"mic: need at least 20 points, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("mic: non-finite input")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return MICResult(0.0, constant=True)
    B = max(x.size ** alpha, 4.0)
    value = max(_oriented(x, y, B, c), _oriented(y, x, B, c))
    return MICResult(float(min(max(value, 0.0), 1.0)))


def mic_value(x, y, **kw) -> float:
    return mic(x, y, **kw).value
