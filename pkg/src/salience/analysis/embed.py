"""Two-dimensional neighbour embedding of representations (UMAP-family).

Pipeline: cosine k-NN graph, per-point bandwidths calibrated so each fuzzy
neighbourhood has total membership log2(k), probabilistic-union symmetrisation,
then a layout optimised by SGD on the attractive/repulsive cross-entropy with
negative sampling. ``min_dist`` shapes the low-dimensional kernel 1/(1 + a d^2b).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import sparse
from scipy.optimize import curve_fit

from salience.errors import ConfigError, DataError

LAYOUT_EXTENT = 10.0


@dataclass
class EmbeddingResult:
    points: np.ndarray                  # (n, 2)
    t: int | None = None
    agent_ids: list[str] | None = None
    previous: np.ndarray | None = None  # index of the same agent in the previous step, -1 if new

    def __post_init__(self):
        if not np.all(np.isfinite(self.points)):
            raise ConfigError("embedding produced non-finite coordinates")

    @property
    def scale(self) -> float:
        """Layout scale: diagonal of the bounding box."""
        return float(np.linalg.norm(np.ptp(self.points, axis=0)))


# ---------------------------------------------------------------- graph

def knn_cosine(X: np.ndarray, k: int, block: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """k nearest neighbours (self excluded) under cosine distance.

    All-zero rows (dead ReLU representations) are at distance 0 from each other
    and 1 from everything else.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    norms = np.linalg.norm(X, axis=1)
    zero = norms == 0
    Xn = X / np.where(zero, 1.0, norms)[:, None]
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        D = 1.0 - Xn[lo:hi] @ Xn.T
        np.clip(D, 0.0, 2.0, out=D)
        if zero.any():
            zr = np.flatnonzero(zero[lo:hi])
            D[np.ix_(zr, np.flatnonzero(zero))] = 0.0
        D[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        part = np.argpartition(D, k - 1, axis=1)[:, :k]
        pd = np.take_along_axis(D, part, axis=1)
        # order by (distance, index) so ties resolve identically on every run
        order = np.lexsort((part, pd), axis=1)
        idx[lo:hi] = np.take_along_axis(part, order, axis=1)
        dist[lo:hi] = np.take_along_axis(pd, order, axis=1)
    return idx, dist


def smooth_knn(dist: np.ndarray, n_iter: int = 64, bandwidth: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-point (rho, sigma) with sum_j exp(-max(d_ij - rho_i, 0) / sigma_i) = log2(k)."""
    n, k = dist.shape
    target = np.log2(k) * bandwidth
    pos = np.where(dist > 0, dist, np.inf)
    rho = pos.min(axis=1)
    rho[~np.isfinite(rho)] = 0.0
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    excess = np.maximum(dist - rho[:, None], 0.0)
    for _ in range(n_iter):
        psum = np.exp(-excess / mid[:, None]).sum(axis=1)
        too_big = psum > target
        hi = np.where(too_big, mid, hi)
        lo = np.where(too_big, lo, mid)
        mid = np.where(np.isfinite(hi), 0.5 * (lo + hi), mid * 2.0)
    floor = 1e-3 * np.where(rho > 0, dist.mean(axis=1), dist.mean())
    return rho, np.maximum(mid, floor)


def fuzzy_graph(idx: np.ndarray, dist: np.ndarray) -> sparse.csr_matrix:
    n, k = idx.shape
    rho, sigma = smooth_knn(dist)
    w = np.exp(-np.maximum(dist - rho[:, None], 0.0) / sigma[:, None])
    P = sparse.csr_matrix((w.ravel(), (np.repeat(np.arange(n), k), idx.ravel())), shape=(n, n))
    PT = P.T.tocsr()
    G = (P + PT - P.multiply(PT)).tocsr()
    G.eliminate_zeros()
    G.sort_indices()
    return G


def fit_ab(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Fit 1 / (1 + a x^2b) to the offset-exponential membership curve."""
    if not 0 <= min_dist < 3 * spread:
        raise ConfigError(f"min_dist must be in [0, {3 * spread}), got {min_dist}")
    x = np.linspace(0, 3 * spread, 300)
    y = np.where(x < min_dist, 1.0, np.exp(-(x - min_dist) / spread))
    (a, b), _ = curve_fit(lambda x, a, b: 1.0 / (1.0 + a * x ** (2 * b)), x, y, p0=(1.0, 1.0), maxfev=10000)
    return float(a), float(b)


# ---------------------------------------------------------------- layout

@numba.njit(cache=True)
def _clip(v):
    return 4.0 if v > 4.0 else (-4.0 if v < -4.0 else v)


@numba.njit(cache=True)
def _optimize(Y, head, tail, eps, n_epochs, a, b, neg_rate, seed, anchor, anchor_w, lr0):
    np.random.seed(seed)
    n, dim = Y.shape
    E = head.shape[0]
    next_sample = eps.copy()
    eps_neg = eps / neg_rate
    next_neg = eps_neg.copy()
    for epoch in range(n_epochs):
        alpha = lr0 * (1.0 - epoch / n_epochs)
        for e in range(E):
            if next_sample[e] > epoch:
                continue
            i = head[e]
            j = tail[e]
            d2 = 0.0
            for c in range(dim):
                diff = Y[i, c] - Y[j, c]
                d2 += diff * diff
            if d2 > 0.0:
                pb = d2 ** b
                gc = -2.0 * a * b * (pb / d2) / (a * pb + 1.0)
            else:
                gc = 0.0
            for c in range(dim):
                g = _clip(gc * (Y[i, c] - Y[j, c]))
                Y[i, c] += g * alpha
                Y[j, c] -= g * alpha
            next_sample[e] += eps[e]
            n_neg = int((epoch - next_neg[e]) / eps_neg[e])
            for _ in range(n_neg):
                m = np.random.randint(n)
                if m == i:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = Y[i, c] - Y[m, c]
                    d2 += diff * diff
                if d2 > 0.0:
                    gc = 2.0 * b / ((0.001 + d2) * (a * d2 ** b + 1.0))
                    for c in range(dim):
                        Y[i, c] += _clip(gc * (Y[i, c] - Y[m, c])) * alpha
                else:
                    for c in range(dim):
                        Y[i, c] += 4.0 * alpha
            next_neg[e] += n_neg * eps_neg[e]
        for i in range(n):
            w = anchor_w[i]
            if w > 0.0:
                for c in range(dim):
                    Y[i, c] += w * (anchor[i, c] - Y[i, c])
    return Y


def _pca_init(X: np.ndarray, seed: int) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    rng = np.random.default_rng(seed)
    if np.allclose(Xc, 0.0) or X.shape[1] < 2:
        return rng.uniform(-LAYOUT_EXTENT, LAYOUT_EXTENT, (X.shape[0], 2))
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    Y = Xc @ vt[:2].T
    vt0 = np.abs(vt[:2]).argmax(axis=1)
    Y *= np.sign(vt[[0, 1], vt0])    # deterministic orientation
    Y *= LAYOUT_EXTENT / max(np.abs(Y).max(), 1e-12)
    return Y + rng.normal(0.0, 1e-4, Y.shape)


def _layout(X, n_neighbors, min_dist, epochs, seed, init=None, anchor=None, anchor_w=None,
            neg_rate=5, graph=None):
    n = X.shape[0]
    if not 1 <= n_neighbors < n:
        raise ConfigError(f"n_neighbors must be in [1, n={n}), got {n_neighbors}")
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if graph is None:
        graph = fuzzy_graph(*knn_cosine(X, n_neighbors))
    a, b = fit_ab(min_dist)
    G = graph.tocoo()
    keep = G.data >= G.data.max() / epochs
    head, tail, w = G.row[keep].astype(np.int64), G.col[keep].astype(np.int64), G.data[keep]
    eps = w.max() / w
    Y = np.array(_pca_init(X, seed) if init is None else init, dtype=np.float64, copy=True)
    if anchor is None:
        anchor, anchor_w = np.zeros_like(Y), np.zeros(n)
    return _optimize(Y, head, tail, eps, int(epochs), a, b, float(neg_rate), int(seed) % (2 ** 31),
                     np.asarray(anchor, dtype=np.float64), np.asarray(anchor_w, dtype=np.float64), 1.0)


def _unique_rows(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows in first-appearance order and the map back to every row."""
    _, first, inverse = np.unique(X, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return X[first[order]], rank[inverse.ravel()]


def neighbor_embed(X, n_neighbors: int = 50, min_dist: float = 0.8, epochs: int = 2000,
                   seed: int = 0, t: int | None = None, agent_ids=None) -> EmbeddingResult:
    """Layout of the distinct rows of X; duplicated rows share one coordinate."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise DataError("neighbor_embed expects a finite (n, h) array")
    if not 1 <= n_neighbors < X.shape[0]:
        raise ConfigError(f"n_neighbors must be in [1, n={X.shape[0]}), got {n_neighbors}")
    U, inverse = _unique_rows(X)
    if U.shape[0] <= n_neighbors:
        raise DataError(f"only {U.shape[0]} distinct rows for n_neighbors={n_neighbors}")
    Y = _layout(U, n_neighbors, min_dist, epochs, seed)
    return EmbeddingResult(Y[inverse], t, None if agent_ids is None else list(agent_ids))


def aligned_embed(steps, n_neighbors: int = 50, min_dist: float = 0.8, epochs: int = 2000,
                  seed: int = 0, anchor_strength: float = 0.5) -> list[EmbeddingResult]:
    """Embed consecutive steps, warm-starting each from the previous layout.

    ``steps`` is a sequence of (agent_ids, X). Shared agents start at their previous
    coordinates and are pulled back towards them in proportion to how much of their
    k-NN set survived the step, so agents whose neighbourhood is unchanged stay put
    while agents that moved between regions are free to follow their new neighbours.
    New agents start at the mean previous position of their shared neighbours.
    """
    out: list[EmbeddingResult] = []
    prev_ids: dict[str, int] | None = None
    prev_nn: list[set] | None = None
    for s, (ids, X) in enumerate(steps):
        ids = list(ids)
        X = np.asarray(X, dtype=np.float64)
        if len(set(ids)) != len(ids):
            raise DataError("agent ids repeat within a step")
        idx, dist = knn_cosine(X, n_neighbors) if 1 <= n_neighbors < X.shape[0] else (None, None)
        if idx is None:
            raise ConfigError(f"n_neighbors must be in [1, n={X.shape[0]}), got {n_neighbors}")
        graph = fuzzy_graph(idx, dist)
        nn = [set(ids[j] for j in row) for row in idx]
        step_seed = int(np.random.SeedSequence([seed, s]).generate_state(1)[0])
        if prev_ids is None:
            Y = _layout(X, n_neighbors, min_dist, epochs, step_seed, graph=graph)
            out.append(EmbeddingResult(Y, s + 1, ids, np.full(len(ids), -1)))
        else:
            previous = np.array([prev_ids.get(a, -1) for a in ids])
            if (previous < 0).all():
                raise DataError(f"step {s + 1} shares no agents with step {s}")
            P = out[-1].points
            init = np.empty((len(ids), 2))
            anchor_w = np.zeros(len(ids))
            for i, pi in enumerate(previous):
                if pi >= 0:
                    init[i] = P[pi]
                    inter = len(nn[i] & prev_nn[pi])
                    anchor_w[i] = anchor_strength * inter / len(nn[i] | prev_nn[pi])
                else:
                    known = [prev_ids[a] for a in nn[i] if a in prev_ids]
                    init[i] = P[known].mean(axis=0) if known else P.mean(axis=0)
            Y = _layout(X, n_neighbors, min_dist, epochs, step_seed, init=init, anchor=init.copy(),
                        anchor_w=anchor_w, graph=graph)
            out.append(EmbeddingResult(Y, s + 1, ids, previous))
        prev_ids = {a: i for i, a in enumerate(ids)}
        prev_nn = nn
    return out


def knn_overlap(X, Y, k: int = 15) -> float:
    """Mean fraction of each point's cosine k-NN in X retained among its euclidean k-NN in Y."""
    a, _ = knn_cosine(X, k)
    Y = np.asarray(Y, dtype=np.float64)
    d = ((Y[:, None, :] - Y[None, :, :]) ** 2).sum(-1) if Y.shape[0] <= 4000 else None
    if d is None:
        raise ConfigError("knn_overlap is limited to 4000 points")
    np.fill_diagonal(d, np.inf)
    b = np.argpartition(d, k - 1, axis=1)[:, :k]
    return float(np.mean([len(set(r1) & set(r2)) / k for r1, r2 in zip(a, b)]))
