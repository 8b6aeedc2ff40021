"""Mini-batch k-means with best-of-restarts selection and chord-distance elbow detection."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from salience.errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float


def standardize(points) -> np.ndarray:
    """Zero mean, unit variance per feature; constant features become 0."""
    points = np.asarray(points, dtype=np.float64)
    sd = points.std(axis=0)
    return (points - points.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids * centroids).sum(1)[None, :]
    return np.maximum(d, 0.0)


def assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, float]:
    """Nearest-centroid labels and the full-data inertia."""
    labels = np.empty(points.shape[0], dtype=np.int64)
    inertia = 0.0
    for lo in range(0, points.shape[0], 4096):
        d = _sq_dists(points[lo:lo + 4096], centroids)
        lab = d.argmin(axis=1)
        labels[lo:lo + 4096] = lab
        # exact distances for the inertia; the expanded form loses precision near 0
        diff = points[lo:lo + 4096] - centroids[lab]
        inertia += float((diff * diff).sum())
    return labels, inertia


def _refine(points, centroids, batch_size, max_epochs, seed, tol=1e-6):
    """Mini-batch passes; each centroid moves by a 1/count running mean of its batch members."""
    rng = np.random.default_rng(seed)
    n, k = points.shape[0], centroids.shape[0]
    centroids = centroids.copy()
    counts = np.zeros(k)
    for _ in range(max_epochs):
        before = centroids.copy()
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            batch = points[order[lo:lo + batch_size]]
            lab = _sq_dists(batch, centroids).argmin(axis=1)
            m = np.bincount(lab, minlength=k).astype(np.float64)
            sums = np.zeros_like(centroids)
            np.add.at(sums, lab, batch)
            hit = m > 0
            # sequential updates with rate 1/count telescope into this running mean
            new_counts = counts + m
            centroids[hit] = (counts[hit, None] * centroids[hit] + sums[hit]) / new_counts[hit, None]
            counts = new_counts
        if float(np.abs(centroids - before).max()) <= tol:
            break
    return centroids


def _restart(args):
    points, k, batch_size, max_epochs, seed = args
    rng = np.random.default_rng(seed)
    init = points[rng.choice(points.shape[0], k, replace=False)]
    centroids = _refine(points, init, batch_size, max_epochs, seed + 1)
    labels, inertia = assign(points, centroids)
    return KMeansResult(centroids, labels, inertia)


def minibatch_kmeans(points, k: int, batch_size: int = 512, n_init: int = 50, max_epochs: int = 300,
                     seed: int = 0, jobs: int = 1, extra_inits=()) -> KMeansResult:
    """Best full-data inertia over ``n_init`` random-point initialisations.

    ``extra_inits`` are additional starting centroid sets; each is kept both as is and
    refined, so the result is never worse than any of them.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, n={n}], got {k}")
    if n_init < 1 or batch_size < 1 or max_epochs < 1:
        raise ConfigError("n_init, batch_size and max_epochs must be >= 1")
    if not np.all(np.isfinite(points)):
        raise DataError("k-means input contains non-finite values")
    seeds = np.random.SeedSequence(seed).generate_state(n_init, dtype=np.uint32)
    tasks = [(points, k, batch_size, max_epochs, int(s)) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_restart, tasks))
    else:
        results = [_restart(t) for t in tasks]
    for i, init in enumerate(extra_inits):
        init = np.asarray(init, dtype=np.float64)
        for c in (init, _refine(points, init, batch_size, max_epochs, seed + 7919 * (i + 1))):
            labels, inertia = assign(points, c)
            results.append(KMeansResult(c, labels, inertia))
    # first minimum wins, so ties resolve by restart order regardless of jobs
    return min(results, key=lambda r: r.inertia)


def _grow(points: np.ndarray, res: KMeansResult) -> np.ndarray:
    """Previous solution plus the worst-served point as a new centroid."""
    d = ((points - res.centroids[res.assignments]) ** 2).sum(1)
    return np.vstack([res.centroids, points[int(d.argmax())]])


def inertia_curve(points, k_min: int = 2, k_max: int = 10, seed: int = 0, **kw) -> list[KMeansResult]:
    """Solutions for k = k_min..k_max; inertia is non-increasing in k by construction."""
    points = np.asarray(points, dtype=np.float64)
    out: list[KMeansResult] = []
    for k in range(k_min, k_max + 1):
        extra = [_grow(points, out[-1])] if out else []
        out.append(minibatch_kmeans(points, k, seed=seed + k, extra_inits=extra, **kw))
    return out


@dataclass(frozen=True)
class Elbow:
    k: int
    distances: tuple[float, ...]   # normalised chord minus curve, per k
    knee: bool                     # False when no point lies below the chord


def elbow(curve, tol: float = 1e-9) -> Elbow:
    """k maximising the vertical gap below the chord joining the curve's endpoints.

    ``curve`` is a sequence of (k, inertia). Both axes are scaled to [0, 1] first,
    which leaves the argmax unchanged.
    """
    curve = sorted((int(k), float(v)) for k, v in curve)
    if len(curve) < 3:
        raise ConfigError("elbow needs at least three points")
    ks = np.array([k for k, _ in curve], dtype=np.float64)
    vs = np.array([v for _, v in curve])
    xs = (ks - ks[0]) / (ks[-1] - ks[0])
    span = vs.max() - vs.min()
    ys = (vs - vs.min()) / span if span > 0 else np.zeros_like(vs)
    chord = ys[0] + (ys[-1] - ys[0]) * xs
    dist = chord - ys
    i = int(dist.argmax())
    if dist[i] <= tol:
        log.warning("inertia curve has no knee; returning the smallest k")
        return Elbow(int(ks[0]), tuple(dist.tolist()), False)
    return Elbow(int(ks[i]), tuple(dist.tolist()), True)


def purity(labels, truth) -> float:
    """Fraction of points whose cluster's majority true label matches their own."""
    labels, truth = np.asarray(labels), np.asarray(truth)
    hits = 0
    for c in np.unique(labels):
        _, counts = np.unique(truth[labels == c], return_counts=True)
        hits += counts.max()
    return hits / labels.size
