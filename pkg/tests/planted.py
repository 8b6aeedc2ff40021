"""Planted-structure generators shared by the analysis and acceptance tests."""

import numpy as np


def blobs(n_per, centers, sd, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=np.float64)
    X = np.concatenate([c + sd * rng.standard_normal((n_per, centers.shape[1])) for c in centers])
    return X, np.repeat(np.arange(len(centers)), n_per)


def simplex_centers(k, h, scale=1.0, offset=0.0):
    """k mutually equidistant centres in h >= k dims, shifted off the origin."""
    C = np.zeros((k, h))
    C[np.arange(k), np.arange(k)] = scale
    return C + offset


def planted_clusters(k=4, h=16, n_per=250, sd=0.15, seed=0):
    return blobs(n_per, simplex_centers(k, h, 1.0), sd, seed)


def two_cluster_representation(n=2000, h=16, seed=0):
    """Two well-separated groups of non-negative activations (different active units)."""
    rng = np.random.default_rng(seed)
    half = n // 2
    a = np.abs(rng.normal(0, 0.3, (half, h)))
    b = np.abs(rng.normal(0, 0.3, (n - half, h)))
    a[:, : h // 2] += 2.0
    b[:, h // 2:] += 2.0
    return np.vstack([a, b]), np.repeat([0, 1], [half, n - half])
