from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from salience.errors import ConfigError, DataError


@dataclass(frozen=True)
class PCAResult:
    fractions: np.ndarray      # per-component explained variance, non-increasing
    cumulative: np.ndarray
    components: np.ndarray     # (n_components, h) unit rows
    mean: np.ndarray

    def transform(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) @ self.components.T


def pca(points, n_components: int) -> PCAResult:
    """Eigen-decomposition of the centred covariance.

    A zero-variance input has nothing to explain; fractions are reported as 0.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"pca expects an (n, h) array, got shape {X.shape}")
    n, h = X.shape
    if not 1 <= n_components <= h:
        raise ConfigError(f"n_components must be in [1, h={h}], got {n_components}")
    if n < n_components:
        raise DataError(f"pca needs n >= n_components ({n} < {n_components})")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    frac = evals[:n_components] / total if total > 0 else np.zeros(n_components)
    comps = evecs[:, :n_components].T
    # sign convention: largest-magnitude loading positive, so reruns agree
    flip = np.sign(comps[np.arange(n_components), np.abs(comps).argmax(axis=1)])
    comps = comps * np.where(flip == 0, 1.0, flip)[:, None]
    return PCAResult(frac, np.cumsum(frac), comps, mean)


def explained_variance(points, n_components: int) -> np.ndarray:
    """Cumulative explained-variance fractions for the first ``n_components`` PCs."""
    return pca(points, n_components).cumulative
