"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from salience.errors import NumericalError

EPS = np.finfo(np.float64).eps


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return np.abs(analytic - numeric) / denom


def fd_floor(loss: float, step: float, resolution: float = 1e4) -> float:
    """Gradient magnitude below which central differences cannot resolve 1/resolution.

    Roundoff in (L(p+h) - L(p-h)) / 2h is about eps * |L| / h; entries smaller than
    ``resolution`` times that are compared on an absolute rather than relative scale.
    """
    return max(1e-8, resolution * EPS * max(1.0, abs(loss)) / step)


def gradient_check(loss_and_grads: Callable[[], tuple[float, dict[str, np.ndarray]]],
                   params: dict[str, np.ndarray], step: float = 1e-5,
                   max_entries: int | None = None, seed: int = 0) -> float:
    """Worst relative error between analytic gradients and central differences.

    ``loss_and_grads`` must recompute the loss from the current contents of ``params``
    (perturbed in place) and return fresh gradients. ``max_entries`` bounds the number of
    probed entries per tensor (sampled deterministically) for larger graphs.
    """
    loss, analytic = loss_and_grads()
    if not math.isfinite(loss):
        raise NumericalError("gradient_check: non-finite loss")
    analytic = {k: v.copy() for k, v in analytic.items()}
    floor = fd_floor(loss, step)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            plus, _ = loss_and_grads()
            flat[i] = orig - step
            minus, _ = loss_and_grads()
            flat[i] = orig
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NumericalError(f"gradient_check: non-finite loss probing {name}[{i}]")
            numeric = (plus - minus) / (2 * step)
            err = float(relative_error(analytic[name].reshape(-1)[i], numeric, floor))
            worst = max(worst, err)
    return worst
