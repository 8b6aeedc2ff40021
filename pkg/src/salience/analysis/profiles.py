"""Behavioural profiles of partitions, unit transducer curves and salience recovery scores."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from salience.analysis.mic import mic
from salience.data import METRICS, Dataset
from salience.errors import ConfigError, DataError

log = logging.getLogger(__name__)


def discounted_future_sum(preds, gamma: float, from_step: int = 1) -> float:
    """sum_{i >= from_step} gamma^(i - from_step) * preds_i, steps counted from 1."""
    if not 0 <= gamma < 1:
        raise ConfigError(f"gamma must be in [0, 1), got {gamma}")
    preds = np.asarray(preds, dtype=np.float64)
    if not 1 <= from_step <= preds.shape[0]:
        raise ConfigError(f"from_step must be in [1, {preds.shape[0]}], got {from_step}")
    tail = preds[from_step - 1:]
    return float((gamma ** np.arange(tail.shape[0])) @ tail)


# ---------------------------------------------------------------- partitions

@dataclass
class Profile:
    partition: int
    metric: str
    t: int
    n: int
    mean_z: float
    half_width: float


def population_zscores(data: Dataset, max_steps: int | None = None) -> dict[str, np.ndarray]:
    """Per agent, (steps, 4) z-scores against its object's population at each step.

    Steps the agent never reached are NaN. A metric with zero spread at a step scores 0.
    """
    steps = max_steps or max(s.T for s in data.sequences)
    z: dict[str, np.ndarray] = {}
    for obj, seqs in data.by_object().items():
        vals = np.full((len(seqs), steps, len(METRICS)), np.nan)
        for i, s in enumerate(seqs):
            k = min(s.T, steps)
            vals[i, :k] = s.values[:k]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)   # steps nobody reached
            mu = np.nanmean(vals, axis=0)
            sd = np.nanstd(vals, axis=0)
        zz = np.where(sd > 0, (vals - mu) / np.where(sd > 0, sd, 1.0), 0.0)
        zz[np.isnan(vals)] = np.nan
        for i, s in enumerate(seqs):
            z[s.agent_id] = zz[i]
    return z


def partition_profiles(data: Dataset, assignments: dict[str, int],
                       max_steps: int | None = None) -> list[Profile]:
    """Mean z-score per partition, metric and step, with 1.96 * sd / sqrt(n) half-widths."""
    missing = set(assignments) - set(data.agent_ids)
    if missing:
        raise DataError(f"assignments name {len(missing)} agents absent from the data")
    z = population_zscores(data, max_steps)
    members: dict[int, list[str]] = {}
    for aid, p in assignments.items():
        members.setdefault(int(p), []).append(aid)
    out: list[Profile] = []
    for p in sorted(members):
        block = np.stack([z[a] for a in members[p]])       # (n, steps, 4)
        for t in range(block.shape[1]):
            for m, name in enumerate(METRICS):
                col = block[:, t, m]
                col = col[~np.isnan(col)]
                if col.size == 0:
                    continue
                hw = 1.96 * col.std(ddof=1) / np.sqrt(col.size) if col.size > 1 else float("nan")
                out.append(Profile(p, name, t + 1, int(col.size), float(col.mean()), float(hw)))
    return out


# ---------------------------------------------------------------- unit transducers

@dataclass
class Transducer:
    edges: np.ndarray
    counts: np.ndarray
    means: np.ndarray
    sems: np.ndarray
    mic: float
    spearman: float
    flags: list[str] = field(default_factory=list)


def unit_transducer(activation, predictions, n_bins: int = 10) -> Transducer:
    """Equal-width activation bins with mean +- standard error of the prediction per bin."""
    a = np.asarray(activation, dtype=np.float64)
    p = np.asarray(predictions, dtype=np.float64)
    if a.shape != p.shape or a.ndim != 1:
        raise DataError(f"unit_transducer: shapes {a.shape} and {p.shape} differ")
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    flags = []
    distinct = np.unique(a).size
    if distinct < n_bins:
        log.warning("only %d distinct activations; using %d bins", distinct, distinct)
        flags.append("reduced_bins")
        n_bins = distinct
    lo, hi = float(a.min()), float(a.max())
    edges = np.linspace(lo, hi, n_bins + 1) if hi > lo else np.array([lo, lo])
    idx = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, len(edges) - 2)
    k = len(edges) - 1
    counts = np.bincount(idx, minlength=k)
    means = np.full(k, np.nan)
    sems = np.full(k, np.nan)
    for b in range(k):
        sel = p[idx == b]
        if sel.size:
            means[b] = sel.mean()
            sems[b] = sel.std(ddof=1) / np.sqrt(sel.size) if sel.size > 1 else 0.0
    m = mic(a, p)
    if m.constant:
        flags.append("constant_input")
        rho = float("nan")
    else:
        rho = float(spearmanr(a, p).statistic)
    return Transducer(edges, counts, means, sems, m.value, rho, flags)


# ---------------------------------------------------------------- salience recovery

def max_unit_mic(points: np.ndarray, target: np.ndarray, max_n: int | None = None, seed: int = 0) -> float:
    """Largest MIC between any single unit and ``target``; dead units score 0."""
    points = np.asarray(points, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if max_n is not None and points.shape[0] > max_n:
        sel = np.sort(np.random.default_rng(seed).choice(points.shape[0], max_n, replace=False))
        points, target = points[sel], target[sel]
    return max(mic(points[:, j], target).value for j in range(points.shape[1]))


def pc1_spearman(points: np.ndarray, target: np.ndarray) -> float:
    from salience.analysis.pca import pca
    score = pca(points, 1).transform(points)[:, 0]
    if np.ptp(score) == 0:
        return 0.0
    return float(spearmanr(score, target).statistic)
