"""Telemetry sequences, supervised targets, scaling and length-bucketed batching."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from salience.errors import DataError

METRICS = ("absence", "session_time", "active_time", "session_activity")
TARGETS = METRICS + ("future_session_count",)
N_METRICS = len(METRICS)
N_TARGETS = len(TARGETS)

RECORD_HEADER = ("agent_id", "object_id", "t") + METRICS
LATENT_COLUMN = "latent_v"


@dataclass(frozen=True)
class TelemetrySession:
    absence: float
    session_time: float
    active_time: float
    session_activity: int
    object_id: str

    def __post_init__(self):
        values = (self.absence, self.session_time, self.active_time, self.session_activity)
        if not all(math.isfinite(v) and v >= 0 for v in values):
            raise DataError(f"session magnitudes must be finite and >= 0, got {values}")
        if self.active_time > 100:
            raise DataError(f"active_time must lie in [0, 100], got {self.active_time}")

    def metrics(self) -> tuple[float, float, float, float]:
        return (self.absence, self.session_time, self.active_time, float(self.session_activity))


@dataclass(frozen=True)
class InteractionSequence:
    agent_id: str
    object_id: str
    sessions: tuple[TelemetrySession, ...]
    latent_trace: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.sessions) < 2:
            raise DataError(f"agent {self.agent_id}: sequences need at least 2 sessions")
        if self.latent_trace is not None and len(self.latent_trace) != len(self.sessions):
            raise DataError(f"agent {self.agent_id}: latent trace length mismatch")

    @property
    def T(self) -> int:
        return len(self.sessions)

    @cached_property
    def values(self) -> np.ndarray:
        """(T, 4) array of the continuous metrics in original units."""
        return np.array([s.metrics() for s in self.sessions], dtype=np.float64)

    @cached_property
    def target_array(self) -> np.ndarray:
        """(T-1, 5) lead-1 targets; row t holds the metrics of session t+1 and T-(t+1)."""
        T = self.T
        out = np.empty((T - 1, N_TARGETS))
        out[:, :N_METRICS] = self.values[1:]
        out[:, N_METRICS] = T - np.arange(1, T)
        return out


@dataclass(frozen=True)
class TargetVector:
    next_absence: float
    next_session_time: float
    next_active_time: float
    next_session_activity: float
    future_session_count: int


def build_targets(seq: InteractionSequence) -> list[TargetVector]:
    """Lead-1 targets for steps 1..T-1 plus the number of sessions remaining after each step."""
    if len(seq.sessions) < 2:
        raise DataError("build_targets needs a sequence of length >= 2")
    T = len(seq.sessions)
    out = []
    for t in range(1, T):
        nxt = seq.sessions[t]
        out.append(TargetVector(nxt.absence, nxt.session_time, nxt.active_time,
                                float(nxt.session_activity), T - t))
    return out


@dataclass(frozen=True)
class ScalingStats:
    features: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if np.any(self.mins > self.maxs):
            raise DataError("scaling stats need min <= max per feature")

    @classmethod
    def fit(cls, values: np.ndarray, features: Sequence[str]) -> "ScalingStats":
        values = np.asarray(values, dtype=np.float64)
        return cls(tuple(features), values.min(axis=0), values.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        return self.maxs - self.mins

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("feature", "min", "max"))
            for name, lo, hi in zip(self.features, self.mins, self.maxs):
                w.writerow((name, repr(float(lo)), repr(float(hi))))

    @classmethod
    def load(cls, path) -> "ScalingStats":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(tuple(r["feature"] for r in rows),
                   np.array([float(r["min"]) for r in rows]),
                   np.array([float(r["max"]) for r in rows]))


def min_max_scale(values, stats: ScalingStats) -> np.ndarray:
    """(x - min) / (max - min) per feature; a degenerate feature (max == min) maps to 0."""
    values = np.asarray(values, dtype=np.float64)
    span = stats.span
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (values - stats.mins) / safe, 0.0)


def min_max_unscale(scaled, stats: ScalingStats) -> np.ndarray:
    return stats.mins + np.asarray(scaled, dtype=np.float64) * stats.span


@dataclass
class Dataset:
    sequences: list[InteractionSequence]
    scaling_stats: ScalingStats | None = None
    vocabulary: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        # dense ordinal ids by first appearance
        for seq in self.sequences:
            if seq.object_id not in self.vocabulary:
                self.vocabulary[seq.object_id] = len(self.vocabulary)

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def agent_ids(self) -> list[str]:
        return [s.agent_id for s in self.sequences]

    @property
    def objects(self) -> list[str]:
        return sorted(self.vocabulary, key=self.vocabulary.get)

    def subset(self, idx) -> "Dataset":
        return Dataset([self.sequences[i] for i in idx], self.scaling_stats, dict(self.vocabulary))

    def by_object(self) -> dict[str, list[InteractionSequence]]:
        out = defaultdict(list)
        for s in self.sequences:
            out[s.object_id].append(s)
        return dict(out)

    def fit_scaling(self) -> "Dataset":
        """Return a copy carrying min/max stats of the 4 metrics and the future-session count."""
        stats = fit_scaling_stats(self.sequences)
        return Dataset(self.sequences, stats, dict(self.vocabulary))


def fit_scaling_stats(sequences: Sequence[InteractionSequence]) -> ScalingStats:
    if not sequences:
        raise DataError("cannot fit scaling stats on an empty dataset")
    values = np.concatenate([s.values for s in sequences])
    stats = ScalingStats.fit(values, METRICS)
    # count target is scaled against [0, longest future]; keeps softplus outputs >= 0 after unscaling
    max_count = max(s.T - 1 for s in sequences)
    return ScalingStats(TARGETS, np.append(stats.mins, 0.0), np.append(stats.maxs, float(max_count)))


def bucket_batches(data: Dataset, batch_size: int, rng_seed: int) -> Iterator[list[InteractionSequence]]:
    """Yield batches whose sequences all share one length; each sequence appears once per call."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    rng = np.random.default_rng(rng_seed)
    buckets = defaultdict(list)
    for i, seq in enumerate(data.sequences):
        buckets[seq.T].append(i)
    batches = []
    for T in sorted(buckets):
        idx = np.array(buckets[T])
        rng.shuffle(idx)
        batches.extend(idx[i:i + batch_size] for i in range(0, len(idx), batch_size))
    for b in rng.permutation(len(batches)):
        yield [data.sequences[i] for i in batches[b]]


def nearest_rank(values, p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(p / 100.0 * len(v)))
    return float(v[min(rank, len(v)) - 1])


def percentile_filter(data: Dataset, p: float) -> Dataset:
    """Drop sequences holding any metric above its per-object p-th percentile."""
    if not 0 < p <= 100:
        raise DataError(f"percentile must lie in (0, 100], got {p}")
    keep = []
    for obj, seqs in data.by_object().items():
        stacked = np.concatenate([s.values for s in seqs])
        limits = np.array([nearest_rank(stacked[:, m], p) for m in range(N_METRICS)])
        keep.extend(id(s) for s in seqs if np.all(s.values <= limits))
    keep = set(keep)
    return Dataset([s for s in data.sequences if id(s) in keep], data.scaling_stats,
                   dict(data.vocabulary))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_sequences(path, sequences: Sequence[InteractionSequence]) -> None:
    with_latent = any(s.latent_trace is not None for s in sequences)
    header = RECORD_HEADER + ((LATENT_COLUMN,) if with_latent else ())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for seq in sequences:
            for t, s in enumerate(seq.sessions, start=1):
                row = [seq.agent_id, seq.object_id, t, _fmt(s.absence), _fmt(s.session_time),
                       _fmt(s.active_time), int(s.session_activity)]
                if with_latent:
                    row.append(_fmt(seq.latent_trace[t - 1]) if seq.latent_trace else "")
                w.writerow(row)


def read_sequences(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such dataset file: {path}")
    grouped: dict[str, list[dict]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RECORD_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            grouped.setdefault(row["agent_id"], []).append(row)
    sequences = []
    for agent, rows in grouped.items():
        rows.sort(key=lambda r: int(r["t"]))
        obj = rows[0]["object_id"]
        sessions = tuple(
            TelemetrySession(float(r["absence"]), float(r["session_time"]), float(r["active_time"]),
                             int(r["session_activity"]), obj)
            for r in rows)
        latent = None
        if rows[0].get(LATENT_COLUMN):
            latent = tuple(float(r[LATENT_COLUMN]) for r in rows)
        sequences.append(InteractionSequence(agent, obj, sessions, latent))
    return Dataset(sequences)
