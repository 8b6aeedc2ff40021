"""Per-agent shared-layer activations and per-step views of them."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from salience.data import TARGETS, Dataset
from salience.errors import DataError
from salience.models import iter_length_groups, make_batch


@dataclass
class LatentSet:
    """Activations (T_i, h) per agent, with model predictions and simulator salience when known."""

    agent_ids: list[str]
    object_ids: list[str]
    reps: list[np.ndarray]
    preds: list[np.ndarray] | None = None     # (T_i, 5) predictions in original units
    latent: list[np.ndarray] | None = None    # (T_i,) simulator salience

    @property
    def width(self) -> int:
        return self.reps[0].shape[1]

    def lengths(self) -> np.ndarray:
        return np.array([r.shape[0] for r in self.reps])

    def at(self, t: int) -> "StepView":
        """Agents with at least ``t`` sessions, at step t (1-based)."""
        if t < 1:
            raise DataError(f"steps are 1-based, got t={t}")
        idx = [i for i, r in enumerate(self.reps) if r.shape[0] >= t]
        if not idx:
            raise DataError(f"no agent reaches step {t}")
        return StepView(
            t=t,
            agent_ids=[self.agent_ids[i] for i in idx],
            object_ids=[self.object_ids[i] for i in idx],
            points=np.stack([self.reps[i][t - 1] for i in idx]),
            latent=None if self.latent is None else np.array([self.latent[i][t - 1] for i in idx]),
            index=np.array(idx),
        )


@dataclass
class StepView:
    t: int
    agent_ids: list[str]
    object_ids: list[str]
    points: np.ndarray
    latent: np.ndarray | None
    index: np.ndarray


def encode_dataset(model, data: Dataset, with_predictions: bool = True) -> LatentSet:
    """Run every sequence through all of its T sessions (no targets needed)."""
    out: dict[str, tuple] = {}
    for group in iter_length_groups(data, 1024):
        batch = make_batch(group, data.vocabulary, model.stats, full=True)
        if with_predictions and hasattr(model, "forward"):
            pred, rep = model.forward(batch)
            model._drop_caches()
        else:
            rep, pred = model.represent(batch), None
        for i, s in enumerate(group):
            out[s.agent_id] = (rep[i], None if pred is None else pred[i])
    order = data.sequences
    reps = [out[s.agent_id][0] for s in order]
    preds = [out[s.agent_id][1] for s in order] if with_predictions and hasattr(model, "forward") else None
    latent = None
    if all(s.latent_trace is not None for s in order):
        latent = [np.asarray(s.latent_trace, dtype=np.float64) for s in order]
    return LatentSet([s.agent_id for s in order], [s.object_id for s in order], reps, preds, latent)


# ---------------------------------------------------------------- file format
# long format: one row per (agent, step); prediction and salience columns optional

def write_latents(path, ls: LatentSet) -> None:
    h = ls.width
    header = ["agent_id", "object_id", "t"] + [f"u{j}" for j in range(h)]
    if ls.preds is not None:
        header += [f"pred_{n}" for n in TARGETS]
    if ls.latent is not None:
        header.append("latent_v")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, aid in enumerate(ls.agent_ids):
            for t in range(ls.reps[i].shape[0]):
                row = [aid, ls.object_ids[i], t + 1] + [repr(float(v)) for v in ls.reps[i][t]]
                if ls.preds is not None:
                    row += [repr(float(v)) for v in ls.preds[i][t]]
                if ls.latent is not None:
                    row.append(repr(float(ls.latent[i][t])))
                w.writerow(row)


def read_latents(path) -> LatentSet:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such representation file: {path}")
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        units = [j for j, c in enumerate(header) if c.startswith("u") and c[1:].isdigit()]
        pcols = [j for j, c in enumerate(header) if c.startswith("pred_")]
        lcol = header.index("latent_v") if "latent_v" in header else None
        rows: dict[str, list] = {}
        objects: dict[str, str] = {}
        for row in r:
            aid = row[0]
            objects[aid] = row[1]
            rows.setdefault(aid, []).append(row)
    ids = list(rows)
    reps, preds, latent = [], [], []
    for aid in ids:
        rr = sorted(rows[aid], key=lambda x: int(x[2]))
        if [int(x[2]) for x in rr] != list(range(1, len(rr) + 1)):
            raise DataError(f"{path}: agent {aid} has non-contiguous steps")
        reps.append(np.array([[float(x[j]) for j in units] for x in rr]))
        if pcols:
            preds.append(np.array([[float(x[j]) for j in pcols] for x in rr]))
        if lcol is not None:
            latent.append(np.array([float(x[lcol]) for x in rr]))
    return LatentSet(ids, [objects[a] for a in ids], reps, preds or None, latent or None)
