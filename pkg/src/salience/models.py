"""The five predictors of next-session intensity, the SMAPE objective and encoders.

All predictors map a batch of equal-length sequences to per-step 5-vectors
(the four lead-1 metrics and the number of future sessions) in original units.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from salience.data import (N_METRICS, N_TARGETS, Dataset, InteractionSequence, ScalingStats,
                           min_max_scale)
from salience.errors import ConfigError, DataError
from salience.nn import LSTM, Dense, Embedding, LayerGraph, load_params, save_params
from salience.nn.graph import load_manifest, save_manifest
from salience.nn.layers import sigmoid, softplus

KINDS = ("lag1", "median", "elastic_net", "mlp", "rnn")
PARAMETRIC = ("elastic_net", "mlp", "rnn")


# ---------------------------------------------------------------- SMAPE

def smape_terms(y, y_hat) -> np.ndarray:
    """Elementwise |y - y_hat| / (|y| + |y_hat|), with 0/0 defined as 0."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DataError(f"smape: shape mismatch {y.shape} vs {y_hat.shape}")
    denom = np.abs(y) + np.abs(y_hat)
    num = np.abs(y - y_hat)
    return np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)


def smape(y, y_hat) -> float:
    """Symmetric mean absolute percentage error on a 0-100 scale."""
    terms = smape_terms(y, y_hat)
    return 100.0 * float(terms.mean()) if terms.size else 0.0


def smape_per_target(y, y_hat) -> np.ndarray:
    """SMAPE of each target (last axis), averaging over all other axes."""
    terms = smape_terms(y, y_hat)
    return 100.0 * terms.reshape(-1, terms.shape[-1]).mean(axis=0)


def smape_loss_grad(y, y_hat) -> tuple[float, np.ndarray]:
    """Summed per-target SMAPE (the training loss) and its gradient w.r.t. y_hat."""
    n = y.size // y.shape[-1]
    diff = y - y_hat
    denom = np.abs(y) + np.abs(y_hat)
    safe = np.where(denom > 0, denom, 1.0)
    terms = np.where(denom > 0, np.abs(diff) / safe, 0.0)
    loss = 100.0 * terms.sum() / n
    dterm = (-np.sign(diff) * safe - np.abs(diff) * np.sign(y_hat)) / (safe * safe)
    grad = np.where(denom > 0, dterm, 0.0) * (100.0 / n)
    return float(loss), grad


# ---------------------------------------------------------------- specs and batches

SEARCH_DEFAULTS = {"layers": 1, "units": 32, "embedding_dim": 8, "learning_rate": 1e-3}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    layers: int = 1
    units: int = 32
    embedding_dim: int = 8
    learning_rate: float = 1e-3
    l1: float = 1e-4
    l2: float = 1e-4
    halflife: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("mlp", "rnn") and (self.layers < 1 or self.units < 1):
            raise ConfigError(f"{self.kind}: layers and units must be >= 1")
        if self.kind in PARAMETRIC and (self.embedding_dim < 1 or not self.learning_rate > 0):
            raise ConfigError(f"{self.kind}: embedding_dim >= 1 and learning_rate > 0 required")
        if self.l1 < 0 or self.l2 < 0:
            raise ConfigError("elastic-net strengths must be >= 0")
        if not self.halflife > 0:
            raise ConfigError("halflife must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class Batch:
    """Equal-length sequences: inputs for ``steps`` sessions, targets when available."""

    raw: np.ndarray            # (B, steps, 4) metrics in original units
    x: np.ndarray | None       # (B, steps, 4) min-max scaled metrics
    obj: np.ndarray            # (B,) ordinal object ids
    y: np.ndarray | None       # (B, steps, 5) targets in original units
    agent_ids: list[str]
    object_ids: list[str]
    latent: np.ndarray | None = None   # (B, steps) simulator salience

    @property
    def steps(self) -> int:
        return self.raw.shape[1]

    def __len__(self):
        return self.raw.shape[0]


def make_batch(seqs: Sequence[InteractionSequence], vocabulary: dict[str, int],
               stats: ScalingStats | None = None, full: bool = False) -> Batch:
    """Stack equal-length sequences. ``full`` keeps all T steps as inputs (no targets)."""
    lengths = {s.T for s in seqs}
    if len(lengths) != 1:
        raise DataError(f"batch mixes sequence lengths {sorted(lengths)}")
    unknown = {s.object_id for s in seqs} - set(vocabulary)
    if unknown:
        raise DataError(f"unknown object ids {sorted(unknown)}")
    T = lengths.pop()
    steps = T if full else T - 1
    values = np.stack([s.values for s in seqs])
    raw = values[:, :steps]
    x = None
    if stats is not None:
        in_stats = ScalingStats(stats.features[:N_METRICS], stats.mins[:N_METRICS], stats.maxs[:N_METRICS])
        x = min_max_scale(raw, in_stats)
    y = None if full else np.stack([s.target_array for s in seqs])
    latent = None
    if all(s.latent_trace is not None for s in seqs):
        latent = np.array([s.latent_trace[:steps] for s in seqs], dtype=np.float64)
    return Batch(raw, x, np.array([vocabulary[s.object_id] for s in seqs], dtype=np.int64), y,
                 [s.agent_id for s in seqs], [s.object_id for s in seqs], latent)


def iter_length_groups(data: Dataset, batch_size: int | None = None):
    """Deterministic equal-length groups (sorted by length) for evaluation."""
    groups: dict[int, list] = {}
    for s in data.sequences:
        groups.setdefault(s.T, []).append(s)
    for T in sorted(groups):
        g = groups[T]
        step = batch_size or len(g)
        for i in range(0, len(g), step):
            yield g[i:i + step]


# ---------------------------------------------------------------- baselines

class Lag1Model:
    """Carries every metric forward one step; predicts one future session."""

    kind = "lag1"
    spec = ModelSpec("lag1")

    def fit(self, train: Dataset):
        return self

    def predict(self, batch: Batch) -> np.ndarray:
        pred = np.empty(batch.raw.shape[:2] + (N_TARGETS,))
        pred[..., :N_METRICS] = batch.raw
        pred[..., N_METRICS] = 1.0
        return pred


def ewa(values, halflife: float) -> np.ndarray:
    """Exponentially weighted average over axis 0; the newest row has weight 1."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if math.isinf(halflife):
        w = np.ones(n)
    else:
        w = 0.5 ** (np.arange(n - 1, -1, -1) / halflife)
    return (w @ values.reshape(n, -1)).reshape(values.shape[1:]) / w.sum()


class MedianModel:
    """Per-object median of each agent's exponentially weighted target average."""

    kind = "median"

    def __init__(self, spec: ModelSpec | None = None):
        self.spec = spec or ModelSpec("median")
        self.constants: dict[str, np.ndarray] = {}

    def fit(self, train: Dataset):
        if len(train) == 0:
            raise DataError("median model needs a non-empty training set")
        per_object: dict[str, list] = {}
        for s in train.sequences:
            per_object.setdefault(s.object_id, []).append(ewa(s.target_array, self.spec.halflife))
        for obj, rows in per_object.items():
            self.constants[obj] = np.median(np.array(rows), axis=0)
        return self

    def predict(self, batch: Batch) -> np.ndarray:
        missing = set(batch.object_ids) - set(self.constants)
        if missing:
            raise DataError(f"median model has no fit for objects {sorted(missing)}")
        rows = np.array([self.constants[o] for o in batch.object_ids])
        return np.repeat(rows[:, None, :], batch.steps, axis=1)


# ---------------------------------------------------------------- parametric models

class _EncodingPath:
    """Shared forward path from (metrics, object id) to the top of the trunk."""

    def _inputs(self, batch: Batch) -> np.ndarray:
        if batch.x is None:
            raise DataError("batch lacks scaled inputs")
        emb = self.layers["embedding"].forward(batch.obj)
        emb_seq = np.broadcast_to(emb[:, None, :], batch.x.shape[:2] + emb.shape[1:])
        return np.concatenate([batch.x, emb_seq], axis=-1)

    def _encode(self, batch: Batch) -> np.ndarray:
        h = self._inputs(batch)
        for name in self.trunk:
            layer = self.layers[name]
            h = layer.forward(h)[0] if isinstance(layer, LSTM) else layer.forward(h)
        if self.has_representation:
            h = self.layers["representation"].forward(h)
        return h

    def represent(self, batch: Batch) -> np.ndarray:
        if not self.has_representation:
            raise ConfigError(f"{self.kind} has no representation layer")
        h = self._encode(batch)
        self._drop_caches()
        return h

    def _drop_caches(self):
        for layer in self.layers.values():
            layer._cache = None


class NeuralModel(_EncodingPath, LayerGraph):
    """Embedding + metrics -> trunk -> [representation] -> 5 heads.

    Trunks: ``elastic_net`` has none (heads read the inputs directly, an additive
    model with l1/l2 penalties), ``mlp`` stacks ReLU dense layers applied per step,
    ``rnn`` stacks LSTMs. Both networks end in a shared ReLU representation layer.
    Heads are linear except the future-session head (softplus); outputs are
    min-max unscaled with the target stats before the loss.
    """

    def __init__(self, spec: ModelSpec, vocab_size: int, stats: ScalingStats, seed: int = 0):
        super().__init__()
        if spec.kind not in PARAMETRIC:
            raise ConfigError(f"{spec.kind} is not a parametric model")
        if len(stats.features) != N_TARGETS:
            raise ConfigError("target stats must cover all 5 targets")
        self.spec, self.kind, self.stats, self.vocab_size = spec, spec.kind, stats, vocab_size
        rng = np.random.default_rng(seed)
        self.add("embedding", Embedding(vocab_size, spec.embedding_dim, rng))
        width = N_METRICS + spec.embedding_dim
        self.trunk: list[str] = []
        if spec.kind in ("mlp", "rnn"):
            for i in range(spec.layers):
                layer = (LSTM(width, spec.units, rng) if spec.kind == "rnn"
                         else Dense(width, spec.units, "relu", rng))
                self.add(f"trunk{i}", layer)
                self.trunk.append(f"trunk{i}")
                width = spec.units
            self.add("representation", Dense(width, spec.units, "relu", rng))
            width = spec.units
        self.add("heads", Dense(width, N_TARGETS, "linear", rng))

    @property
    def has_representation(self) -> bool:
        return "representation" in self.layers

    def forward(self, batch: Batch) -> tuple[np.ndarray, np.ndarray | None]:
        """Predictions in original units and the shared representation (None for elastic_net)."""
        h = self._encode(batch)
        z = self.layers["heads"].forward(h)
        self._z = z
        scaled = z.copy()
        scaled[..., N_METRICS] = softplus(z[..., N_METRICS])
        pred = self.stats.mins + scaled * self.stats.span
        return pred, (h if self.has_representation else None)

    def predict(self, batch: Batch) -> np.ndarray:
        pred, _ = self.forward(batch)
        self._drop_caches()
        return pred

    # training ---------------------------------------------------------

    def penalty(self) -> tuple[float, np.ndarray | None]:
        if self.kind != "elastic_net":
            return 0.0, None
        W = self.layers["heads"].params["W"]
        value = self.spec.l1 * np.abs(W).sum() + self.spec.l2 * (W * W).sum()
        return float(value), self.spec.l1 * np.sign(W) + 2.0 * self.spec.l2 * W

    def loss_and_backward(self, batch: Batch) -> float:
        """Summed 5-target SMAPE (+ elastic-net penalty); fills layer grads."""
        self.zero_grad()
        pred, _ = self.forward(batch)
        loss, dpred = smape_loss_grad(batch.y, pred)
        dz = dpred * self.stats.span
        dz[..., N_METRICS] *= sigmoid(self._z[..., N_METRICS])
        g = self.layers["heads"].backward(dz)
        if self.has_representation:
            g = self.layers["representation"].backward(g)
        for name in reversed(self.trunk):
            layer = self.layers[name]
            g = layer.backward(g)[0] if isinstance(layer, LSTM) else layer.backward(g)
        self.layers["embedding"].backward(g[..., N_METRICS:].sum(axis=1))
        pen, dpen = self.penalty()
        if dpen is not None:
            self.layers["heads"].grads["W"] += dpen
        return loss + pen

    def params_and_grads(self):
        return dict(self.named_params()), dict(self.named_grads())

    # persistence --------------------------------------------------------

    def manifest(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "vocab_size": self.vocab_size,
            "stats": {"features": list(self.stats.features), "mins": self.stats.mins.tolist(),
                      "maxs": self.stats.maxs.tolist()},
            "layers": self.layer_configs(),
        }

    def save(self, directory) -> None:
        from pathlib import Path
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_params(d / "params.bin", self.state_dict())
        save_manifest(d / "manifest.json", self.manifest())

    @classmethod
    def load(cls, directory) -> "NeuralModel":
        from pathlib import Path
        d = Path(directory)
        man = load_manifest(d / "manifest.json")
        st = man["stats"]
        stats = ScalingStats(tuple(st["features"]), np.array(st["mins"]), np.array(st["maxs"]))
        model = cls(ModelSpec.from_dict(man["spec"]), man["vocab_size"], stats)
        model.load_state_dict(load_params(d / "params.bin"))
        return model


class Encoder(_EncodingPath, LayerGraph):
    """Every layer up to and including the shared representation layer (heads excluded)."""

    def __init__(self, model: NeuralModel):
        super().__init__()
        if not isinstance(model, NeuralModel) or not model.has_representation:
            raise ConfigError("only mlp/rnn models expose a representation layer")
        self.spec, self.kind = model.spec, model.kind
        self.stats, self.vocab_size = model.stats, model.vocab_size
        for name, layer in model.layers.items():
            if name != "heads":
                self.add(name, copy.deepcopy(layer))
        self.trunk = list(model.trunk)

    has_representation = True

    def __call__(self, batch: Batch) -> np.ndarray:
        return self.represent(batch)

    def save(self, directory) -> None:
        from pathlib import Path
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_params(d / "params.bin", self.state_dict())
        save_manifest(d / "manifest.json", {
            "spec": self.spec.to_dict(), "vocab_size": self.vocab_size, "encoder": True,
            "stats": {"features": list(self.stats.features), "mins": self.stats.mins.tolist(),
                      "maxs": self.stats.maxs.tolist()},
            "layers": self.layer_configs()})

    @classmethod
    def load(cls, directory) -> "Encoder":
        from pathlib import Path
        d = Path(directory)
        man = load_manifest(d / "manifest.json")
        st = man["stats"]
        stats = ScalingStats(tuple(st["features"]), np.array(st["mins"]), np.array(st["maxs"]))
        enc = cls(NeuralModel(ModelSpec.from_dict(man["spec"]), man["vocab_size"], stats))
        enc.load_state_dict(load_params(d / "params.bin"))
        return enc


def extract_encoder(model) -> Encoder:
    return Encoder(model)


def build_model(spec: ModelSpec, vocab_size: int = 0, stats: ScalingStats | None = None, seed: int = 0):
    if spec.kind == "lag1":
        return Lag1Model()
    if spec.kind == "median":
        return MedianModel(spec)
    if stats is None:
        raise ConfigError(f"{spec.kind} needs scaling stats")
    return NeuralModel(spec, vocab_size, stats, seed)


def param_count(spec: ModelSpec, vocab_size: int) -> int:
    """Closed-form number of trainable parameters for a parametric spec."""
    from salience.nn import dense_param_count, embedding_param_count, lstm_param_count
    if spec.kind not in PARAMETRIC:
        return 0
    n = embedding_param_count(vocab_size, spec.embedding_dim)
    width = N_METRICS + spec.embedding_dim
    if spec.kind in ("mlp", "rnn"):
        for _ in range(spec.layers):
            n += (lstm_param_count(width, spec.units) if spec.kind == "rnn"
                  else dense_param_count(width, spec.units))
            width = spec.units
        n += dense_param_count(width, spec.units)
    return n + dense_param_count(width, N_TARGETS)
