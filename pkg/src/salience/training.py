"""Splitting, Hyperband tuning, early-stopped training, k-fold evaluation and ranking."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from salience.data import (N_TARGETS, TARGETS, Dataset, fit_scaling_stats, nearest_rank)
from salience.errors import ConfigError, DataError, NumericalError
from salience.models import (KINDS, PARAMETRIC, Batch, MedianModel, ModelSpec, NeuralModel,
                             build_model, make_batch, smape_terms)
from salience.nn import AdamState, adam_step

log = logging.getLogger(__name__)


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    early_stop_min_delta: float = 1e-4
    patience: int = 10
    holdout_fraction: float = 0.2
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("patience, max_epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class EvalCell:
    model: str
    fold: int
    object_id: str
    timestep: int
    target: str
    smape: float


# ---------------------------------------------------------------- splitting

def split(data: Dataset, tuning_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Agent-level random split into (tuning, validation)."""
    if not 0 < tuning_fraction < 1:
        raise ConfigError("tuning_fraction must lie in (0, 1)")
    n = len(data)
    n_tune = int(round(n * tuning_fraction))
    if n_tune == 0 or n_tune == n:
        raise DataError(f"dataset of {n} agents is too small to split at {tuning_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(perm[:n_tune])), data.subset(np.sort(perm[n_tune:]))


def stratified_folds(data: Dataset, k: int, seed: int) -> np.ndarray:
    """Fold index per sequence; agents are shuffled within object and dealt round-robin."""
    if k < 2:
        raise ConfigError("k must be >= 2")
    if len(data) < k:
        raise DataError(f"{len(data)} agents cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(data), dtype=np.int64)
    by_obj = defaultdict(list)
    for i, s in enumerate(data.sequences):
        by_obj[s.object_id].append(i)
    pos = 0
    for obj in data.objects:
        idx = np.array(by_obj.get(obj, []), dtype=np.int64)
        rng.shuffle(idx)
        folds[idx] = (pos + np.arange(len(idx))) % k
        pos += len(idx)
    return folds


# ---------------------------------------------------------------- batching

def bucket_indices(lengths: Sequence[int], batch_size: int, seed: int) -> list[np.ndarray]:
    """Same order as data.bucket_batches, expressed as index arrays."""
    rng = np.random.default_rng(seed)
    buckets = defaultdict(list)
    for i, T in enumerate(lengths):
        buckets[T].append(i)
    batches = []
    for T in sorted(buckets):
        idx = np.array(buckets[T])
        rng.shuffle(idx)
        batches.extend(idx[i:i + batch_size] for i in range(0, len(idx), batch_size))
    return [batches[b] for b in rng.permutation(len(batches))]


class BatchCache:
    """Pre-stacked per-length arrays so epochs only slice, never restack."""

    def __init__(self, data: Dataset, stats, vocabulary):
        self.data = data
        self.lengths = [s.T for s in data.sequences]
        self.pos = {}
        self.full: dict[int, Batch] = {}
        groups = defaultdict(list)
        for i, s in enumerate(data.sequences):
            self.pos[i] = (s.T, len(groups[s.T]))
            groups[s.T].append(s)
        for T, seqs in groups.items():
            self.full[T] = make_batch(seqs, vocabulary, stats)

    def take(self, idx: np.ndarray) -> Batch:
        T = self.lengths[idx[0]]
        rows = np.array([self.pos[i][1] for i in idx])
        b = self.full[T]
        return Batch(b.raw[rows], b.x[rows], b.obj[rows], b.y[rows],
                     [b.agent_ids[r] for r in rows], [b.object_ids[r] for r in rows],
                     None if b.latent is None else b.latent[rows])

    def groups(self, batch_size: int | None = None):
        for T in sorted(self.full):
            b = self.full[T]
            n = len(b)
            step = batch_size or n
            for i in range(0, n, step):
                sl = slice(i, i + step)
                yield Batch(b.raw[sl], b.x[sl], b.obj[sl], b.y[sl], b.agent_ids[sl],
                            b.object_ids[sl], None if b.latent is None else b.latent[sl])


# ---------------------------------------------------------------- training

class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a ``min_delta`` improvement."""

    def __init__(self, min_delta: float = 1e-4, patience: int = 10):
        self.min_delta, self.patience = min_delta, patience
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> tuple[bool, bool]:
        """Record one epoch; returns (improved, should_stop)."""
        if self.best - loss > self.min_delta:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience


@dataclass
class FitResult:
    model: object
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = math.inf
    stopped_epoch: int = 0


def evaluate_loss(model, cache: BatchCache) -> float:
    """Summed per-target SMAPE over every element of the cached set."""
    sums = np.zeros(N_TARGETS)
    count = 0
    for b in cache.groups(1024):
        terms = smape_terms(b.y, model.predict(b))
        sums += terms.reshape(-1, N_TARGETS).sum(axis=0)
        count += terms.shape[0] * terms.shape[1]
    return float(100.0 * sums.sum() / count)


def holdout_split(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    n = len(data)
    n_hold = max(1, int(round(n * fraction)))
    if n_hold >= n:
        raise DataError("training set too small for an early-stopping holdout")
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(perm[n_hold:])), data.subset(np.sort(perm[:n_hold]))


def fit(model, train: Dataset, cfg: TrainConfig) -> FitResult:
    """Adam on the summed SMAPE with holdout early stopping; restores the best parameters."""
    if not isinstance(model, NeuralModel):
        return FitResult(model.fit(train))
    fit_set, hold_set = holdout_split(train, cfg.holdout_fraction, cfg.seed)
    vocab = train.vocabulary
    fit_cache = BatchCache(fit_set, model.stats, vocab)
    hold_cache = BatchCache(hold_set, model.stats, vocab)
    params = dict(model.named_params())
    grads = dict(model.named_grads())
    opt = AdamState(lr=model.spec.learning_rate)
    stopper = EarlyStopping(cfg.early_stop_min_delta, cfg.patience)
    result = FitResult(model)
    best_state = model.state_dict()
    for epoch in range(1, cfg.max_epochs + 1):
        total, n = 0.0, 0
        for idx in bucket_indices(fit_cache.lengths, cfg.batch_size, derive_seed(cfg.seed, epoch)):
            batch = fit_cache.take(idx)
            loss = model.loss_and_backward(batch)
            if not math.isfinite(loss):
                raise NumericalError(f"{model.kind}: non-finite training loss at epoch {epoch}")
            grads = dict(model.named_grads())
            adam_step(params, grads, opt)
            total += loss * len(batch)
            n += len(batch)
        hold = evaluate_loss(model, hold_cache)
        if not math.isfinite(hold):
            raise NumericalError(f"{model.kind}: non-finite holdout loss at epoch {epoch}")
        improved, stop = stopper.update(epoch, hold)
        if improved:
            best_state = model.state_dict()
        result.history.append({"epoch": epoch, "train_loss": total / n, "holdout_loss": hold})
        result.stopped_epoch = epoch
        if stop:
            break
    model.load_state_dict(best_state)
    result.best_epoch, result.best_loss = stopper.best_epoch, stopper.best
    return result


def train_model(spec: ModelSpec, train: Dataset, cfg: TrainConfig, seed: int = 0) -> FitResult:
    """Fit scaling stats on ``train``, build ``spec`` and fit it."""
    stats = fit_scaling_stats(train.sequences)
    model = build_model(spec, len(train.vocabulary), stats, seed)
    return fit(model, train, cfg)


# ---------------------------------------------------------------- hyperband

@dataclass(frozen=True)
class Trial:
    bracket: int
    rung: int
    config: dict
    epochs: int
    loss: float


@dataclass
class HyperbandResult:
    best_config: dict
    best_loss: float
    trials: list[Trial]


def hyperband_schedule(max_resource: float, eta: int = 3) -> list[list[tuple[int, float]]]:
    """(n_configs, resource) per rung for each bracket s = s_max..0 of one Hyperband iteration."""
    if max_resource < eta:
        raise ConfigError(f"budget {max_resource} must be >= eta {eta}")
    s_max = int(math.floor(math.log(max_resource) / math.log(eta) + 1e-9))
    brackets = []
    for s in range(s_max, -1, -1):
        n = int(math.ceil((s_max + 1) / (s + 1) * eta ** s))
        r = max_resource * eta ** (-s)
        brackets.append([(int(n * eta ** (-i)), r * eta ** i) for i in range(s + 1)])
    return brackets


def config_space(space: dict[str, Sequence]) -> list[dict]:
    if not space or any(len(v) == 0 for v in space.values()):
        raise ConfigError("hyperparameter space is empty")
    keys = sorted(space)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(space[k] for k in keys))]


def hyperband_search(space: dict[str, Sequence], evaluate: Callable[[dict, int], float],
                     budget_epochs: int, eta: int = 3, seed: int = 0) -> HyperbandResult:
    """One full Hyperband iteration over a finite space; lowest holdout loss wins.

    ``evaluate(config, epochs)`` trains from scratch for ``epochs`` and returns the loss.
    """
    candidates = config_space(space)
    rng = np.random.default_rng(seed)
    trials: list[Trial] = []
    best = (math.inf, None)
    for b, rungs in enumerate(hyperband_schedule(budget_epochs, eta)):
        n0 = rungs[0][0]
        order = rng.permutation(len(candidates))
        if n0 < len(candidates):
            order = order[:n0]
        alive = [candidates[i] for i in order]
        for i, (_, resource) in enumerate(rungs):
            epochs = max(1, int(round(resource)))
            losses = []
            for cfg in alive:
                loss = float(evaluate(cfg, epochs))
                trials.append(Trial(b, i, cfg, epochs, loss))
                losses.append(loss if math.isfinite(loss) else math.inf)
                if loss < best[0]:
                    best = (loss, cfg)
            keep = max(1, int(len(alive) / eta)) if i + 1 < len(rungs) else len(alive)
            ranked = sorted(range(len(alive)), key=lambda j: (losses[j], j))
            alive = [alive[j] for j in ranked[:keep]]
    if best[1] is None:
        raise NumericalError("hyperband: every configuration diverged")
    return HyperbandResult(best[1], best[0], trials)


DEFAULT_SPACES = {
    "mlp": {"layers": [1, 2, 3], "units": [32, 64, 128], "embedding_dim": [4, 8, 16],
            "learning_rate": [1e-3, 3e-4]},
    "rnn": {"layers": [1, 2, 3], "units": [32, 64, 128], "embedding_dim": [4, 8, 16],
            "learning_rate": [1e-3, 3e-4]},
    "elastic_net": {"embedding_dim": [4, 8, 16], "learning_rate": [1e-3, 3e-4],
                    "l1": [1e-4, 1e-2], "l2": [1e-4, 1e-2]},
}


def tune_model(kind: str, tuning: Dataset, budget_epochs: int = 40, cfg: TrainConfig | None = None,
               space: dict | None = None, eta: int = 3) -> HyperbandResult:
    """Hyperband over ``space`` with losses measured on a holdout of the tuning set."""
    cfg = cfg or TrainConfig()
    space = space or DEFAULT_SPACES[kind]
    fit_part, hold_part = holdout_split(tuning, cfg.holdout_fraction, derive_seed(cfg.seed, 7))
    stats = fit_scaling_stats(fit_part.sequences)
    hold_cache = BatchCache(hold_part, stats, tuning.vocabulary)

    def evaluate(config: dict, epochs: int) -> float:
        spec = ModelSpec(kind, **config)
        model = NeuralModel(spec, len(tuning.vocabulary), stats, derive_seed(cfg.seed, 11))
        try:
            fit(model, fit_part, replace(cfg, max_epochs=epochs))
        except NumericalError:
            return math.inf
        return evaluate_loss(model, hold_cache)

    return hyperband_search(space, evaluate, budget_epochs, eta, derive_seed(cfg.seed, KINDS.index(kind)))


# ---------------------------------------------------------------- cross-validation

def timestep_limits(data: Dataset, quantile: float | None = 95) -> dict[str, int]:
    """Last evaluated target step per object (nearest-rank length quantile minus one)."""
    out = {}
    for obj, seqs in data.by_object().items():
        lengths = [s.T for s in seqs]
        top = max(lengths) if quantile is None else nearest_rank(lengths, quantile)
        out[obj] = int(top) - 1
    return out


def predict_dataset(model, data: Dataset, stats, vocabulary) -> list[tuple[Batch, np.ndarray]]:
    cache = BatchCache(data, stats, vocabulary)
    return [(b, model.predict(b)) for b in cache.groups(1024)]


def evaluation_cells(kind: str, fold: int, outputs, limits: dict[str, int]) -> list[EvalCell]:
    sums: dict[tuple[str, int], np.ndarray] = defaultdict(lambda: np.zeros(N_TARGETS))
    counts: dict[tuple[str, int], int] = defaultdict(int)
    for batch, pred in outputs:
        terms = smape_terms(batch.y, pred)
        for row, obj in enumerate(batch.object_ids):
            for t in range(min(batch.steps, limits[obj])):
                sums[obj, t + 1] += terms[row, t]
                counts[obj, t + 1] += 1
    cells = []
    for (obj, t) in sorted(sums):
        mean = 100.0 * sums[obj, t] / counts[obj, t]
        cells.extend(EvalCell(kind, fold, obj, t, TARGETS[j], float(mean[j])) for j in range(N_TARGETS))
    return cells


def _run_fold(args):
    specs, validation, folds, fold, cfg, limits = args
    train = validation.subset(np.flatnonzero(folds != fold))
    test = validation.subset(np.flatnonzero(folds == fold))
    stats = fit_scaling_stats(train.sequences)
    cells, fits = [], {}
    for spec in specs:
        seed = derive_seed(cfg.seed, fold, KINDS.index(spec.kind))
        model = build_model(spec, len(validation.vocabulary), stats, seed)
        res = fit(model, train, replace(cfg, seed=seed))
        outputs = predict_dataset(model, test, stats, validation.vocabulary)
        cells.extend(evaluation_cells(spec.kind, fold, outputs, limits))
        fits[spec.kind] = {"best_epoch": res.best_epoch, "stopped_epoch": res.stopped_epoch,
                           "best_holdout": res.best_loss}
        log.info("fold %d %s: best epoch %s", fold, spec.kind, res.best_epoch)
    return fold, cells, fits


def cross_validate(specs, validation: Dataset, k: int = 10, cfg: TrainConfig | None = None,
                   jobs: int = 1, timestep_quantile: float | None = 95,
                   return_fits: bool = False):
    """k-fold evaluation; one EvalCell per (model, fold, object, timestep, target)."""
    cfg = cfg or TrainConfig()
    if isinstance(specs, ModelSpec):
        specs = [specs]
    folds = stratified_folds(validation, k, cfg.seed)
    limits = timestep_limits(validation, timestep_quantile)
    jobs_args = [(list(specs), validation, folds, f, cfg, limits) for f in range(k)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_fold, jobs_args))
    else:
        results = [_run_fold(a) for a in jobs_args]
    results.sort(key=lambda r: r[0])
    cells = [c for _, cs, _ in results for c in cs]
    if return_fits:
        return cells, {f: fits for f, _, fits in results}
    return cells


# ---------------------------------------------------------------- comparison

def fold_global_smape(cells: Iterable[EvalCell]) -> dict[str, dict[int, float]]:
    """Per (model, fold): mean over (object, timestep) cells of the 5-target sum divided by 5."""
    sums = defaultdict(float)
    for c in cells:
        sums[c.model, c.fold, c.object_id, c.timestep] += c.smape
    per = defaultdict(lambda: defaultdict(list))
    for (m, f, _, _), total in sums.items():
        per[m][f].append(total / N_TARGETS)
    return {m: {f: float(np.mean(v)) for f, v in sorted(fs.items())} for m, fs in per.items()}


def compare_models(cells: Sequence[EvalCell], expected_order: Sequence[str] | None = None) -> dict:
    """Mean global SMAPE per model, per-target means and paired per-fold differences."""
    glob = fold_global_smape(cells)
    fold_sets = {m: tuple(sorted(f)) for m, f in glob.items()}
    if len(set(fold_sets.values())) > 1:
        raise DataError(f"models were evaluated on different folds: {fold_sets}")
    means = {m: float(np.mean(list(f.values()))) for m, f in glob.items()}
    ranking = sorted(means, key=lambda m: (means[m], m))
    per_target = defaultdict(lambda: defaultdict(list))
    for c in cells:
        per_target[c.model][c.target].append(c.smape)
    paired = {}
    for a, b in itertools.permutations(ranking, 2):
        diffs = [glob[a][f] - glob[b][f] for f in glob[a]]
        paired[f"{a}|{b}"] = {
            "mean_difference": float(np.mean(diffs)),
            "wins": int(sum(d < 0 for d in diffs)),
            "losses": int(sum(d > 0 for d in diffs)),
            "ties": int(sum(d == 0 for d in diffs)),
        }
    report = {
        "ranking": ranking,
        "mean_global_smape": means,
        "fold_global_smape": {m: {str(f): v for f, v in fs.items()} for m, fs in glob.items()},
        "per_target_smape": {m: {t: float(np.mean(v)) for t, v in ts.items()}
                             for m, ts in per_target.items()},
        "paired": paired,
    }
    if expected_order is not None:
        ok = all(means[a] < means[b] for a, b in zip(expected_order, expected_order[1:]))
        report["expected_order"] = list(expected_order)
        report["expected_order_holds"] = bool(ok)
    return report


def write_cells(path, cells: Sequence[EvalCell]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "fold", "object", "timestep", "target", "smape"))
        for c in cells:
            w.writerow((c.model, c.fold, c.object_id, c.timestep, c.target, repr(c.smape)))


def read_cells(path) -> list[EvalCell]:
    with open(path, newline="") as fh:
        return [EvalCell(r["model"], int(r["fold"]), r["object"], int(r["timestep"]), r["target"],
                         float(r["smape"])) for r in csv.DictReader(fh)]


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
