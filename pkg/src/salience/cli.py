"""Command-line front end: one subcommand per pipeline stage, all state in a work directory.

    salience simulate  --config configs/desk.ini --workdir runs/desk
    salience prepare   ...   tune, train --model rnn, crossval, report, encode, embed, partition

Every invocation appends one line to ``<workdir>/manifest.jsonl``. Failures print a
single ``error code=<n> kind=<kind> message=<json string>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from salience import __version__
from salience.analysis import (aligned_embed, elbow, encode_dataset, inertia_curve, max_unit_mic,
                               partition_profiles, pc1_spearman, pca, read_latents, standardize,
                               unit_transducer, write_latents)
from salience.analysis import io as aio
from salience.analysis.kmeans import assign
from salience.analysis.profiles import discounted_future_sum
from salience.config import RunConfig, load_config
from salience.data import TARGETS, fit_scaling_stats, percentile_filter, read_sequences, write_sequences
from salience.errors import ConfigError, DataError, SalienceError
from salience.models import KINDS, PARAMETRIC, ModelSpec, build_model, extract_encoder
from salience.simulator import simulate_population
from salience.training import (compare_models, cross_validate, derive_seed, fit, read_cells, split,
                               tune_model, write_cells, write_report)

log = logging.getLogger("salience")

STAGES = ("simulate", "prepare", "tune", "train", "crossval", "report", "encode", "embed", "partition")
EXPECTED_ORDER = ("rnn", "mlp", "elastic_net", "median", "lag1")


@dataclass
class RunManifest:
    subcommand: str
    config: str
    seed: int
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    version: str = __version__
    duration_s: float = 0.0
    status: str = "ok"
    overrides: list[str] = field(default_factory=list)


class Context:
    def __init__(self, cfg: RunConfig, workdir: Path, manifest: RunManifest):
        self.cfg, self.workdir, self.manifest = cfg, workdir, manifest

    def seed(self, stage: str) -> int:
        return derive_seed(self.cfg.seed, STAGES.index(stage))

    def input(self, name: str, hint: str) -> Path:
        p = self.workdir / name
        if not p.exists():
            raise DataError(f"missing {p}; run `{hint}` first")
        self.manifest.inputs.append(name)
        return p

    def output(self, name: str) -> Path:
        p = self.workdir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.manifest.outputs.append(name)
        return p


def _json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def resolve_specs(ctx: Context, kinds) -> list[ModelSpec]:
    """Tuned specs where available, defaults otherwise."""
    tuned_path = ctx.workdir / "tuned.json"
    tuned = {}
    if tuned_path.exists():
        ctx.manifest.inputs.append("tuned.json")
        tuned = json.loads(tuned_path.read_text())
    specs = []
    for kind in kinds:
        if kind not in KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")
        if kind == "median":
            specs.append(ModelSpec("median", halflife=ctx.cfg.crossval.median_halflife))
        elif kind in tuned:
            specs.append(ModelSpec.from_dict(tuned[kind]["spec"]))
        else:
            if kind in PARAMETRIC:
                log.warning("no tuned spec for %s; using defaults", kind)
            specs.append(ModelSpec(kind))
    return specs


# ---------------------------------------------------------------- stages

def cmd_simulate(ctx: Context, args) -> None:
    cfg = ctx.cfg
    data = simulate_population(cfg.profiles, cfg.n_per_object, cfg.seed, cfg.population)
    write_sequences(ctx.output("dataset.csv"), data.sequences)
    log.info("simulated %d agents over %d objects", len(data), len(data.objects))


def cmd_prepare(ctx: Context, args) -> None:
    data = read_sequences(ctx.input("dataset.csv", "simulate"))
    filtered = percentile_filter(data, ctx.cfg.prepare.percentile)
    tuning, validation = split(filtered, ctx.cfg.prepare.tuning_fraction, ctx.seed("prepare"))
    write_sequences(ctx.output("tuning.csv"), tuning.sequences)
    write_sequences(ctx.output("validation.csv"), validation.sequences)
    fit_scaling_stats(validation.sequences).save(ctx.output("scaling.csv"))
    log.info("kept %d of %d agents; %d tuning / %d validation",
             len(filtered), len(data), len(tuning), len(validation))


def cmd_tune(ctx: Context, args) -> None:
    tc = ctx.cfg.tune
    tuning = read_sequences(ctx.input("tuning.csv", "prepare"))
    out = {}
    for kind in tc.models:
        if kind not in PARAMETRIC:
            raise ConfigError(f"only {PARAMETRIC} are tuned, got {kind!r}")
        res = tune_model(kind, tuning, tc.budget_epochs, replace(ctx.cfg.train, seed=ctx.seed("tune")),
                         tc.space(kind), tc.eta)
        spec = ModelSpec(kind, **res.best_config)
        out[kind] = {"spec": spec.to_dict(), "best_loss": res.best_loss,
                     "trials": [asdict(t) for t in res.trials]}
        log.info("tuned %s: %s (holdout %.3f)", kind, res.best_config, res.best_loss)
    _json(ctx.output("tuned.json"), out)


def cmd_train(ctx: Context, args) -> None:
    if not args.model:
        raise ConfigError("train needs --model")
    validation = read_sequences(ctx.input("validation.csv", "prepare"))
    (spec,) = resolve_specs(ctx, [args.model])
    stats = fit_scaling_stats(validation.sequences)
    seed = ctx.seed("train")
    model = build_model(spec, len(validation.vocabulary), stats, seed)
    res = fit(model, validation, replace(ctx.cfg.train, seed=seed))
    if spec.kind in PARAMETRIC:
        d = ctx.output(f"models/{spec.kind}")
        model.save(d)
    _json(ctx.output(f"models/{spec.kind}.history.json"),
          {"spec": spec.to_dict(), "history": res.history, "best_epoch": res.best_epoch,
           "best_loss": res.best_loss})


def cmd_crossval(ctx: Context, args) -> None:
    cv = ctx.cfg.crossval
    validation = read_sequences(ctx.input("validation.csv", "prepare"))
    specs = resolve_specs(ctx, cv.models)
    cells, fits = cross_validate(specs, validation, cv.k, replace(ctx.cfg.train, seed=ctx.seed("crossval")),
                                 jobs=ctx.cfg.jobs, timestep_quantile=cv.timestep_quantile, return_fits=True)
    write_cells(ctx.output("cells.csv"), cells)
    _json(ctx.output("crossval_fits.json"), {str(k): v for k, v in fits.items()})


def cmd_report(ctx: Context, args) -> None:
    cells = read_cells(ctx.input("cells.csv", "crossval"))
    present = {c.model for c in cells}
    report = compare_models(cells, [m for m in EXPECTED_ORDER if m in present])
    write_report(ctx.output("report.json"), report)
    for rank, m in enumerate(report["ranking"], 1):
        print(f"{rank}\t{m}\t{report['mean_global_smape'][m]:.3f}")


def cmd_encode(ctx: Context, args) -> None:
    ec = ctx.cfg.encode
    validation = read_sequences(ctx.input("validation.csv", "prepare"))
    seed = ctx.seed("encode")
    held, fit_part = split(validation, 1.0 - ec.fit_fraction, seed)
    for kind in ec.models:
        (spec,) = resolve_specs(ctx, [kind])
        if kind not in ("mlp", "rnn"):
            raise ConfigError(f"{kind} has no representation layer")
        stats = fit_scaling_stats(fit_part.sequences)
        model = build_model(spec, len(validation.vocabulary), stats, derive_seed(seed, KINDS.index(kind)))
        fit(model, fit_part, replace(ctx.cfg.train, seed=derive_seed(seed, KINDS.index(kind))))
        extract_encoder(model).save(ctx.output(f"encoders/{kind}"))
        write_latents(ctx.output(f"latents_{kind}.csv"), encode_dataset(model, held))


def _steps(latents, steps: int) -> list[int]:
    top = int(latents.lengths().max())
    return list(range(1, min(steps, top) + 1))


def cmd_embed(ctx: Context, args) -> None:
    ec = ctx.cfg.embed
    seed = ctx.seed("embed")
    latents = read_latents(ctx.input(f"latents_{ec.model}.csv", "encode"))
    steps = _steps(latents, ec.steps)
    views = [latents.at(t) for t in steps]
    out = f"embed/{ec.model}"

    rows = []
    for v in views:
        nc = min(ec.pca_components, v.points.shape[1], v.points.shape[0])
        rows.append((v.t, pca(v.points, nc).cumulative))
    aio.write_pca(ctx.output(f"{out}/pca.csv"), rows)

    k = min(ec.n_neighbors, min(len(v.agent_ids) for v in views) - 1)
    results = aligned_embed([(v.agent_ids, v.points) for v in views], k, ec.min_dist, ec.epochs, seed,
                            ec.anchor_strength)
    aio.write_embeddings(ctx.output(f"{out}/embedding.csv"), results, [v.object_ids for v in views])
    aio.render_svg(ctx.output(f"{out}/embedding.svg"), results, [v.object_ids for v in views])

    if latents.preds is not None:
        t = min(ec.transducer_step, steps[-1])
        v = latents.at(t)
        rng = np.random.default_rng(derive_seed(seed, 1))
        units = np.sort(rng.choice(latents.width, min(ec.transducer_units, latents.width), replace=False))
        items = []
        for j, target in enumerate(TARGETS):
            dsum = np.array([discounted_future_sum(latents.preds[i][:, j], ec.discount, t) for i in v.index])
            for u in units:
                items.append((t, int(u), target, unit_transducer(v.points[:, u], dsum, ec.n_bins)))
        aio.write_transducers(ctx.output(f"{out}/transducer_curves.csv"),
                              ctx.output(f"{out}/transducer_stats.csv"), items)

    recovery = []
    for kind in ("rnn", "mlp"):
        path = ctx.workdir / f"latents_{kind}.csv"
        if not path.exists():
            continue
        ls = latents if kind == ec.model else read_latents(path)
        if ls.latent is None:
            continue
        for t in _steps(ls, ec.steps):
            v = ls.at(t)
            recovery.append({"model": kind, "t": t, "n": len(v.agent_ids),
                             "max_unit_mic": max_unit_mic(v.points, v.latent, ec.recovery_max_n,
                                                          derive_seed(seed, 2, t)),
                             "pc1_spearman": pc1_spearman(v.points, v.latent)})
    if recovery:
        _json(ctx.output(f"{out}/recovery.json"), recovery)


def cmd_partition(ctx: Context, args) -> None:
    pc = ctx.cfg.partition
    latents = read_latents(ctx.input(f"latents_{pc.model}.csv", "encode"))
    validation = read_sequences(ctx.input("validation.csv", "prepare"))
    view = latents.at(pc.timestep)
    fit_points = (np.vstack([latents.at(t).points for t in range(1, pc.timestep + 1)])
                  if pc.pooled else view.points)
    mu, sd = fit_points.mean(axis=0), fit_points.std(axis=0)
    scale = lambda p: (p - mu) / np.where(sd > 0, sd, 1.0)
    fit_points = scale(fit_points)
    k_max = min(pc.k_max, fit_points.shape[0])
    sols = inertia_curve(fit_points, pc.k_min, k_max, seed=ctx.seed("partition"), batch_size=pc.batch_size,
                         n_init=pc.n_init, max_epochs=pc.max_epochs, jobs=ctx.cfg.jobs)
    curve = [(pc.k_min + i, s.inertia) for i, s in enumerate(sols)]
    knee = elbow(curve)
    best = sols[knee.k - pc.k_min]
    labels, _ = assign(scale(view.points), best.centroids)
    assignments = dict(zip(view.agent_ids, (int(l) for l in labels)))
    profiles = partition_profiles(validation, assignments, pc.profile_steps)
    out = f"partition/{pc.model}"
    aio.write_inertia(ctx.output(f"{out}/inertia.csv"), curve)
    aio.write_assignments(ctx.output(f"{out}/assignments.csv"), assignments)
    aio.write_profiles(ctx.output(f"{out}/profiles.csv"), profiles)
    _json(ctx.output(f"{out}/partition.json"),
          {"k": knee.k, "knee_found": knee.knee, "timestep": pc.timestep, "pooled": pc.pooled,
           "inertia_curve": curve, "chord_distances": list(knee.distances),
           "sizes": {str(p): int((labels == p).sum()) for p in range(knee.k)}})


COMMANDS = {
    "simulate": cmd_simulate, "prepare": cmd_prepare, "tune": cmd_tune, "train": cmd_train,
    "crossval": cmd_crossval, "report": cmd_report, "encode": cmd_encode, "embed": cmd_embed,
    "partition": cmd_partition,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI run configuration")
    common.add_argument("--workdir", required=True, help="directory holding all stage inputs/outputs")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--jobs", type=int, help="worker processes for folds/restarts (results do not depend on it)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config entry; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")
    ap = argparse.ArgumentParser(prog="salience", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", metavar="{" + ",".join(STAGES) + "}")
    sub.required = True
    for name in STAGES:
        p = sub.add_parser(name, parents=[common])
        if name == "train":
            p.add_argument("--model", choices=KINDS)
    return ap


def error_line(exc: SalienceError) -> str:
    return f"error code={exc.exit_code} kind={exc.kind} message={json.dumps(str(exc))}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.jobs is not None:
        overrides.append(f"run.jobs={args.jobs}")
    workdir = Path(args.workdir)
    manifest = RunManifest(args.command, str(args.config), -1, overrides=overrides)
    start = time.perf_counter()
    code = 0
    try:
        cfg = load_config(args.config, overrides)
        if cfg.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        manifest.seed = cfg.seed
        workdir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](Context(cfg, workdir, manifest), args)
    except SalienceError as exc:
        print(error_line(exc), file=sys.stderr)
        manifest.status = f"error:{exc.kind}"
        code = exc.exit_code
    finally:
        manifest.duration_s = round(time.perf_counter() - start, 3)
        if workdir.is_dir():
            with open(workdir / "manifest.jsonl", "a") as fh:
                fh.write(json.dumps(asdict(manifest), sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
