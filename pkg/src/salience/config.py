"""Run configuration: one flat INI file with a section per pipeline stage.

Object profiles live in ``[object:<id>]`` sections; vectors are comma separated in
metric order (absence, session_time, active_time, session_activity).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from salience.errors import ConfigError
from salience.simulator import REFERENCE_MEDIANS, ObjectProfile, PopulationConfig
from salience.training import TrainConfig

# metric means at V = 0, as multiples of the reference medians
FLOOR_RATIOS = (4.0, 0.25, 0.4, 0.25)


def reference_profile(name: str, noise_sd: float = 0.35, reward_noise_sd: float = 0.3) -> ObjectProfile:
    """Uncalibrated profile for one of the six reference games."""
    length, *medians = REFERENCE_MEDIANS[name]
    floor = tuple(m * r for m, r in zip(medians, FLOOR_RATIOS))
    return ObjectProfile(name, noise_sd=noise_sd, reward_noise_sd=reward_noise_sd,
                         target_medians=tuple(medians), floor=floor, target_length=float(length))


def _vec(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _fmt_vec(v) -> str:
    return ", ".join(repr(float(x)) for x in v)


def format_profile_section(p: ObjectProfile) -> str:
    return "\n".join([
        f"[object:{p.object_id}]",
        f"base_reward = {p.base_reward!r}",
        f"reward_decay = {p.reward_decay!r}",
        f"noise_sd = {p.noise_sd!r}",
        f"reward_noise_sd = {p.reward_noise_sd!r}",
        f"behaviour_gain = {_fmt_vec(p.behaviour_gain)}",
        f"target_medians = {_fmt_vec(p.target_medians)}",
        f"floor = {_fmt_vec(p.floor)}",
        f"calibration_v = {p.calibration_v!r}",
        f"target_length = {p.target_length!r}",
        "",
    ])


def parse_profile(name: str, section) -> ObjectProfile:
    try:
        return ObjectProfile(
            object_id=name,
            base_reward=section.getfloat("base_reward", 1.0),
            reward_decay=section.getfloat("reward_decay"),
            noise_sd=section.getfloat("noise_sd", 0.35),
            reward_noise_sd=section.getfloat("reward_noise_sd", 0.0),
            behaviour_gain=_vec(section["behaviour_gain"]),
            target_medians=_vec(section["target_medians"]),
            floor=_vec(section["floor"]),
            calibration_v=section.getfloat("calibration_v", 1.0),
            target_length=section.getfloat("target_length", 3.0),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"[object:{name}]: {exc}") from exc


@dataclass(frozen=True)
class PrepareConfig:
    percentile: float = 99.0
    tuning_fraction: float = 0.1


@dataclass(frozen=True)
class TuneConfig:
    budget_epochs: int = 40
    eta: int = 3
    models: tuple[str, ...] = ("elastic_net", "mlp", "rnn")
    layers: tuple[int, ...] = (1, 2, 3)
    units: tuple[int, ...] = (32, 64, 128)
    embedding_dim: tuple[int, ...] = (4, 8, 16)
    learning_rate: tuple[float, ...] = (1e-3, 3e-4)
    l1: tuple[float, ...] = (1e-4, 1e-2)
    l2: tuple[float, ...] = (1e-4, 1e-2)

    def space(self, kind: str) -> dict[str, list]:
        """Search space for ``kind``; mlp and rnn share theirs."""
        if kind == "elastic_net":
            return {"embedding_dim": list(self.embedding_dim), "learning_rate": list(self.learning_rate),
                    "l1": list(self.l1), "l2": list(self.l2)}
        return {"layers": list(self.layers), "units": list(self.units),
                "embedding_dim": list(self.embedding_dim), "learning_rate": list(self.learning_rate)}


@dataclass(frozen=True)
class CrossvalConfig:
    k: int = 10
    models: tuple[str, ...] = ("lag1", "median", "elastic_net", "mlp", "rnn")
    timestep_quantile: float = 95.0
    median_halflife: float = 1.0


@dataclass(frozen=True)
class EncodeConfig:
    fit_fraction: float = 0.7
    models: tuple[str, ...] = ("rnn", "mlp")


@dataclass(frozen=True)
class EmbedConfig:
    n_neighbors: int = 50
    min_dist: float = 0.8
    epochs: int = 2000
    pca_components: int = 20
    steps: int = 4
    transducer_units: int = 10
    n_bins: int = 10
    discount: float = 0.1
    transducer_step: int = 4
    recovery_max_n: int = 1000
    anchor_strength: float = 0.5
    model: str = "rnn"


@dataclass(frozen=True)
class PartitionConfig:
    k_min: int = 2
    k_max: int = 10
    n_init: int = 50
    max_epochs: int = 300
    batch_size: int = 512
    timestep: int = 4
    pooled: bool = False
    profile_steps: int = 8
    model: str = "rnn"


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    n_per_object: int = 2000
    population: PopulationConfig = field(default_factory=PopulationConfig)
    profiles: list[ObjectProfile] = field(default_factory=list)
    prepare: PrepareConfig = field(default_factory=PrepareConfig)
    tune: TuneConfig = field(default_factory=TuneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    crossval: CrossvalConfig = field(default_factory=CrossvalConfig)
    encode: EncodeConfig = field(default_factory=EncodeConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)


def _coerce(default, text: str):
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if default and isinstance(default[0], (int, float)) and not isinstance(default[0], bool):
            kind = type(default[0])
            return tuple(kind(float(t)) if kind is int else kind(t) for t in items)
        return tuple(items)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _section(obj, section, name: str):
    if section is None:
        return obj
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, text in section.items():
        if key not in known:
            raise ConfigError(f"[{name}]: unknown key {key!r}")
        try:
            updates[key] = _coerce(getattr(obj, key), text)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def load_config(path, overrides=()) -> RunConfig:
    """Parse ``path``; ``overrides`` are ``section.key=value`` strings applied on top."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case sensitive (max_T)
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for item in overrides:
        target, sep, value = item.partition("=")
        section, dot, key = target.strip().rpartition(".")
        if not (sep and dot and section and key):
            raise ConfigError(f"override {item!r} is not section.key=value")
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value.strip()
    known = {"run", "simulation", "prepare", "tune", "train", "crossval", "encode", "embed", "partition"}
    for name in cp.sections():
        if name not in known and not name.startswith("object:"):
            raise ConfigError(f"{path}: unknown section [{name}]")
    get = lambda n: cp[n] if cp.has_section(n) else None
    cfg = RunConfig()
    run = get("run")
    if run is not None:
        cfg.seed = run.getint("seed", cfg.seed)
        cfg.jobs = run.getint("jobs", cfg.jobs)
    sim = get("simulation")
    if sim is not None:
        sim = dict(sim)
        cfg.n_per_object = int(sim.pop("n_per_object", cfg.n_per_object))
        cfg.population = _section(cfg.population, sim, "simulation")
    cfg.profiles = [parse_profile(n.split(":", 1)[1], cp[n]) for n in cp.sections() if n.startswith("object:")]
    cfg.prepare = _section(cfg.prepare, get("prepare"), "prepare")
    cfg.tune = _section(cfg.tune, get("tune"), "tune")
    cfg.train = _section(cfg.train, get("train"), "train")
    cfg.crossval = _section(cfg.crossval, get("crossval"), "crossval")
    cfg.encode = _section(cfg.encode, get("encode"), "encode")
    cfg.embed = _section(cfg.embed, get("embed"), "embed")
    cfg.partition = _section(cfg.partition, get("partition"), "partition")
    if not cfg.profiles:
        raise ConfigError(f"{path}: no [object:<id>] sections")
    return cfg
