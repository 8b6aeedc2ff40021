"""Synthetic players whose session intensity is driven by a TD-learned salience value.

Each agent holds a scalar salience V for one object. After every session it receives a
(decaying, noisy) reward, scales it by its internal-state factor kappa and applies a
TD(0) update. Session metrics are log-normal around a softplus link of V, and the agent
stops playing once V falls below its churn threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from salience.data import Dataset, InteractionSequence, TelemetrySession
from salience.errors import ConfigError

ABSENCE, SESSION_TIME, ACTIVE_TIME, ACTIVITY = range(4)


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class ObjectProfile:
    """Rewarding properties of one object and the link from salience to behaviour.

    ``floor`` holds the metric means at V = 0 and ``behaviour_gain`` the slope of the
    softplus link, so ``mean = softplus(softplus_inv(floor) + behaviour_gain * V)``.
    Absence has a negative gain (higher salience, shorter breaks).
    """

    object_id: str
    base_reward: float = 1.0
    reward_decay: float = 0.8
    noise_sd: float = 0.3
    behaviour_gain: tuple[float, float, float, float] = (-1.0, 1.0, 1.0, 1.0)
    target_medians: tuple[float, float, float, float] = (84.0, 22.0, 64.0, 25.0)
    floor: tuple[float, float, float, float] = (250.0, 6.0, 30.0, 6.0)
    reward_noise_sd: float = 0.0
    calibration_v: float = 1.0
    target_length: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.reward_decay <= 1.0:
            raise ConfigError(f"{self.object_id}: reward_decay must lie in [0, 1]")
        if self.noise_sd < 0 or self.reward_noise_sd < 0:
            raise ConfigError(f"{self.object_id}: noise_sd must be >= 0")
        if any(f <= 0 for f in self.floor):
            raise ConfigError(f"{self.object_id}: floor values must be positive")

    def mean_metrics(self, V: float) -> np.ndarray:
        offset = softplus_inv(np.asarray(self.floor))
        return softplus(offset + np.asarray(self.behaviour_gain) * V)

    def calibrated(self, calibration_v: float, absence_v: float | None = None) -> "ObjectProfile":
        """Profile whose link maps ``calibration_v`` onto ``target_medians``.

        Absence is undefined for first sessions, so its gain may be solved at a separate
        calibration point ``absence_v`` (median salience over sessions 2..T).
        """
        gain = solve_behaviour_gain(self.floor, self.target_medians, calibration_v)
        if absence_v is not None:
            gain[ABSENCE] = solve_behaviour_gain(self.floor, self.target_medians, absence_v)[ABSENCE]
        return replace(self, behaviour_gain=tuple(float(g) for g in gain),
                       calibration_v=float(calibration_v))


def solve_behaviour_gain(floor, medians, calibration_v: float) -> np.ndarray:
    if calibration_v == 0:
        raise ConfigError("calibration_v must be non-zero")
    return (softplus_inv(np.asarray(medians, float)) - softplus_inv(np.asarray(floor, float))) / calibration_v


@dataclass(frozen=True)
class AgentState:
    V: float
    kappa: float = 1.0
    alpha: float = 0.1
    gamma: float = 0.5
    churn_threshold: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError(f"kappa must be > 0, got {self.kappa}")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")


def modulated_reward(r: float, kappa: float, form: str = "multiplicative") -> float:
    """Internal-state modulation of a reward: kappa * r, or r + ln(kappa) in the additive form."""
    if not kappa > 0:
        raise ConfigError(f"kappa must be > 0, got {kappa}")
    if form == "multiplicative":
        return kappa * r
    if form == "additive":
        return r + math.log(kappa)
    raise ConfigError(f"unknown modulation form {form!r}")


def td_update(state: AgentState, r_next: float) -> AgentState:
    # single-state agent: V(s_{t+1}) is the current estimate before the update
    delta = r_next + state.gamma * state.V - state.V
    return replace(state, V=state.V + state.alpha * delta)


def emit_session(state: AgentState, profile: ObjectProfile, rng: np.random.Generator) -> TelemetrySession:
    mean = profile.mean_metrics(state.V)
    if profile.noise_sd > 0:
        mean = mean * np.exp(profile.noise_sd * rng.standard_normal(4))
    active = min(max(float(mean[ACTIVE_TIME]), 0.0), 100.0)
    return TelemetrySession(
        absence=float(mean[ABSENCE]),
        session_time=float(mean[SESSION_TIME]),
        active_time=active,
        session_activity=int(round(float(mean[ACTIVITY]))),
        object_id=profile.object_id,
    )


def _run(profile: ObjectProfile, state: AgentState, max_T: int, rng: np.random.Generator,
         form: str) -> tuple[list[TelemetrySession], list[float]]:
    sessions, trace = [], []
    for k in range(max_T):
        s = emit_session(state, profile, rng)
        if k == 0:
            s = replace(s, absence=0.0)
        sessions.append(s)
        trace.append(state.V)
        if len(sessions) == max_T:
            break
        r = profile.base_reward * profile.reward_decay ** k
        if profile.reward_noise_sd > 0:
            sd = profile.reward_noise_sd
            r *= math.exp(sd * rng.standard_normal() - 0.5 * sd * sd)
        state = td_update(state, modulated_reward(r, state.kappa, form))
        if state.V < state.churn_threshold:
            break
    return sessions, trace


def simulate_agent(profile: ObjectProfile, init: AgentState, max_T: int, rng: np.random.Generator,
                   agent_id: str = "agent", form: str = "multiplicative") -> InteractionSequence | None:
    """Alternate emission, reward and TD update until churn or ``max_T`` sessions.

    Returns None when the agent churns before its second session; callers resample.
    """
    if max_T < 2:
        raise ConfigError("max_T must be >= 2")
    sessions, trace = _run(profile, init, max_T, rng, form)
    if len(sessions) < 2:
        return None
    return InteractionSequence(agent_id, profile.object_id, tuple(sessions), tuple(trace))


@dataclass(frozen=True)
class PopulationConfig:
    """Distributions of the per-agent parameters (inter-individual variation)."""

    max_T: int = 24
    gamma: float = 0.5
    kappa_log_sd: float = 0.5
    alpha_range: tuple[float, float] = (0.3, 0.8)
    threshold_range: tuple[float, float] = (0.5, 1.2)
    init_scale: float = 1.0
    form: str = "multiplicative"
    max_resample: int = 1000

    def __post_init__(self):
        if self.max_T < 2:
            raise ConfigError("max_T must be >= 2")
        if self.form not in ("multiplicative", "additive"):
            raise ConfigError(f"unknown modulation form {self.form!r}")


def draw_agent(profile: ObjectProfile, pop: PopulationConfig, rng: np.random.Generator) -> AgentState:
    kappa = float(np.exp(pop.kappa_log_sd * rng.standard_normal()))
    alpha = float(rng.uniform(*pop.alpha_range))
    threshold = float(rng.uniform(*pop.threshold_range)) * profile.base_reward
    return AgentState(V=pop.init_scale * kappa * profile.base_reward, kappa=kappa, alpha=alpha,
                      gamma=pop.gamma, churn_threshold=threshold)


def agent_rng(seed: int, object_index: int, agent_index: int) -> np.random.Generator:
    """Counter-based stream keyed on (seed, object, agent): schedule-independent results."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, object_index, agent_index])))


def _population_agent(profile, pop, seed, oi, i, latent_only=False):
    rng = agent_rng(seed, oi, i)
    for _ in range(pop.max_resample):
        init = draw_agent(profile, pop, rng)
        if latent_only:
            sessions, trace = _run(replace(profile, noise_sd=0.0), init, pop.max_T, rng, pop.form)
            if len(sessions) >= 2:
                return trace
            continue
        seq = simulate_agent(profile, init, pop.max_T, rng, f"{profile.object_id}-{i:05d}", pop.form)
        if seq is not None:
            return seq
    raise ConfigError(f"{profile.object_id}: agents churn before their second session; "
                      "check reward/threshold settings")


def simulate_population(profiles: Sequence[ObjectProfile], n_per_object: int, seed: int,
                        pop: PopulationConfig | None = None) -> Dataset:
    if n_per_object < 1:
        raise ConfigError("n_per_object must be >= 1")
    pop = pop or PopulationConfig()
    seqs = [_population_agent(p, pop, seed, oi, i)
            for oi, p in enumerate(profiles) for i in range(n_per_object)]
    return Dataset(seqs)


def latent_population(profile: ObjectProfile, n: int, seed: int, pop: PopulationConfig,
                      object_index: int = 0) -> list[list[float]]:
    """Latent salience traces only (no behaviour), used for calibration."""
    return [_population_agent(profile, pop, seed, object_index, i, latent_only=True) for i in range(n)]


def calibrate_profile(profile: ObjectProfile, pop: PopulationConfig, n: int = 2000, seed: int = 12345,
                      decay_bounds: tuple[float, float] = (0.0, 1.0), iters: int = 30) -> ObjectProfile:
    """Fit reward_decay to the target median length, then the link to the target medians.

    Sequence length grows with reward_decay, so bisection on the median length suffices.
    The calibration salience is the median V over all simulated sessions.
    """
    lo, hi = decay_bounds

    def median_len(decay):
        traces = latent_population(replace(profile, reward_decay=decay), n, seed, pop)
        return float(np.median([len(t) for t in traces]))

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if median_len(mid) < profile.target_length:
            lo = mid
        else:
            hi = mid
    decay = round(hi, 6)
    tuned = replace(profile, reward_decay=decay)
    traces = latent_population(tuned, n, seed, pop)
    v_ref = float(np.median(np.concatenate([np.asarray(t) for t in traces])))
    v_later = float(np.median(np.concatenate([np.asarray(t[1:]) for t in traces])))
    return tuned.calibrated(v_ref, v_later)


# Medians of the six games: number of sessions, absence, session time, active time %, activity.
REFERENCE_MEDIANS = {
    "hmg": (3, 84.0, 22.0, 64.0, 25.0),
    "hms": (8, 24.0, 28.0, 42.0, 6.0),
    "jc3": (7, 64.0, 162.0, 60.0, 19.0),
    "jc4": (5, 64.0, 133.0, 43.0, 46.0),
    "lis": (4, 143.0, 96.0, 48.0, 40.0),
    "lisbf": (4, 71.0, 102.0, 79.0, 23.0),
}
