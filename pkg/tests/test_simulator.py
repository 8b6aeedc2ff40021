import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import skew
from hypothesis import given
from hypothesis import strategies as st

from salience.config import load_config
from salience.data import write_sequences
from salience.errors import ConfigError
from salience.simulator import (AgentState, ObjectProfile, PopulationConfig, emit_session,
                                modulated_reward, simulate_agent, simulate_population, td_update)

from conftest import DESK


@pytest.fixture(scope="module")
def desk():
    return load_config(DESK)


def iterate_td(V, r, gamma, alpha, kappa=1.0, steps=10_000):
    s = AgentState(V=V, kappa=kappa, alpha=alpha, gamma=gamma)
    for _ in range(steps):
        s = td_update(s, modulated_reward(r, kappa))
    return s.V


def test_modulated_reward_examples():
    assert modulated_reward(0.5, 1.0) == 0.5
    assert modulated_reward(0.5, 2.0) == 1.0
    assert modulated_reward(0.5, 1.0, "additive") == 0.5
    assert modulated_reward(0.5, math.e, "additive") == pytest.approx(1.5)
    with pytest.raises(ConfigError):
        modulated_reward(0.5, 0.0)


def test_td_update_examples():
    s = td_update(AgentState(V=0.0, alpha=1.0, gamma=0.9), 1.0)
    assert s.V == 1.0
    s = td_update(AgentState(V=2.0, alpha=1.0, gamma=0.5), 0.0)
    assert s.V == 1.0


def test_td_fixpoint_and_kappa_linearity():
    v1 = iterate_td(0.0, 1.0, 0.5, 0.1)
    assert abs(v1 - 2.0) < 1e-6
    v2 = iterate_td(0.0, 1.0, 0.5, 0.1, kappa=2.0)
    assert abs(v2 - 2.0 * v1) < 1e-9


@given(st.floats(-5, 5), st.floats(0.01, 1.0), st.floats(0.0, 0.95), st.floats(0.1, 3.0))
def test_td_contraction(v0, alpha, gamma, r):
    fix = r / (1 - gamma)
    s = AgentState(V=v0, alpha=alpha, gamma=gamma)
    gap = abs(s.V - fix)
    for _ in range(20):
        s = td_update(s, r)
        new = abs(s.V - fix)
        assert new <= gap + 1e-12
        gap = new


def test_state_validation():
    with pytest.raises(ConfigError):
        AgentState(V=0, kappa=0)
    with pytest.raises(ConfigError):
        AgentState(V=0, gamma=1.0)
    with pytest.raises(ConfigError):
        ObjectProfile("o", reward_decay=1.5)


def test_emit_monotone_in_v():
    p = ObjectProfile("o", noise_sd=0.0)
    rng = np.random.default_rng(0)
    lo = emit_session(AgentState(V=0.5), p, rng)
    hi = emit_session(AgentState(V=1.5), p, rng)
    assert lo.session_time < hi.session_time
    assert lo.absence > hi.absence
    assert lo.session_activity <= hi.session_activity


def test_emit_at_calibration_point_hits_medians(desk):
    rng = np.random.default_rng(0)
    for p in desk.profiles:
        quiet = replace(p, noise_sd=0.0)
        s = emit_session(AgentState(V=p.calibration_v), quiet, rng)
        assert s.session_time == pytest.approx(p.target_medians[1], rel=1e-9)
        assert s.active_time == pytest.approx(p.target_medians[2], rel=1e-9)
        assert abs(s.session_activity - p.target_medians[3]) <= 0.5


def test_emit_floor_at_zero_salience():
    p = ObjectProfile("o", noise_sd=0.0, floor=(200.0, 5.0, 20.0, 4.0))
    s = emit_session(AgentState(V=0.0), p, np.random.default_rng(0))
    assert (s.absence, s.session_time, s.active_time, s.session_activity) == pytest.approx((200, 5, 20, 4))


def test_constant_reward_never_churns():
    p = ObjectProfile("o", base_reward=5.0, reward_decay=1.0, noise_sd=0.0)
    init = AgentState(V=0.0, alpha=0.3, gamma=0.5, churn_threshold=-1.0)
    seq = simulate_agent(p, init, 20, np.random.default_rng(0))
    assert seq.T == 20
    assert np.all(np.diff(seq.latent_trace) >= 0)
    assert seq.latent_trace[-1] < 10.0


def test_zero_decay_churn_time_matches_recursion():
    p = ObjectProfile("o", base_reward=1.0, reward_decay=0.0, noise_sd=0.0)
    init = AgentState(V=4.0, alpha=0.5, gamma=0.5, churn_threshold=1.0)
    seq = simulate_agent(p, init, 50, np.random.default_rng(0))
    # oracle: first reward 1, then zero; V shrinks by (1 - alpha (1 - gamma)) per session
    V, T = 4.0, 1
    V = V + 0.5 * (1.0 + 0.5 * V - V)
    while V >= 1.0:
        T += 1
        V *= 1 - 0.5 * 0.5
    assert seq.T == T
    tail = np.array(seq.latent_trace[1:])
    np.testing.assert_allclose(tail[1:] / tail[:-1], 0.75)


def test_population_construction_and_determinism(tmp_path, desk):
    data = simulate_population(desk.profiles, 1000, seed=7, pop=desk.population)
    assert len(data) == 6000
    assert all(s.T >= 2 for s in data)
    again = simulate_population(desk.profiles, 1000, seed=7, pop=desk.population)
    write_sequences(tmp_path / "a.csv", data.sequences)
    write_sequences(tmp_path / "b.csv", again.sequences)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for obj, seqs in data.by_object().items():
        p = next(q for q in desk.profiles if q.object_id == obj)
        lengths = np.array([s.T for s in seqs])
        assert abs(np.median(lengths) - p.target_length) <= 1, obj
        assert skew(lengths) > 0, obj
        st_med = np.median([x.session_time for s in seqs for x in s.sessions])
        assert abs(st_med / p.target_medians[1] - 1) < 0.2, obj


def test_population_schedule_independence(desk):
    full = simulate_population(desk.profiles[:2], 30, seed=3, pop=desk.population)
    part = simulate_population(desk.profiles[:1], 10, seed=3, pop=desk.population)
    assert [s.sessions for s in full.sequences[:10]] == [s.sessions for s in part.sequences]


def test_population_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        simulate_population([ObjectProfile("o")], 0, seed=0)
    with pytest.raises(ConfigError):
        PopulationConfig(max_T=1)
