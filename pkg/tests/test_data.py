import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from salience.data import (METRICS, TARGETS, Dataset, ScalingStats, bucket_batches, build_targets,
                           fit_scaling_stats, min_max_scale, min_max_unscale, nearest_rank,
                           percentile_filter, read_sequences, write_sequences)
from salience.errors import DataError
from salience.data import TelemetrySession

from conftest import make_seq, random_dataset


def test_session_rejects_bad_magnitudes():
    with pytest.raises(DataError):
        TelemetrySession(-1.0, 1.0, 1.0, 1, "o")
    with pytest.raises(DataError):
        TelemetrySession(0.0, 1.0, 100.5, 1, "o")
    with pytest.raises(DataError):
        TelemetrySession(0.0, float("nan"), 1.0, 1, "o")


def test_sequence_needs_two_sessions_and_matching_trace():
    with pytest.raises(DataError):
        make_seq("a", "o", [(0, 1, 1, 1)])
    with pytest.raises(DataError):
        make_seq("a", "o", [(0, 1, 1, 1), (1, 1, 1, 1)], latent=[1.0])


def test_targets_lead_one_session_times():
    seq = make_seq("a", "o", [(0, 22, 50, 1), (5, 30, 50, 2), (7, 10, 50, 3)])
    tv = build_targets(seq)
    assert [t.next_session_time for t in tv] == [30, 10]
    assert [t.future_session_count for t in tv] == [2, 1]


def test_targets_identity_case():
    seq = make_seq("a", "o", [(3, 4, 5, 6), (3, 4, 5, 6)])
    (tv,) = build_targets(seq)
    assert (tv.next_absence, tv.next_session_time, tv.next_active_time, tv.next_session_activity) == (3, 4, 5, 6)
    assert tv.future_session_count == 1


def test_targets_count_remaining_sessions():
    seq = random_dataset(1, lengths=(5, 5)).sequences[0]
    counts = [t.future_session_count for t in build_targets(seq)]
    remaining = [len(seq.sessions[t + 1:]) for t in range(seq.T - 1)]
    assert counts == remaining == [4, 3, 2, 1]


def test_targets_reconstruct_later_sessions(small_data):
    for seq in small_data:
        tv = build_targets(seq)
        rebuilt = [(t.next_absence, t.next_session_time, t.next_active_time, t.next_session_activity) for t in tv]
        assert rebuilt == [s.metrics() for s in seq.sessions[1:]]
        np.testing.assert_array_equal(seq.target_array[:, :4], np.array(rebuilt))


def test_scale_endpoints_and_midpoint():
    stats = ScalingStats(("x",), np.array([0.0]), np.array([10.0]))
    np.testing.assert_array_equal(min_max_scale([[0.0], [10.0], [5.0]], stats).ravel(), [0.0, 1.0, 0.5])


def test_scale_degenerate_feature_is_zero():
    stats = ScalingStats(("x", "y"), np.array([0.0, 3.0]), np.array([1.0, 3.0]))
    np.testing.assert_array_equal(min_max_scale([[0.5, 3.0]], stats), [[0.5, 0.0]])


def test_scale_round_trip():
    rng = np.random.default_rng(1)
    lo = rng.uniform(-5, 5, 4)
    stats = ScalingStats(tuple("abcd"), lo, lo + rng.uniform(0.1, 100, 4))
    x = rng.uniform(lo, stats.maxs, size=(1000, 4))
    assert np.abs(min_max_unscale(min_max_scale(x, stats), stats) - x).max() < 1e-9


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_scale_monotone(a, b):
    stats = ScalingStats(("x",), np.array([-1e6]), np.array([1e6]))
    lo, hi = sorted((a, b))
    assert min_max_scale([[lo]], stats)[0, 0] <= min_max_scale([[hi]], stats)[0, 0]


def test_stats_reject_inverted_range():
    with pytest.raises(DataError):
        ScalingStats(("x",), np.array([1.0]), np.array([0.0]))


def test_fit_scaling_stats_cover_targets(small_data, tmp_path):
    stats = fit_scaling_stats(small_data.sequences)
    assert stats.features == TARGETS
    assert stats.mins[-1] == 0 and stats.maxs[-1] == max(s.T for s in small_data) - 1
    stats.save(tmp_path / "s.csv")
    back = ScalingStats.load(tmp_path / "s.csv")
    assert back.features == stats.features
    np.testing.assert_array_equal(back.mins, stats.mins)
    np.testing.assert_array_equal(back.maxs, stats.maxs)


def _fixed_length_data(spec):
    seqs, i = [], 0
    for T, n in spec:
        for _ in range(n):
            seqs.append(make_seq(f"a{i}", "o", [(0, 1 + j, 1, 1) for j in range(T)]))
            i += 1
    return Dataset(seqs)


def test_bucket_batches_sizes_and_no_mixing():
    data = _fixed_length_data([(3, 10), (5, 7)])
    batches = list(bucket_batches(data, 4, 0))
    by_len = {}
    for b in batches:
        assert len({s.T for s in b}) == 1
        by_len.setdefault(b[0].T, []).append(len(b))
    assert sorted(by_len[3], reverse=True) == [4, 4, 2]
    assert sorted(by_len[5], reverse=True) == [4, 3]


@given(st.integers(1, 9), st.integers(0, 1000))
def test_bucket_batches_cover_once_and_are_seeded(batch_size, seed):
    data = random_dataset(25, seed=3)
    first = [[s.agent_id for s in b] for b in bucket_batches(data, batch_size, seed)]
    again = [[s.agent_id for s in b] for b in bucket_batches(data, batch_size, seed)]
    assert first == again
    assert sorted(a for b in first for a in b) == sorted(data.agent_ids)


def test_bucket_batches_empty():
    assert list(bucket_batches(Dataset([]), 4, 0)) == []


def test_nearest_rank():
    assert nearest_rank([5, 1, 3, 2, 4], 50) == 3
    assert nearest_rank(range(1, 101), 99) == 99
    assert nearest_rank([7], 1) == 7


def test_percentile_filter_p100_keeps_everything(small_data):
    assert percentile_filter(small_data, 100).agent_ids == small_data.agent_ids


def test_percentile_filter_removes_outlier():
    rng = np.random.default_rng(0)
    seqs = [make_seq(f"a{i}", "o", [(0, rng.uniform(10, 20), 50, 1), (1, rng.uniform(10, 20), 50, 1)])
            for i in range(999)]
    seqs.append(make_seq("big", "o", [(0, 5000, 50, 1), (1, 15, 50, 1)]))
    kept = percentile_filter(Dataset(seqs), 99)
    assert "big" not in kept.agent_ids


def test_percentile_filter_half():
    # only session_time varies; single-session-valued sequences make the oracle exact
    seqs = [make_seq(f"a{i}", "o", [(0, i + 1, 50, 1), (0, i + 1, 50, 1)]) for i in range(100)]
    kept = percentile_filter(Dataset(seqs), 50)
    values = sorted(float(i + 1) for i in range(100))
    limit = values[49]
    assert sorted(s.sessions[0].session_time for s in kept) == [v for v in values if v <= limit]
    assert len(kept) == 50


def test_percentile_filter_rejects_bad_p(small_data):
    with pytest.raises(DataError):
        percentile_filter(small_data, 0)


def test_vocabulary_first_appearance():
    data = random_dataset(6, objects=("z", "y", "x"))
    assert data.vocabulary == {"z": 0, "y": 1, "x": 2}
    assert data.subset([2, 1]).vocabulary == data.vocabulary


def test_sequence_file_round_trip(tmp_path):
    data = random_dataset(12, latent=True)
    write_sequences(tmp_path / "d.csv", data.sequences)
    back = read_sequences(tmp_path / "d.csv")
    assert back.agent_ids == data.agent_ids
    for a, b in zip(back, data):
        assert a.sessions == b.sessions and a.latent_trace == b.latent_trace
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "agent_id,object_id,t," + ",".join(METRICS) + ",latent_v"
    write_sequences(tmp_path / "e.csv", back.sequences)
    assert (tmp_path / "d.csv").read_bytes() == (tmp_path / "e.csv").read_bytes()


def test_read_sequences_missing_file(tmp_path):
    with pytest.raises(DataError):
        read_sequences(tmp_path / "nope.csv")
