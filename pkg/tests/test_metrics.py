import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from querybandits.core import PullRecord, Trace, validate_feature_vector
from querybandits.metrics import (
    AlignmentError,
    EmptyHistory,
    LengthMismatch,
    MissingOracle,
    cumulative_regret,
    entropy_series,
    exploration_adjusted_reward,
    mean_regret_curve,
    normalized_entropy,
    trace_win_rate,
    win_rate,
    write_regret_curves,
)

ZERO = validate_feature_vector([0] * 17)


def trace(arms, rewards, oracle=None, lam=0.1, k=5, ids=None):
    recs = [
        PullRecord(t, ids[t - 1] if ids else f"q{t}", ZERO, a, r, oracle_reward=None if oracle is None else oracle[t - 1])
        for t, (a, r) in enumerate(zip(arms, rewards), start=1)
    ]
    return Trace(recs, n_arms=k, lambda_explore=lam)


def _entropy_oracle(history, k):
    n = len(history)
    return -sum(c / n * math.log(c / n) for c in Counter(history).values()) / math.log(k)


def test_entropy_examples():
    assert normalized_entropy([0, 1, 2, 3, 4], 5) == pytest.approx(1.0, abs=1e-12)
    assert normalized_entropy([2, 2, 2], 5) == 0.0
    assert normalized_entropy([0, 0, 1], 5) == pytest.approx(
        ((2 / 3) * math.log(3 / 2) + (1 / 3) * math.log(3)) / math.log(5), abs=1e-12
    )
    with pytest.raises(EmptyHistory):
        normalized_entropy([], 5)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=60))
def test_entropy_series_matches_prefix_oracle(history):
    series = entropy_series(history, 6)
    for t in range(1, len(history) + 1):
        assert abs(series[t - 1] - _entropy_oracle(history[:t], 6)) < 1e-9
    assert np.all((series >= 0) & (series <= 1 + 1e-12))


def test_adjusted_reward_examples():
    assert exploration_adjusted_reward(trace([0], [0.5])) == pytest.approx(0.5, abs=1e-12)
    assert exploration_adjusted_reward(trace([0, 1], [1, 1])) == pytest.approx(2 + 0.1 * math.log(2) / math.log(5))
    assert exploration_adjusted_reward(trace([0, 1, 2], [0.2, 0.3, 0.4], lam=0.0)) == pytest.approx(0.9)


@given(st.lists(st.tuples(st.integers(0, 4), st.floats(0, 1)), min_size=1, max_size=40))
def test_adjusted_reward_bounds(rows):
    arms, rewards = zip(*rows)
    tr = trace(arms, rewards)
    v = exploration_adjusted_reward(tr)
    assert sum(rewards) - 1e-9 <= v <= sum(rewards) + 0.1 * len(rows) + 1e-9


def test_regret_examples():
    assert cumulative_regret(trace([0, 0], [0.3, 0.6], oracle=[0.3, 0.6])) == 0.0
    assert cumulative_regret(trace([0, 0], [0.4, 0.7], oracle=[1, 1])) == pytest.approx(0.9)
    with pytest.raises(MissingOracle):
        cumulative_regret(trace([0], [0.4]))


def test_regret_curve(tmp_path):
    a = trace([0, 0, 0], [0.5, 0.5, 1.0], oracle=[1, 1, 1])
    b = trace([0, 0], [1.0, 0.0], oracle=[1, 1])
    curve = mean_regret_curve([a, b])
    assert np.allclose(curve, [0.25, 1.0])
    path = tmp_path / "c.csv"
    write_regret_curves({"x": curve}, path)
    assert path.read_text().splitlines() == ["t,mean_regret,algorithm", "1,0.25,x", "2,1.0,x"]


def test_win_rate_examples():
    assert win_rate([1, 1], [0, 0]) == 100.0
    assert win_rate([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert win_rate([0.9, 0.2, 0.7], [0.5, 0.5, 0.5]) == pytest.approx(66.6667, abs=1e-4)
    with pytest.raises(LengthMismatch):
        win_rate([1], [1, 2])
    with pytest.raises(LengthMismatch):
        win_rate([], [])


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=50))
def test_win_rate_antisymmetry(pairs):
    p, b = zip(*pairs)
    ties = sum(x == y for x, y in pairs)
    assert win_rate(p, b) + win_rate(b, p) + 100.0 * ties / len(pairs) == pytest.approx(100.0)


def test_trace_win_rate_uses_final_pulls_and_checks_alignment():
    pol = trace([0] * 4, [0.0, 0.0, 1.0, 1.0], ids=["a", "b", "c", "d"])
    base = trace([5] * 4, [1.0, 1.0, 0.5, 0.5], k=6, ids=["a", "b", "c", "d"])
    assert trace_win_rate(pol, base, size=2) == 100.0
    assert trace_win_rate(pol, base, size=4) == 50.0
    shifted = trace([5] * 4, [0.0] * 4, k=6, ids=["a", "b", "d", "c"])
    with pytest.raises(AlignmentError):
        trace_win_rate(pol, shifted, size=2)
