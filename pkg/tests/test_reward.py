import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from querybandits.core import RewardWeights
from querybandits.llm import ClientFailure
from querybandits.reward import (
    BackendUnavailable,
    ComponentOutOfRange,
    DegenerateLabels,
    LlmJudge,
    MockJudge,
    RewardBreakdown,
    bleu1,
    combine_reward,
    frontier,
    indel_distance,
    lcs_length,
    roc_auc,
    score_answer,
    simplex_grid,
    sweep_simplex,
    token_set_ratio,
    tokenize,
    write_simplex_csv,
)

words = st.lists(st.sampled_from(["a", "b", "cat", "the", "Paris", "x,", "ab", "ba"]), max_size=8).map(" ".join)
short = st.text(alphabet="abcd ", max_size=14)


def test_bleu1_examples():
    assert bleu1("the cat sat", "the cat sat") == 1.0
    assert bleu1("alpha beta", "gamma delta") == 0.0
    assert bleu1("the cat sat", "the cat slept") == pytest.approx(2 / 3, abs=1e-12)
    assert bleu1("", "anything") == 0.0
    # clipping: repeated candidate tokens count at most as often as in the reference
    assert bleu1("the the the", "the cat") == pytest.approx(1 / 3)


def test_tokenize_strips_boundary_punctuation():
    assert tokenize("Hello, World! it's") == ["hello", "world", "it's"]
    assert tokenize("  ...  ") == []


def test_token_set_ratio_examples():
    assert token_set_ratio("a b c", "a b c") == 1.0
    assert token_set_ratio("aaa", "bbb") == 0.0
    assert token_set_ratio("a b c", "c b a d") == 1.0
    assert token_set_ratio("", "") == 1.0
    assert token_set_ratio("", "x") == 0.0


def _lcs_dp(a, b):
    m = np.zeros((len(a) + 1, len(b) + 1), dtype=int)
    for i, j in itertools.product(range(1, len(a) + 1), range(1, len(b) + 1)):
        m[i, j] = m[i - 1, j - 1] + 1 if a[i - 1] == b[j - 1] else max(m[i - 1, j], m[i, j - 1])
    return int(m[-1, -1])


@given(short, short)
def test_lcs_matches_dynamic_programming(a, b):
    assert lcs_length(a, b) == _lcs_dp(a, b)
    assert indel_distance(a, b) == len(a) + len(b) - 2 * _lcs_dp(a, b)


@given(st.text(max_size=80), st.text(max_size=80))
@settings(max_examples=50)
def test_lcs_long_alphabet(a, b):
    assert lcs_length(a, b) == _lcs_dp(a, b)


@given(words, words)
def test_text_scores_bounded_and_symmetric(a, b):
    assert 0.0 <= bleu1(a, b) <= 1.0
    s = token_set_ratio(a, b)
    assert 0.0 <= s <= 1.0
    assert s == token_set_ratio(b, a)
    assert token_set_ratio(a, a) == 1.0


@given(words, words)
def test_token_set_ratio_agrees_with_rapidfuzz(a, b):
    fuzz = pytest.importorskip("rapidfuzz.fuzz")
    ta, tb = " ".join(tokenize(a)), " ".join(tokenize(b))
    if not ta or not tb:
        return
    assert token_set_ratio(a, b) == pytest.approx(fuzz.token_set_ratio(ta, tb) / 100.0, abs=1e-9)


def test_mock_judge():
    j = MockJudge()
    assert j("Q", "Paris.", "paris") == 1
    assert j("Q", "London", "Paris") == 0
    assert j("Q", "The answer is Paris, France", "Paris") == 1
    assert j("Q", "", "Paris") == 0


def test_llm_judge_parses_and_fails_loudly():
    class Fixed:
        def __init__(self, reply):
            self.reply = reply

        def complete(self, prompt):
            if self.reply is None:
                raise ClientFailure("down")
            return self.reply

    assert LlmJudge(Fixed("YES."))("q", "a", "b") == 1
    assert LlmJudge(Fixed("no"))("q", "a", "b") == 0
    with pytest.raises(BackendUnavailable):
        LlmJudge(Fixed("maybe"))("q", "a", "b")
    with pytest.raises(BackendUnavailable):
        LlmJudge(Fixed(None))("q", "a", "b")


def test_combine_reward_examples():
    w = RewardWeights()
    assert combine_reward(1, 1.0, 1.0, w) == pytest.approx(1.0)
    assert combine_reward(0, 0.0, 0.0, w) == 0.0
    assert combine_reward(1, 0.5, 0.2, w) == pytest.approx(0.77, abs=1e-12)
    with pytest.raises(ComponentOutOfRange):
        combine_reward(2, 0.5, 0.5, w)
    with pytest.raises(ComponentOutOfRange):
        combine_reward(1, 1.5, 0.5, w)


@given(st.integers(0, 1), st.floats(0, 1), st.floats(0, 1),
       st.tuples(st.integers(0, 10), st.integers(0, 10)).filter(lambda t: t[0] + t[1] <= 10))
def test_combine_reward_is_bounded_and_monotone(s_llm, fz, bl, ij):
    w = RewardWeights(ij[0] / 10, ij[1] / 10, (10 - ij[0] - ij[1]) / 10)
    r = combine_reward(s_llm, fz, bl, w)
    assert 0.0 <= r <= 1.0
    assert combine_reward(1, fz, bl, w) >= combine_reward(0, fz, bl, w)


def test_score_answer_breakdown():
    b = score_answer("Q", "Paris", "Paris", MockJudge(), RewardWeights())
    assert (b.s_llm, b.s_fuzz, b.s_bleu) == (1, 1.0, 1.0)
    assert b.reward == pytest.approx(1.0, abs=1e-12)


def test_roc_auc_examples():
    assert roc_auc([0, 1, 0, 1], [0, 1, 0, 1]) == 1.0
    assert roc_auc([1, 0, 1, 0], [0, 1, 0, 1]) == 0.0
    assert roc_auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == pytest.approx(0.75, abs=1e-12)
    assert roc_auc([0.5, 0.5], [0, 1]) == 0.5
    with pytest.raises(DegenerateLabels):
        roc_auc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=30))
def test_roc_auc_matches_pair_counting(rows):
    scores = [s / 5 for s, _ in rows]
    labels = [y for _, y in rows]
    if len(set(labels)) < 2:
        return
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    want = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg) / (len(pos) * len(neg))
    assert abs(roc_auc(scores, labels) - want) < 1e-12
    # strictly increasing transforms leave the rank statistic unchanged
    assert abs(roc_auc([s ** 3 + 2 for s in scores], labels) - want) < 1e-12


def test_simplex_grid_counts():
    assert len(simplex_grid(0.1)) == 66
    assert len(simplex_grid(0.5)) == 6
    assert len(simplex_grid(1.0)) == 3
    with pytest.raises(ValueError):
        simplex_grid(0.3)


def test_sweep_frontier_and_csv(tmp_path):
    labels = [0, 1, 0, 1, 1, 0]
    bds = [RewardBreakdown(y, 0.5, 1 - y, 0.0) for y in labels]
    points = sweep_simplex(bds, labels)
    best = max(p.auc for p in points)
    assert best == 1.0
    assert all(p.auc >= 0.99 * best for p in frontier(points))
    assert all(p.in_frontier == (p.auc >= 0.99 * best) for p in points)
    path = tmp_path / "s.csv"
    write_simplex_csv(points, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "alpha,beta,gamma,auc,in_frontier" and len(lines) == 67
