import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from querybandits.core import (
    ARM_NAMES,
    FEATURE_NAMES,
    FIVE_PLUS_NO_REWRITE,
    FIVE_REWRITES,
    N_FEATURES,
    FeatureVector,
    InvalidWeights,
    NonBinaryEntry,
    PullRecord,
    QueryRecord,
    RewardWeights,
    Trace,
    ValidationError,
    WrongLength,
    arm_index,
    arm_set,
    read_trace,
    validate_feature_vector,
    write_jsonl,
)

flags = st.lists(st.integers(0, 1), min_size=N_FEATURES, max_size=N_FEATURES)


def test_feature_order_is_fixed():
    assert N_FEATURES == 17
    assert FEATURE_NAMES[0] == "anaphora" and FEATURE_NAMES[-1] == "specialization"
    assert FEATURE_NAMES.index("answerability") == 9


def test_all_zeros_and_all_ones():
    zero = validate_feature_vector([0] * 17)
    one = validate_feature_vector([1] * 17)
    assert sum(zero.flags) == 0 and sum(one.flags) == 17


def test_wrong_length_and_non_binary():
    with pytest.raises(WrongLength):
        validate_feature_vector([0] * 16)
    with pytest.raises(NonBinaryEntry):
        validate_feature_vector([0] * 16 + [2])
    with pytest.raises(NonBinaryEntry):
        validate_feature_vector([0] * 16 + [float("nan")])
    with pytest.raises(NonBinaryEntry):
        validate_feature_vector([0] * 16 + ["1"])


def test_bias_coordinate():
    fv = validate_feature_vector([1] + [0] * 16)
    assert fv.dim == 18 and fv.as_array()[-1] == 1.0
    plain = validate_feature_vector([1] + [0] * 16, bias_enabled=False)
    assert plain.dim == 17 and plain.as_array().tolist() == [1.0] + [0.0] * 16
    assert fv["anaphora"] == 1


@given(flags, st.booleans())
def test_feature_vector_roundtrip(raw, bias):
    fv = validate_feature_vector(raw, bias_enabled=bias)
    assert FeatureVector.from_json(fv.to_json(), bias) == fv
    x = fv.as_array()
    assert x.shape == (17 + bias,)
    assert set(np.unique(x)) <= {0.0, 1.0}


def test_arm_sets():
    five = arm_set(FIVE_REWRITES)
    assert [a.name for a in five] == list(ARM_NAMES)
    six = arm_set(FIVE_PLUS_NO_REWRITE)
    assert len(six) == 6 and six[-1].name == "NoRewrite" and six[-1].is_identity
    assert six[-1].render("why?") == "why?"
    for arm in five:
        assert "{query}" in arm.template
        assert "zebra" in arm.render("zebra")
    with pytest.raises(ValueError):
        arm_set("seven")


def test_arm_index_lookup():
    arms = arm_set(FIVE_PLUS_NO_REWRITE)
    assert arm_index("clarify_terms", arms) == 4
    assert arm_index("No Rewrite", arms) == 5
    with pytest.raises(KeyError):
        arm_index("Summarize", arms)


def test_reward_weights_validation():
    assert RewardWeights().as_tuple() == (0.6, 0.3, 0.1)
    with pytest.raises(InvalidWeights):
        RewardWeights(0.5, 0.3, 0.1)
    with pytest.raises(InvalidWeights):
        RewardWeights(1.2, -0.2, 0.0)
    assert RewardWeights.from_json([1, 0, 0]) == RewardWeights(1.0, 0.0, 0.0)


def test_query_record_validation():
    with pytest.raises(ValidationError):
        QueryRecord("a", "d", "  ", "x")
    with pytest.raises(ValidationError):
        QueryRecord("a", "d", "q?", "")
    with pytest.raises(ValidationError):
        QueryRecord("a", "d", "q?", "x", ("p",) * 6)
    with pytest.raises(ValidationError):
        QueryRecord("a", "d", "q?", "x", scenario="Essay")
    rec = QueryRecord("a", "d", "q?", "B", ("p1",), "MultipleChoice", ("x", "y"))
    assert QueryRecord.from_json(json.loads(json.dumps(rec.to_json()))) == rec


def _pull(t, reward=0.5, oracle=None, probs=None):
    return PullRecord(t, f"q{t}", validate_feature_vector([0] * 17), 0, reward, probs=probs, oracle_reward=oracle)


def test_pull_record_checks():
    with pytest.raises(ValidationError):
        _pull(0)
    with pytest.raises(ValidationError):
        _pull(1, reward=1.5)
    with pytest.raises(ValidationError):
        _pull(1, probs=(0.5, 0.4))
    with pytest.raises(ValidationError):
        _pull(1, reward=0.8, oracle=0.5)


def test_trace_requires_consecutive_rounds():
    Trace([_pull(1), _pull(2)])
    with pytest.raises(ValidationError):
        Trace([_pull(1), _pull(3)])
    with pytest.raises(ValidationError):
        Trace([], n_arms=1)


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 4), flags), min_size=1, max_size=20))
def test_trace_jsonl_roundtrip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("trace") / "t.jsonl"
    recs = [
        PullRecord(t, f"q{t}", validate_feature_vector(f), arm, r, oracle_reward=1.0)
        for t, (r, arm, f) in enumerate(rows, start=1)
    ]
    write_jsonl(path, recs)
    assert read_trace(path) == recs
