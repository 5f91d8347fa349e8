import json

import numpy as np
import pytest

from querybandits.core import FIVE_PLUS_NO_REWRITE, FIVE_REWRITES, QueryRecord, RewardWeights, arm_set
from querybandits.env import load_dataset, load_preset
from querybandits.extraction import RuleBasedExtractor
from querybandits.llm import ClientFailure, MockClient, NetworkDisabled
from querybandits.pipeline import (
    Backends,
    ConfigError,
    ExperimentConfig,
    MockRewriter,
    RecordedRewriter,
    RoundSkipped,
    TemplatedRewriter,
    UnknownArm,
    answer_letter,
    answer_prompt,
    make_rewriter,
    policy_seed,
    query_stream,
    rewrite,
    run_experiment,
    run_round,
    run_simulation,
    score_record,
    slug,
    static_policy,
)
from querybandits.policies import LinUCB, make_policy
from querybandits.reward import MockJudge

ARMS = arm_set(FIVE_PLUS_NO_REWRITE)
REC = QueryRecord("r1", "toy", "What is the capital of France?", "Paris")


def backends(table=None, **kw):
    client = kw.pop("client", None) or MockClient(table or {})
    return Backends(ARMS, RuleBasedExtractor(), kw.pop("rewriter", MockRewriter()), client, MockJudge(), **kw)


class Echo:
    def __init__(self):
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return '"rewritten question?"'


class Failing:
    def complete(self, prompt):
        raise ClientFailure("endpoint down")


def test_mock_rewriter_transforms():
    m = MockRewriter()
    assert m.rewrite("q", ARMS[0]) == "[PARAPHRASE] q"
    q = "a b c d e"
    assert [m.rewrite(q, a) for a in ARMS] == [
        "[PARAPHRASE] a b c d e",
        "[SIMPLIFY] e d c b a",
        "[DISAMBIGUATE] b c d e a",
        "[EXPAND] e a b c d",
        "[CLARIFYTERMS] b a d c e",
        "a b c d e",
    ]


@pytest.mark.parametrize("rewriter", [MockRewriter(), TemplatedRewriter(Failing()), RecordedRewriter({})])
def test_no_rewrite_is_identity_for_every_kind(rewriter):
    assert rewrite("  Keep   me verbatim ", ARMS[-1], rewriter) == "  Keep   me verbatim "


def test_templated_rewriter_prompt_and_cleanup():
    echo = Echo()
    out = TemplatedRewriter(echo).rewrite("Why is the sky blue?", ARMS[0])
    assert out == "rewritten question?"
    instruction = ARMS[0].template.replace("{query}", "").strip()
    assert instruction and instruction in echo.prompts[0]
    assert "Why is the sky blue?" in echo.prompts[0]


def test_recorded_rewriter(tmp_path):
    path = tmp_path / "rw.json"
    path.write_text(json.dumps({"Simplify": {"What is  X?": "X?"}}))
    rw = make_rewriter({"kind": "Recorded", "path": "rw.json"}, base_dir=tmp_path)
    assert rw.rewrite("What is X?", ARMS[1]) == "X?"
    with pytest.raises(ClientFailure):
        rw.rewrite("What is X?", ARMS[0])
    with pytest.raises(ConfigError):
        make_rewriter({"kind": "Templated"})


def test_answer_prompts_and_letters():
    mc = QueryRecord("m", "toy", "Pick one", "B", scenario="MultipleChoice", choices=("x", "y"))
    p = answer_prompt("Pick one", mc)
    assert "A. x" in p and "B. y" in p
    assert answer_letter("(b) y", 2) == "B"
    assert answer_letter("I think the answer is B.", 2) == "B"
    assert answer_letter("no idea", 2) is None
    assert score_record(mc, "B", MockJudge(), RewardWeights()).s_llm == 1
    assert score_record(mc, "A", MockJudge(), RewardWeights()).s_llm == 0


def test_round_with_correct_mock_answer():
    b = backends()
    policy = static_policy("Paraphrase", FIVE_PLUS_NO_REWRITE)
    prompt = answer_prompt(MockRewriter().rewrite(REC.question, ARMS[0]), REC)
    b.client = MockClient({prompt: "Paris"})
    rec = run_round(policy, REC, b, 1)
    w = RewardWeights()
    assert rec.s_llm == 1 and rec.arm == 0
    assert rec.reward == pytest.approx(w.alpha + w.beta + w.gamma * 1.0)
    assert rec.oracle_reward is None


def test_no_rewrite_policy_passes_query_through():
    policy = static_policy("NoRewrite")
    rec = run_round(policy, REC, backends(), 1)
    assert rec.arm == 5 and rec.rewritten_query == REC.question


def test_exhaustive_oracle_is_best_arm_reward():
    simplify = answer_prompt(MockRewriter().rewrite(REC.question, ARMS[1]), REC)
    rec = run_round(static_policy("Paraphrase"), REC, backends({simplify: "Paris"}, exhaustive=True), 1)
    assert rec.reward < 0.5
    assert rec.oracle_reward == pytest.approx(1.0)


def test_context_recorded_is_context_used_for_update():
    policy = LinUCB(6, 18)
    rec = run_round(policy, REC, backends(), 1)
    x = rec.context.as_array()
    assert np.allclose(policy.A[rec.arm], np.eye(18) + np.outer(x, x))


def test_skipped_round_leaves_policy_untouched():
    policy = make_policy("thompson", 6, 18, seed=3)
    before = policy.snapshot().dumps()
    with pytest.raises(RoundSkipped):
        run_round(policy, REC, backends(client=Failing()), 1)
    # select consumed an RNG draw, but no learned array moved
    after = json.loads(policy.snapshot().dumps())
    assert json.loads(before)["arrays"] == after["arrays"]
    rec = run_round(policy, REC, backends(), 1)
    assert json.loads(policy.snapshot().dumps())["arrays"] != after["arrays"]
    assert rec.t == 1


def test_network_disabled_is_not_skipped():
    class Offline:
        def complete(self, prompt):
            raise NetworkDisabled("offline")

    with pytest.raises(NetworkDisabled):
        run_round(static_policy("Paraphrase"), REC, backends(client=Offline()), 1)


def test_static_policies():
    p = static_policy("Paraphrase")
    before = p.snapshot().dumps()
    for t in range(1, 20):
        assert p.select(None, t)[0] == 0
        p.update(0, None, 0.3)
    assert p.snapshot().dumps() == before
    with pytest.raises(UnknownArm):
        static_policy("Summarize")
    with pytest.raises(UnknownArm):
        static_policy("NoRewrite", FIVE_REWRITES)


def test_query_stream_reshuffles_per_pass(fixture_data):
    recs = load_dataset(fixture_data / "questions.jsonl")
    s = query_stream(recs, 2 * len(recs) + 5, seed=1)
    n = len(recs)
    assert sorted(r.id for r in s[:n]) == sorted(r.id for r in recs)
    assert [r.id for r in s[:n]] != [r.id for r in s[n:2 * n]]
    assert query_stream(recs, 30, seed=1) == s[:30]


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(env="uniform", rounds=0).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(env="uniform", datasets=["x"], rounds=5).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(env="uniform", rounds=5, seeds=[]).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(env="uniform", rounds=5, algorithms=["ucb9"]).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json({"algorithms": ["exp3"], "env": "uniform", "rounds": 5, "colour": 1})
    with pytest.raises(ConfigError, match="nope.json"):
        ExperimentConfig.load("/nonexistent/nope.json")
    ExperimentConfig(env="uniform", rounds=5).validate()


def test_config_hash_tracks_content():
    a = ExperimentConfig(env="uniform", rounds=5)
    b = ExperimentConfig(env="uniform", rounds=5)
    assert a.config_hash() == b.config_hash()
    b.seeds = [1]
    assert a.config_hash() != b.config_hash()


def test_simulation_uses_common_random_numbers():
    spec = load_preset("uniform")
    runs = [
        run_simulation(make_policy(tag, 5, 18, policy_seed(3, tag)), tag, spec, 200, 3, True).trace
        for tag in ("exp3", "linucb")
    ]
    assert [r.context for r in runs[0]] == [r.context for r in runs[1]]
    assert all(r.oracle_reward >= r.reward for tr in runs for r in tr)


def test_slug():
    assert slug("Linear ε-FTRL") == "linear-eps-ftrl"
    assert slug("Thompson Sampling (Contextual)") == "thompson-sampling-contextual"


def _smoke_config(configs_dir, **kw):
    config = ExperimentConfig.load(configs_dir / "smoke.json")
    for k, v in kw.items():
        setattr(config, k, v)
    return config


def test_dataset_run_is_byte_deterministic(configs_dir, tmp_path):
    for name in ("a", "b"):
        run_experiment(_smoke_config(configs_dir), out=tmp_path / name)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_parallel_jobs_match_serial(configs_dir, tmp_path):
    run_experiment(_smoke_config(configs_dir), out=tmp_path / "serial")
    run_experiment(_smoke_config(configs_dir), out=tmp_path / "parallel", jobs=4)
    for p in sorted((tmp_path / "serial" / "traces").iterdir()):
        assert p.read_bytes() == (tmp_path / "parallel" / "traces" / p.name).read_bytes()


def test_simulation_experiment_emits_five_reports(tmp_path):
    config = ExperimentConfig(
        algorithms=["thompson", "linucb", "eps_ftrl", "exp3", "linear_ftpl"], env="uniform", rounds=1050, seeds=[2]
    )
    manifest = run_experiment(config, out=tmp_path)
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["table"]) == 5
    assert sum(report["rounds"].values()) == 5 * 1050
    assert report["baseline"].startswith("Prompting (")
    for row in report["table"].values():
        assert isinstance(row["cum_regret"], float) and isinstance(row["win_rate"], float)
    assert manifest["complete"] and len(list((tmp_path / "traces").glob("*.jsonl"))) == 6
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["config_hash"] == config.config_hash()


def test_skips_are_recorded(fixture_data, tmp_path):
    records = load_dataset(fixture_data / "questions.jsonl")[:5]
    table = {"Paraphrase": {r.question: r.question for r in records[:3]}}
    (tmp_path / "rw.json").write_text(json.dumps(table))
    (tmp_path / "d.jsonl").write_text("\n".join(json.dumps(r.to_json()) for r in records) + "\n")
    config = ExperimentConfig(algorithms=["static:Paraphrase"], datasets=["d.jsonl"], rounds=5,
                              rewriter={"kind": "Recorded", "path": "rw.json"}, base_dir=str(tmp_path),
                              compare_baseline=False)
    run_experiment(config, out=tmp_path / "out")
    skipped = [json.loads(line) for line in (tmp_path / "out" / "skipped.jsonl").read_text().splitlines()]
    assert len(skipped) == 2 and all("no recorded Paraphrase rewrite" in s["reason"] for s in skipped)
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["skipped_rounds"] == 2 and list(report["rounds"].values()) == [3]
    assert report["table"]["Prompting (Paraphrase)"]["cum_regret"] == "unavailable"
