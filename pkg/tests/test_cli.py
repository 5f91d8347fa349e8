import csv
import json

import pytest

from querybandits.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from querybandits.core import PullRecord, validate_feature_vector, write_jsonl

from conftest import FIXTURE_DATA, ROOT

CONFIGS = ROOT / "configs"


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("smoke")
    config = str(CONFIGS / "smoke.json")
    assert main(["run", "--config", config, "--out", str(base / "a")]) == EXIT_OK
    assert main(["run", "--config", config, "--out", str(base / "b"), "--seed", "7"]) == EXIT_OK
    return base


def test_missing_config_exits_2_with_path(capsys, tmp_path):
    missing = tmp_path / "nowhere" / "cfg.json"
    code, _, err = run_cli(capsys, "run", "--config", str(missing))
    assert code == EXIT_CONFIG
    assert str(missing) in err


def test_bad_config_field_exits_2(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"algorithms": ["exp3"], "env": "uniform", "rounds": 0}))
    assert run_cli(capsys, "run", "--config", str(cfg), "--out", str(tmp_path / "o"))[0] == EXIT_CONFIG


def test_smoke_run_writes_50_record_traces(smoke_runs):
    traces = sorted((smoke_runs / "a" / "traces").glob("*.jsonl"))
    assert traces
    for p in traces:
        assert len(p.read_text().splitlines()) == 50, p.name
    manifest = json.loads((smoke_runs / "a" / "manifest.json").read_text())
    assert manifest["complete"] and manifest["config_hash"]


def test_seed_override_changes_manifest_and_trace_bytes(smoke_runs):
    a = json.loads((smoke_runs / "a" / "manifest.json").read_text())
    b = json.loads((smoke_runs / "b" / "manifest.json").read_text())
    assert a["config_hash"] != b["config_hash"]
    assert a["seeds"] == [0] and b["seeds"] == [7]
    name_a = sorted(p.name for p in (smoke_runs / "a" / "traces").glob("linucb*"))
    name_b = sorted(p.name for p in (smoke_runs / "b" / "traces").glob("linucb*"))
    assert name_a and name_b
    bytes_a = (smoke_runs / "a" / "traces" / name_a[0]).read_bytes()
    bytes_b = (smoke_runs / "b" / "traces" / name_b[0]).read_bytes()
    assert bytes_a != bytes_b


def test_report_keys_and_self_win_rate(capsys, smoke_runs):
    trace = sorted((smoke_runs / "a" / "traces").glob("linucb*"))[0]
    code, out, _ = run_cli(capsys, "report", str(trace), "--baseline", str(trace), "--test-split", "20", "--n-arms", "6")
    assert code == EXIT_OK
    (row,) = json.loads(out).values()
    assert set(row) == {"adj_reward", "cum_regret", "win_rate"}
    assert row["win_rate"] == 0.0
    assert isinstance(row["cum_regret"], float)


def _write_trace(path, ids, oracle):
    ctx = validate_feature_vector([0] * 17)
    write_jsonl(path, [PullRecord(t, q, ctx, 0, 0.5, oracle_reward=0.9 if oracle else None)
                       for t, q in enumerate(ids, start=1)])


def test_report_marks_regret_unavailable_without_oracle(capsys, tmp_path):
    _write_trace(tmp_path / "live.jsonl", ["a", "b"], oracle=False)
    code, out, _ = run_cli(capsys, "report", str(tmp_path / "live.jsonl"))
    assert code == EXIT_OK
    row = json.loads(out)["live"]
    assert row["cum_regret"] == "unavailable" and row["win_rate"] == "unavailable"


def test_misaligned_baseline_exits_1(capsys, tmp_path):
    _write_trace(tmp_path / "p.jsonl", ["a", "b", "c"], oracle=True)
    _write_trace(tmp_path / "base.jsonl", ["a", "c", "b"], oracle=True)
    code, _, err = run_cli(capsys, "report", str(tmp_path / "p.jsonl"), "--baseline", str(tmp_path / "base.jsonl"))
    assert code == EXIT_RUNTIME and "Alignment" in err


def test_report_missing_trace_exits_2(capsys, tmp_path):
    assert run_cli(capsys, "report", str(tmp_path / "none.jsonl"))[0] == EXIT_CONFIG


def test_sweep_writes_66_rows_with_vertices(capsys, tmp_path):
    rows = [{"s_llm": 1.0 if i % 2 else 0.0, "s_fuzz": (i % 5) / 4, "s_bleu": (i % 3) / 2} for i in range(20)]
    (tmp_path / "b.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    (tmp_path / "labels.json").write_text(json.dumps([i % 2 for i in range(20)]))
    code, out, _ = run_cli(capsys, "sweep", "--breakdowns", str(tmp_path / "b.jsonl"),
                           "--labels", str(tmp_path / "labels.json"), "--out", str(tmp_path / "s.csv"))
    assert code == EXIT_OK and json.loads(out)["points"] == 66
    table = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(table) == 66
    keys = list(table[0])
    weights = {tuple(round(float(r[k]), 6) for k in keys[:3]) for r in table}
    assert {(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)} <= weights
    best = max(float(r["auc"]) for r in table)
    flag = keys[-1]
    assert all(r[flag].lower() in ("true", "1") for r in table if float(r["auc"]) == best)


def test_sweep_length_mismatch_exits_2(capsys, tmp_path):
    (tmp_path / "b.jsonl").write_text(json.dumps({"s_llm": 1, "s_fuzz": 0, "s_bleu": 0}) + "\n")
    (tmp_path / "l.txt").write_text("1\n0\n")
    code, _, err = run_cli(capsys, "sweep", "--breakdowns", str(tmp_path / "b.jsonl"),
                           "--labels", str(tmp_path / "l.txt"), "--out", str(tmp_path / "s.csv"))
    assert code == EXIT_CONFIG and "labels" in err


def test_features_command(capsys):
    code, out, _ = run_cli(capsys, "features", "What is not the best option?")
    flags = json.loads(out)
    assert code == EXIT_OK and len(flags) == 17
    assert flags["negation"] == 1 and flags["superlative"] == 1
    assert run_cli(capsys, "features", "   ")[0] == EXIT_CONFIG


def test_filter_command_matches_expected(capsys, tmp_path):
    expected = json.loads((FIXTURE_DATA / "correctness.json").read_text())["expected_kept"]
    code, out, _ = run_cli(capsys, "filter", "--dataset", str(FIXTURE_DATA / "filter_dataset.jsonl"),
                           "--correctness", str(FIXTURE_DATA / "correctness.json"), "--seed", "3",
                           "--out", str(tmp_path / "kept.jsonl"))
    assert code == EXIT_OK and json.loads(out)["kept"] == expected
    assert len((tmp_path / "kept.jsonl").read_text().splitlines()) == len(expected)


def test_validate_command(capsys, configs_dir, tmp_path):
    good = [str(p) for p in sorted(configs_dir.glob("*.json"))] + [str(FIXTURE_DATA / "questions.jsonl")]
    assert run_cli(capsys, "validate", *good)[0] == EXIT_OK
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    code, _, err = run_cli(capsys, "validate", str(bad), str(tmp_path / "gone.json"))
    assert code == EXIT_CONFIG and "bad.jsonl" in err and "gone.json" in err


def test_figures_requires_results_dir(capsys, tmp_path, smoke_runs):
    assert run_cli(capsys, "figures", str(tmp_path))[0] == EXIT_CONFIG
    code, out, _ = run_cli(capsys, "figures", str(smoke_runs / "a"), "--out", str(tmp_path / "figs"))
    assert code == EXIT_OK and json.loads(out)["matrices"] > 0
