"""The select / rewrite / answer / score / update loop and the experiment runner.

Two execution modes share one runner:

* dataset mode drives real queries through an extractor, a rewriter, an LLM
  client and a judge;
* simulation mode replaces all of that with a synthetic environment whose
  per-arm reward means are known, so regret is exact.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import (
    ARM_NAMES,
    FIVE_PLUS_NO_REWRITE,
    FIVE_REWRITES,
    NO_REWRITE,
    FeatureVector,
    PullRecord,
    QueryRecord,
    RewardWeights,
    RewriteArm,
    Trace,
    arm_set,
    dumps_line,
    write_jsonl,
)
from .env import EnvSpec, env_round, load_dataset, read_env, sample_context
from .extraction import make_extractor
from .llm import ClientFailure, make_client
from .metrics import (
    AlignmentError,
    cumulative_regret,
    exploration_adjusted_reward,
    has_oracle,
    mean_regret_curve,
    trace_win_rate,
    write_regret_curves,
)
from .policies import Policy, StaticPolicy, canonical_tag, make_policy
from .reward import BackendUnavailable, LlmJudge, MockJudge, RewardBreakdown, score_answer

log = logging.getLogger(__name__)

BASELINE = "baseline"
STATIC_PREFIX = "static:"
UNAVAILABLE = "unavailable"


class ConfigError(ValueError):
    pass


class UnknownArm(KeyError):
    pass


class RoundSkipped(RuntimeError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# --- rewriters --------------------------------------------------------------


def _swap_pairs(toks: list[str]) -> list[str]:
    out = list(toks)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


# Each mock transform is a bijection on token lists, so a rewrite can be undone.
_MOCK_TRANSFORMS = {
    "Paraphrase": lambda t: list(t),
    "Simplify": lambda t: t[::-1],
    "Disambiguate": lambda t: t[1:] + t[:1],
    "Expand": lambda t: t[-1:] + t[:-1],
    "ClarifyTerms": _swap_pairs,
}


class MockRewriter:
    """Deterministic tag-and-transform rewriter for offline runs."""

    kind = "Mock"

    def rewrite(self, query: str, arm: RewriteArm) -> str:
        if arm.is_identity:
            return query
        toks = query.split()
        return f"[{arm.name.upper()}] " + " ".join(_MOCK_TRANSFORMS[arm.name](toks))


def _strip_completion(text: str) -> str:
    text = text.strip()
    while len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'`":
        text = text[1:-1].strip()
    return text


class TemplatedRewriter:
    """Renders the arm's instruction template around the query and asks the LLM."""

    kind = "Templated"

    def __init__(self, client):
        self.client = client

    def rewrite(self, query: str, arm: RewriteArm) -> str:
        if arm.is_identity:
            return query
        out = _strip_completion(self.client.complete(arm.render(query)))
        if not out:
            raise ClientFailure(f"empty rewrite from {arm.name}")
        return out


class RecordedRewriter:
    """Rewrites looked up in ``{arm name: {query: rewrite}}``; misses are client failures."""

    kind = "Recorded"

    def __init__(self, table: dict):
        self.table = {arm: {" ".join(q.split()): r for q, r in rows.items()} for arm, rows in table.items()}

    @classmethod
    def from_file(cls, path) -> "RecordedRewriter":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def rewrite(self, query: str, arm: RewriteArm) -> str:
        if arm.is_identity:
            return query
        try:
            return self.table[arm.name][" ".join(query.split())]
        except KeyError:
            raise ClientFailure(f"no recorded {arm.name} rewrite for {query[:60]!r}") from None


def rewrite(query: str, arm: RewriteArm, rewriter) -> str:
    if not query.strip():
        raise ValueError("cannot rewrite an empty query")
    return rewriter.rewrite(query, arm)


def make_rewriter(spec: Optional[dict], client=None, base_dir: Optional[Path] = None):
    spec = dict(spec or {"kind": "Mock"})
    kind = spec.get("kind", "Mock")
    if kind == "Mock":
        return MockRewriter()
    if kind == "Templated":
        if client is None:
            raise ConfigError("Templated rewriter needs an LLM client")
        return TemplatedRewriter(client)
    if kind == "Recorded":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return RecordedRewriter.from_file(path)
    raise ConfigError(f"unknown rewriter kind {kind!r}")


# --- answer prompts ---------------------------------------------------------

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_LEAD_LETTER_RE = re.compile(r"^\(?([A-Za-z])[).:]?(?:\s|$)")
_ANY_LETTER_RE = re.compile(r"\b([A-Z])\b")


def answer_prompt(query: str, record: QueryRecord) -> str:
    if record.scenario == "MultipleChoice" and record.choices:
        lines = [f"{LETTERS[i]}. {c}" for i, c in enumerate(record.choices)]
        return (
            "Answer the multiple-choice question below with a single letter.\n"
            f"Question: {query}\n" + "\n".join(lines) + "\nAnswer:"
        )
    return f"Answer the question below concisely.\nQuestion: {query}\nAnswer:"


def answer_letter(text: str, n_choices: int) -> Optional[str]:
    text = text.strip()
    m = _LEAD_LETTER_RE.match(text)
    if m and m.group(1).upper() in LETTERS[:n_choices]:
        return m.group(1).upper()
    for m in _ANY_LETTER_RE.finditer(text):
        if m.group(1) in LETTERS[:n_choices]:
            return m.group(1)
    return None


def reference_letter(record: QueryRecord) -> Optional[str]:
    ref = record.reference_answer.strip()
    n = len(record.choices or ())
    if len(ref) == 1 and ref.upper() in LETTERS[:n]:
        return ref.upper()
    key = " ".join(ref.lower().split())
    for i, c in enumerate(record.choices or ()):
        if " ".join(c.lower().split()) == key:
            return LETTERS[i]
    return None


def score_record(record: QueryRecord, answer: str, judge_backend, weights: RewardWeights) -> RewardBreakdown:
    """Score an answer; multiple-choice records are compared by letter."""
    if record.scenario == "MultipleChoice" and record.choices:
        ref = reference_letter(record)
        if ref is not None:
            got = answer_letter(answer, len(record.choices)) or answer.strip()
            return score_answer(record.question, got, ref, judge_backend, weights)
    return score_answer(record.question, answer, record.reference_answer, judge_backend, weights)


# --- the round --------------------------------------------------------------


@dataclass
class Backends:
    """Everything a dataset-mode round needs besides the policy."""

    arms: list[RewriteArm]
    extractor: object
    rewriter: object
    client: object
    judge: object
    weights: RewardWeights = field(default_factory=RewardWeights)
    exhaustive: bool = False
    bias_enabled: bool = True


def _evaluate_arm(record: QueryRecord, arm: RewriteArm, b: Backends) -> tuple[str, str, RewardBreakdown]:
    rewritten = rewrite(record.question, arm, b.rewriter)
    answer = b.client.complete(answer_prompt(rewritten, record))
    return rewritten, answer, score_record(record, answer, b.judge, b.weights)


def run_round(policy: Policy, record: QueryRecord, backends: Backends, t: int) -> PullRecord:
    """extract -> select -> rewrite -> answer -> score -> update, for one query.

    Any backend failure raises RoundSkipped before the policy is touched.
    """
    try:
        context = backends.extractor.extract(record.question, bias_enabled=backends.bias_enabled)
    except BackendUnavailable as exc:
        raise RoundSkipped(f"extraction failed: {exc}") from exc
    x = context.as_array()
    arm, probs = policy.select(x if policy.contextual else None, t)
    try:
        rewritten, answer, br = _evaluate_arm(record, backends.arms[arm], backends)
        oracle = None
        if backends.exhaustive:
            others = [br.reward]
            for a in backends.arms:
                if a.index != arm:
                    others.append(_evaluate_arm(record, a, backends)[2].reward)
            oracle = max(others)
    except (ClientFailure, BackendUnavailable) as exc:
        raise RoundSkipped(f"{type(exc).__name__}: {exc}") from exc
    policy.update(arm, x, br.reward)
    return PullRecord(
        t=t,
        query_id=record.id,
        context=context,
        arm=arm,
        reward=br.reward,
        probs=tuple(float(p) for p in probs) if probs is not None else None,
        rewritten_query=rewritten,
        answer=answer,
        s_llm=br.s_llm,
        s_fuzz=br.s_fuzz,
        s_bleu=br.s_bleu,
        oracle_reward=oracle,
    )


def sim_round(policy: Policy, spec: EnvSpec, context: FeatureVector, rng: np.random.Generator, t: int,
              query_id: str) -> PullRecord:
    """One simulated round. The oracle reward is realized with the same noise draw."""
    x = context.as_array()
    arm, probs = policy.select(x if policy.contextual else None, t)
    reward, oracle = env_round(spec, context, arm, rng)
    policy.update(arm, x, reward)
    return PullRecord(
        t=t,
        query_id=query_id,
        context=context,
        arm=arm,
        reward=reward,
        probs=tuple(float(p) for p in probs) if probs is not None else None,
        oracle_reward=oracle,
    )


# --- configuration ----------------------------------------------------------


@dataclass
class ExperimentConfig:
    """One experiment: policies x (datasets or a synthetic environment) x seeds.

    ``algorithms`` entries are policy tags or aliases, ``static:<Arm>`` for a
    fixed-arm prompting baseline, or ``baseline`` for NoRewrite.
    """

    algorithms: list[str] = field(default_factory=lambda: ["thompson"])
    hyperparameters: dict = field(default_factory=dict)
    arm_set: str = FIVE_REWRITES
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    datasets: Optional[list[str]] = None
    env: Optional[object] = None
    extractor: dict = field(default_factory=lambda: {"kind": "RuleBased"})
    rewriter: dict = field(default_factory=lambda: {"kind": "Mock"})
    client: dict = field(default_factory=lambda: {"kind": "mock"})
    judge: str = "mock"
    rounds: Optional[int] = None
    seeds: list[int] = field(default_factory=lambda: [0])
    test_split: int = 100
    exhaustive: bool = False
    bias_enabled: Optional[bool] = None
    lambda_explore: float = 0.1
    bootstrap_to: Optional[int] = None
    compare_baseline: bool = True
    out: str = "results"
    base_dir: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        if (self.datasets is None) == (self.env is None):
            raise ConfigError("exactly one of 'datasets' and 'env' must be given")
        if self.datasets is not None and not self.datasets:
            raise ConfigError("'datasets' is empty")
        if self.rounds is not None and self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.env is not None and self.rounds is None:
            raise ConfigError("simulation mode needs 'rounds'")
        if not self.seeds:
            raise ConfigError("'seeds' must be non-empty")
        if not self.algorithms:
            raise ConfigError("'algorithms' must be non-empty")
        if self.arm_set not in (FIVE_REWRITES, FIVE_PLUS_NO_REWRITE):
            raise ConfigError(f"unknown arm set {self.arm_set!r}")
        if self.test_split < 1:
            raise ConfigError("test_split must be >= 1")
        if self.judge not in ("mock", "llm"):
            raise ConfigError(f"unknown judge {self.judge!r}")
        for a in self.algorithms:
            try:
                resolve_entry(a, self.arm_set)
            except (KeyError, UnknownArm) as exc:
                raise ConfigError(str(exc)) from None
        if self.env is not None:
            if BASELINE in self.algorithms:
                raise ConfigError("the no-rewrite baseline has no meaning in simulation mode")
            spec = self.env_spec()
            if spec.n_arms != len(arm_set(self.arm_set)):
                raise ConfigError(f"environment has {spec.n_arms} arms but arm set {self.arm_set!r} has "
                                  f"{len(arm_set(self.arm_set))}")
        return self

    def resolve(self, p) -> Path:
        p = Path(p)
        if p.is_absolute() or self.base_dir is None:
            return p
        return Path(self.base_dir) / p

    def env_spec(self) -> EnvSpec:
        if isinstance(self.env, EnvSpec):
            return self.env
        if isinstance(self.env, dict):
            return EnvSpec.from_json(self.env)
        name = str(self.env)
        try:
            return read_env(name)
        except FileNotFoundError:
            return read_env(str(self.resolve(name)))

    def use_bias(self) -> bool:
        if self.bias_enabled is not None:
            return self.bias_enabled
        if self.env is not None:
            return self.env_spec().has_bias
        return True

    def to_json(self) -> dict:
        env = self.env.to_json() if isinstance(self.env, EnvSpec) else self.env
        return {
            "algorithms": list(self.algorithms),
            "hyperparameters": self.hyperparameters,
            "arm_set": self.arm_set,
            "reward_weights": self.reward_weights.to_json(),
            "datasets": self.datasets,
            "env": env,
            "extractor": self.extractor,
            "rewriter": self.rewriter,
            "client": self.client,
            "judge": self.judge,
            "rounds": self.rounds,
            "seeds": list(self.seeds),
            "test_split": self.test_split,
            "exhaustive": self.exhaustive,
            "bias_enabled": self.bias_enabled,
            "lambda_explore": self.lambda_explore,
            "bootstrap_to": self.bootstrap_to,
            "compare_baseline": self.compare_baseline,
            "out": self.out,
        }

    @classmethod
    def from_json(cls, obj: dict, base_dir=None) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(obj)
        if "reward_weights" in kw:
            try:
                kw["reward_weights"] = RewardWeights.from_json(kw["reward_weights"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if "algorithm" in kw:
            raise ConfigError("use 'algorithms' (a list)")
        return cls(**kw, base_dir=str(base_dir) if base_dir is not None else None)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_json(obj, base_dir=path.parent).validate()

    def config_hash(self) -> str:
        text = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def resolve_entry(entry: str, arm_set_choice: str = FIVE_REWRITES) -> tuple[str, Optional[int]]:
    """Map an algorithms entry to ``(display tag, static arm index or None)``."""
    if entry == BASELINE:
        return "Baseline (No Rewrite)", len(ARM_NAMES)
    if entry.startswith(STATIC_PREFIX):
        return static_label(entry[len(STATIC_PREFIX):], arm_set_choice)
    return canonical_tag(entry), None


def static_label(arm_name: str, arm_set_choice: str = FIVE_REWRITES) -> tuple[str, int]:
    arms = arm_set(arm_set_choice)
    key = arm_name.replace(" ", "").replace("_", "").lower()
    for a in arms:
        if a.name.lower() == key:
            label = "Baseline (No Rewrite)" if a.is_identity else f"Prompting ({a.name})"
            return label, a.index
    raise UnknownArm(f"unknown arm {arm_name!r} for arm set {arm_set_choice!r}")


def static_policy(arm_tag: str, arm_set_choice: str = FIVE_PLUS_NO_REWRITE) -> StaticPolicy:
    """A constant policy for one rewrite arm or NoRewrite; it ignores feedback."""
    label, idx = static_label(arm_tag, arm_set_choice)
    return StaticPolicy(len(arm_set(arm_set_choice)), arm=idx, label=label)


def policy_seed(seed: int, tag: str) -> int:
    """Per-policy seed derived from the run seed and the policy tag."""
    ss = np.random.SeedSequence([seed, zlib.crc32(tag.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def slug(tag: str) -> str:
    s = tag.replace("ε", "eps").lower()
    return re.sub(r"[^a-z0-9]+", "-", s).strip("-")


# --- runs -------------------------------------------------------------------


@dataclass
class RunResult:
    tag: str
    dataset: str
    seed: int
    trace: Trace
    skipped: list[dict]
    snapshot: Optional[dict] = None


def _build_policy(tag: str, static_arm: Optional[int], n_arms: int, dim: int, seed: int, hp: dict) -> Policy:
    if static_arm is not None:
        return StaticPolicy(n_arms, arm=static_arm, label=tag, seed=policy_seed(seed, tag))
    return make_policy(tag, n_arms, dim, policy_seed(seed, tag), hp)


def query_stream(records: Sequence[QueryRecord], rounds: int, seed: int) -> list[QueryRecord]:
    """Records in a per-seed shuffled order, reshuffling for each further pass."""
    rng = stream_rng(seed, 0)
    out: list[QueryRecord] = []
    while len(out) < rounds:
        out.extend(records[int(i)] for i in rng.permutation(len(records)))
    return out[:rounds]


def run_dataset(policy: Policy, tag: str, dataset: str, stream: Sequence[QueryRecord], backends: Backends,
                seed: int, lambda_explore: float) -> RunResult:
    records, skipped = [], []
    for pos, rec in enumerate(stream, start=1):
        try:
            records.append(run_round(policy, rec, backends, len(records) + 1))
        except RoundSkipped as exc:
            log.warning("%s/%s seed %d: skipped query %s (%s)", tag, dataset, seed, rec.id, exc.reason)
            skipped.append({"position": pos, "query_id": rec.id, "reason": exc.reason})
    trace = Trace(records, n_arms=len(backends.arms), lambda_explore=lambda_explore)
    return RunResult(tag, dataset, seed, trace, skipped, policy.snapshot().to_json())


def run_simulation(policy: Policy, tag: str, spec: EnvSpec, rounds: int, seed: int, bias_enabled: bool,
                   lambda_explore: float = 0.1, dataset: str = "") -> RunResult:
    """Simulated run. Contexts and reward noise come from seed-only streams, so every
    policy with the same seed faces the same contexts and draws."""
    ctx_rng, noise_rng = stream_rng(seed, 1), stream_rng(seed, 2)
    records = []
    for t in range(1, rounds + 1):
        context = sample_context(spec.contexts.for_dataset(dataset or None), ctx_rng, bias_enabled)
        records.append(sim_round(policy, spec, context, noise_rng, t, f"sim-{seed}-{t}"))
    trace = Trace(records, n_arms=spec.n_arms, lambda_explore=lambda_explore)
    return RunResult(tag, dataset or spec.name, seed, trace, [], policy.snapshot().to_json())


def metrics_row(trace: Trace, baseline: Optional[Trace], test_split: int = 100, strict: bool = False) -> dict:
    """adj_reward, cum_regret and win_rate for one run; missing pieces are marked unavailable.

    With ``strict`` a baseline that is not paired by query raises AlignmentError.
    """
    row = {
        "adj_reward": exploration_adjusted_reward(trace),
        "cum_regret": cumulative_regret(trace) if has_oracle(trace) else UNAVAILABLE,
        "win_rate": UNAVAILABLE,
    }
    if baseline is not None and len(trace) and len(baseline):
        try:
            row["win_rate"] = trace_win_rate(trace, baseline, test_split)
        except AlignmentError as exc:
            if strict:
                raise
            log.warning("win rate unavailable: %s", exc)
    return row


def _mean_rows(rows: list[dict]) -> dict:
    out = {}
    for key in ("adj_reward", "cum_regret", "win_rate"):
        vals = [r[key] for r in rows]
        out[key] = UNAVAILABLE if any(v == UNAVAILABLE for v in vals) or not vals else float(np.mean(vals))
    return out


def summarize(results: list[RunResult], baselines: dict[tuple[str, int], Trace], test_split: int) -> dict:
    """Table-shaped report: per-policy means over every (dataset, seed) run, plus per dataset."""
    by_tag: dict[str, list[dict]] = {}
    by_ds: dict[str, dict[str, list[dict]]] = {}
    for r in results:
        row = metrics_row(r.trace, baselines.get((r.dataset, r.seed)), test_split)
        by_tag.setdefault(r.tag, []).append(row)
        by_ds.setdefault(r.dataset, {}).setdefault(r.tag, []).append(row)
    return {
        "table": {tag: _mean_rows(rows) for tag, rows in by_tag.items()},
        "per_dataset": {ds: {tag: _mean_rows(rows) for tag, rows in d.items()} for ds, d in by_ds.items()},
    }


def _file_sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Experiment:
    """Builds backends from a config and runs every (algorithm, dataset, seed) unit."""

    def __init__(self, config: ExperimentConfig, offline: bool = False, jobs: int = 1):
        self.config = config.validate()
        self.offline = offline
        self.jobs = max(1, int(jobs))
        self.base_dir = Path(config.base_dir) if config.base_dir else None
        self._entries = [resolve_entry(a, config.arm_set) for a in config.algorithms]
        self._hp = {}
        for k, v in config.hyperparameters.items():
            try:
                self._hp[canonical_tag(k)] = dict(v)
            except KeyError as exc:
                raise ConfigError(f"hyperparameters for unknown algorithm: {exc}") from None

    # dataset mode ------------------------------------------------------

    def _backends(self, arms: list[RewriteArm]) -> Backends:
        c = self.config
        client = make_client(c.client, offline=self.offline, base_dir=self.base_dir)
        judge = MockJudge() if c.judge == "mock" else LlmJudge(client, kind=c.client.get("kind", "live"))
        return Backends(
            arms=arms,
            extractor=make_extractor(c.extractor, client=client, base_dir=self.base_dir),
            rewriter=make_rewriter(c.rewriter, client=client, base_dir=self.base_dir),
            client=client,
            judge=judge,
            weights=c.reward_weights,
            exhaustive=c.exhaustive,
            bias_enabled=c.use_bias(),
        )

    def _datasets(self) -> dict[str, list[QueryRecord]]:
        out: dict[str, list[QueryRecord]] = {}
        for p in self.config.datasets or []:
            recs = load_dataset(self.config.resolve(p), bootstrap_to=self.config.bootstrap_to)
            for rec in recs:
                out.setdefault(rec.dataset, []).append(rec)
        if not out:
            raise ConfigError("datasets contain no records")
        return out

    def _dataset_units(self):
        c = self.config
        data = self._datasets()
        arms = arm_set(c.arm_set)
        dim = 18 if c.use_bias() else 17
        units, baseline_units = [], []
        for ds, recs in data.items():
            for seed in c.seeds:
                stream = query_stream(recs, c.rounds or len(recs), seed)
                for tag, static_arm in self._entries:
                    units.append((tag, static_arm, ds, seed, stream, arms, dim))
                if c.compare_baseline:
                    six = arm_set(FIVE_PLUS_NO_REWRITE)
                    baseline_units.append(("Baseline (No Rewrite)", len(ARM_NAMES), ds, seed, stream, six, dim))
        return units, baseline_units

    def _run_dataset_unit(self, unit) -> RunResult:
        tag, static_arm, ds, seed, stream, arms, dim = unit
        n_arms = len(arms)
        if static_arm is not None and static_arm >= n_arms:
            # NoRewrite listed as an algorithm always runs on the six-arm set
            arms = arm_set(FIVE_PLUS_NO_REWRITE)
            n_arms = len(arms)
        policy = _build_policy(tag, static_arm, n_arms, dim, seed, self._hp.get(tag, {}))
        return run_dataset(policy, tag, ds, stream, self._backends(arms), seed, self.config.lambda_explore)

    # simulation mode ---------------------------------------------------

    def _run_sim_unit(self, unit) -> RunResult:
        tag, static_arm, seed = unit
        c = self.config
        spec = c.env_spec()
        dim = 18 if c.use_bias() else 17
        policy = _build_policy(tag, static_arm, spec.n_arms, dim, seed, self._hp.get(tag, {}))
        return run_simulation(policy, tag, spec, c.rounds, seed, c.use_bias(), c.lambda_explore)

    # driver --------------------------------------------------------------

    def _map(self, fn, units):
        if self.jobs == 1 or len(units) < 2:
            return [fn(u) for u in units]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(fn, units))

    def run(self) -> tuple[list[RunResult], dict[tuple[str, int], Trace], str]:
        """Run everything. Returns (results, baseline traces by (dataset, seed), baseline tag)."""
        c = self.config
        if c.env is not None:
            units = [(tag, arm, seed) for tag, arm in self._entries for seed in c.seeds]
            results = self._map(self._run_sim_unit, units)
            baselines, label = {}, ""
            if c.compare_baseline:
                # No NoRewrite arm exists in a synthetic environment; the baseline is
                # the static arm with the highest mean reward over all seeds.
                spec = c.env_spec()
                static_units = []
                for a in range(spec.n_arms):
                    name = arm_set(c.arm_set)[a].name
                    static_units += [(f"Prompting ({name})", a, seed) for seed in c.seeds]
                static_runs = self._map(self._run_sim_unit, static_units)
                means = {}
                for r in static_runs:
                    means.setdefault(r.tag, []).append(sum(r.trace.rewards))
                label = max(means, key=lambda k: (float(np.mean(means[k])), -list(means).index(k)))
                baselines = {(r.dataset, r.seed): r.trace for r in static_runs if r.tag == label}
            return results, baselines, label
        units, base_units = self._dataset_units()
        results = self._map(self._run_dataset_unit, units)
        base_runs = self._map(self._run_dataset_unit, base_units)
        baselines = {(r.dataset, r.seed): r.trace for r in base_runs}
        return results, baselines, ("Baseline (No Rewrite)" if base_runs else "")

    def run_and_write(self, out: Optional[Path] = None) -> dict:
        out = Path(out or self.config.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest_path = out / "manifest.json"
        manifest = {
            "tool": "querybandits",
            "version": __version__,
            "config_hash": self.config.config_hash(),
            "seeds": list(self.config.seeds),
            "complete": False,
            "artifacts": {},
        }
        _write_json(manifest_path, manifest)
        results, baselines, label = self.run()
        written = write_artifacts(out, self.config, results, baselines, label)
        manifest["complete"] = True
        manifest["baseline"] = label
        manifest["artifacts"] = {str(p.relative_to(out)): _file_sha(p) for p in sorted(written)}
        _write_json(manifest_path, manifest)
        return manifest


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def trace_filename(tag: str, dataset: str, seed: int) -> str:
    return f"{slug(tag)}__{slug(dataset)}__seed{seed}.jsonl"


def write_artifacts(out: Path, config: ExperimentConfig, results: list[RunResult],
                    baselines: dict[tuple[str, int], Trace], baseline_label: str) -> list[Path]:
    written: list[Path] = []
    (out / "traces").mkdir(exist_ok=True)
    (out / "snapshots").mkdir(exist_ok=True)
    for r in results:
        p = out / "traces" / trace_filename(r.tag, r.dataset, r.seed)
        write_jsonl(p, r.trace.records)
        written.append(p)
        if r.snapshot is not None:
            s = out / "snapshots" / p.name.replace(".jsonl", ".json")
            _write_json(s, {"tag": r.tag, "dataset": r.dataset, "seed": r.seed, "state": r.snapshot})
            written.append(s)
    for (ds, seed), tr in sorted(baselines.items()):
        p = out / "traces" / trace_filename(BASELINE, ds, seed)
        write_jsonl(p, tr.records)
        written.append(p)
    skipped = [dict(s, algorithm=r.tag, dataset=r.dataset, seed=r.seed) for r in results for s in r.skipped]
    p = out / "skipped.jsonl"
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        for s in skipped:
            fh.write(dumps_line(s) + "\n")
    written.append(p)

    report = summarize(results, baselines, config.test_split)
    report["baseline"] = baseline_label
    report["rounds"] = {f"{r.tag}|{r.dataset}|{r.seed}": len(r.trace) for r in results}
    report["skipped_rounds"] = len(skipped)
    p = out / "report.json"
    _write_json(p, report)
    written.append(p)

    curves = {}
    for tag in dict.fromkeys(r.tag for r in results):
        traces = [r.trace for r in results if r.tag == tag]
        if traces and all(has_oracle(t) for t in traces):
            curves[tag] = mean_regret_curve(traces)
    if curves:
        p = out / "regret_curves.csv"
        write_regret_curves(curves, p)
        written.append(p)
    return written


def run_experiment(config: ExperimentConfig, out=None, offline: bool = False, jobs: int = 1) -> dict:
    """Run a config end to end and write traces, snapshots, report and manifest."""
    return Experiment(config, offline=offline, jobs=jobs).run_and_write(out)
