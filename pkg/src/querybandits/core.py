"""Shared domain types: feature vectors, rewrite arms, reward weights and records.

Every type here serializes to a plain JSON object with snake_case keys.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np

FEATURE_NAMES: tuple[str, ...] = (
    "anaphora",
    "subordination",
    "mismatch",
    "presupposition",
    "pragmatics",
    "rarity",
    "negation",
    "superlative",
    "polysemy",
    "answerability",
    "excessive",
    "subjectivity",
    "ambiguity",
    "grounding",
    "constraints",
    "entities",
    "specialization",
)
N_FEATURES = len(FEATURE_NAMES)

# Table-style descriptions, used verbatim as yes/no criteria by judge-backed extraction.
FEATURE_DESCRIPTIONS: dict[str, str] = {
    "anaphora": "Contains anaphoric references (e.g., it, this)",
    "subordination": "Contains multiple subordinate clauses",
    "mismatch": "Query (e.g. open-ended) does not match task (e.g. retrieval)",
    "presupposition": "Assumptions within the query are implicitly regarded as truthful",
    "pragmatics": 'Queries with discourse-driven intent (i.e. "can you pass me the salt")',
    "rarity": "Presence of rare words with poor representation",
    "negation": "Presence of negation (e.g., not, never)",
    "superlative": "Usage of superlative forms (e.g., best, largest) with implicit semantics",
    "polysemy": "Presence of words that have multiple, related-meanings",
    "answerability": "Query is not highly speculative, sarcastic or rhetorical",
    "excessive": "Overloaded with a large amount of details and information",
    "subjectivity": "Query requires LLM to reflect creatively and engender a personal opinion",
    "ambiguity": "Presence of ambiguous phrasing that opens multiple interpretations",
    "grounding": "Presence of clear intention and goal",
    "constraints": "Presence of temporal/spatial/task-specific constraints",
    "entities": "Presence of verifiable entities",
    "specialization": "Query requires domain-specific knowledge for understanding",
}


class ValidationError(ValueError):
    """Base class for malformed domain values."""


class WrongLength(ValidationError):
    pass


class NonBinaryEntry(ValidationError):
    pass


class InvalidWeights(ValidationError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    """The 17 binary linguistic flags of a query, in fixed order.

    With ``bias_enabled`` the numeric view used by linear policies gets a
    trailing constant 1, so the effective dimension is 18.
    """

    flags: tuple[int, ...]
    bias_enabled: bool = True

    def __post_init__(self):
        flags = tuple(self.flags)
        if len(flags) != N_FEATURES:
            raise WrongLength(f"expected {N_FEATURES} flags, got {len(flags)}")
        for i, v in enumerate(flags):
            if v not in (0, 1):
                raise NonBinaryEntry(f"flag {FEATURE_NAMES[i]!r} has non-binary value {v!r}")
        object.__setattr__(self, "flags", tuple(int(v) for v in flags))

    @property
    def dim(self) -> int:
        return N_FEATURES + int(self.bias_enabled)

    def as_array(self) -> np.ndarray:
        x = np.asarray(self.flags, dtype=float)
        if self.bias_enabled:
            x = np.append(x, 1.0)
        return x

    def named(self) -> dict[str, int]:
        return dict(zip(FEATURE_NAMES, self.flags))

    def __getitem__(self, name: str) -> int:
        return self.flags[FEATURE_NAMES.index(name)]

    def to_json(self) -> list[int]:
        return list(self.flags)

    @classmethod
    def from_json(cls, raw: Sequence[int], bias_enabled: bool = True) -> "FeatureVector":
        return validate_feature_vector(raw, bias_enabled=bias_enabled)


def validate_feature_vector(raw: Iterable[float], bias_enabled: bool = True) -> FeatureVector:
    values = list(raw)
    if len(values) != N_FEATURES:
        raise WrongLength(f"expected {N_FEATURES} entries, got {len(values)}")
    out = []
    for i, v in enumerate(values):
        if isinstance(v, bool):
            v = int(v)
        if not isinstance(v, (int, float, np.integer, np.floating)) or not math.isfinite(v):
            raise NonBinaryEntry(f"entry {i} ({FEATURE_NAMES[i]}) is not a finite number: {v!r}")
        if v != 0 and v != 1:
            raise NonBinaryEntry(f"entry {i} ({FEATURE_NAMES[i]}) is {v!r}, expected 0 or 1")
        out.append(int(v))
    return FeatureVector(tuple(out), bias_enabled=bias_enabled)


# --- rewrite arms -----------------------------------------------------------

ARM_NAMES: tuple[str, ...] = ("Paraphrase", "Simplify", "Disambiguate", "Expand", "ClarifyTerms")
NO_REWRITE = "NoRewrite"

FIVE_REWRITES = "five"
FIVE_PLUS_NO_REWRITE = "five+norewrite"
ARM_SET_CHOICES = (FIVE_REWRITES, FIVE_PLUS_NO_REWRITE)

QUERY_PLACEHOLDER = "{query}"


@dataclass(frozen=True)
class RewriteArm:
    index: int
    name: str
    template: str

    @property
    def is_identity(self) -> bool:
        return self.name == NO_REWRITE

    def render(self, query: str) -> str:
        return self.template.replace(QUERY_PLACEHOLDER, query)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RewriteArm":
        return cls(int(obj["index"]), obj["name"], obj["template"])


def _load_template(name: str) -> str:
    from importlib import resources

    text = resources.files("querybandits").joinpath("templates", f"{name.lower()}.txt").read_text(
        encoding="utf-8"
    )
    return text.strip("\n")


def arm_set(choice: str = FIVE_REWRITES) -> list[RewriteArm]:
    """Return the arms for ``choice`` in fixed order, NoRewrite last when enabled."""
    if choice not in ARM_SET_CHOICES:
        raise ValueError(f"unknown arm set {choice!r}; expected one of {ARM_SET_CHOICES}")
    names = list(ARM_NAMES)
    if choice == FIVE_PLUS_NO_REWRITE:
        names.append(NO_REWRITE)
    arms = []
    for i, name in enumerate(names):
        template = QUERY_PLACEHOLDER if name == NO_REWRITE else _load_template(name)
        arms.append(RewriteArm(i, name, template))
    return arms


def arm_index(name: str, arms: Sequence[RewriteArm]) -> int:
    key = name.replace(" ", "").replace("_", "").lower()
    for arm in arms:
        if arm.name.lower() == key:
            return arm.index
    raise KeyError(name)


# --- reward weights ---------------------------------------------------------


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 0.6
    beta: float = 0.3
    gamma: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidWeights(f"{name} must be a nonnegative finite number, got {v!r}")
        total = self.alpha + self.beta + self.gamma
        if abs(total - 1.0) > 1e-9:
            raise InvalidWeights(f"weights must sum to 1 (got {total!r})")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "RewardWeights":
        if isinstance(obj, dict):
            return cls(float(obj["alpha"]), float(obj["beta"]), float(obj["gamma"]))
        a, b, g = obj
        return cls(float(a), float(b), float(g))


# --- records ----------------------------------------------------------------

SCENARIOS = ("Extractive", "MultipleChoice", "Abstractive")


@dataclass(frozen=True)
class QueryRecord:
    id: str
    dataset: str
    question: str
    reference_answer: str
    perturbations: tuple[str, ...] = ()
    scenario: str = "Extractive"
    choices: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if not self.question.strip():
            raise ValidationError(f"record {self.id!r}: empty question")
        if not self.reference_answer.strip():
            raise ValidationError(f"record {self.id!r}: empty reference_answer")
        object.__setattr__(self, "perturbations", tuple(self.perturbations))
        if len(self.perturbations) > 5:
            raise ValidationError(f"record {self.id!r}: at most 5 perturbations allowed")
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"record {self.id!r}: unknown scenario {self.scenario!r}")
        if self.choices is not None:
            object.__setattr__(self, "choices", tuple(self.choices))

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "dataset": self.dataset,
            "question": self.question,
            "reference_answer": self.reference_answer,
            "perturbations": list(self.perturbations),
            "scenario": self.scenario,
        }
        if self.choices is not None:
            out["choices"] = list(self.choices)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "QueryRecord":
        choices = obj.get("choices")
        return cls(
            id=str(obj["id"]),
            dataset=str(obj["dataset"]),
            question=obj["question"],
            reference_answer=obj["reference_answer"],
            perturbations=tuple(obj.get("perturbations", ())),
            scenario=obj.get("scenario", "Extractive"),
            choices=tuple(choices) if choices is not None else None,
        )


@dataclass(frozen=True)
class PullRecord:
    """One round of the select/rewrite/answer/score/update loop.

    Reward components are None for purely simulated rounds, where the reward
    is drawn from a synthetic environment rather than scored.
    """

    t: int
    query_id: str
    context: FeatureVector
    arm: int
    reward: float
    probs: Optional[tuple[float, ...]] = None
    rewritten_query: str = ""
    answer: str = ""
    s_llm: Optional[int] = None
    s_fuzz: Optional[float] = None
    s_bleu: Optional[float] = None
    oracle_reward: Optional[float] = None

    def __post_init__(self):
        if self.t < 1:
            raise ValidationError("t is 1-based")
        if not (0.0 <= self.reward <= 1.0):
            raise ValidationError(f"reward {self.reward!r} outside [0, 1]")
        if self.probs is not None:
            object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
            if abs(sum(self.probs) - 1.0) > 1e-9:
                raise ValidationError("probs must sum to 1")
        if self.oracle_reward is not None and self.oracle_reward < self.reward - 1e-12:
            raise ValidationError("oracle_reward below observed reward")

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "query_id": self.query_id,
            "context": self.context.to_json(),
            "bias_enabled": self.context.bias_enabled,
            "arm": self.arm,
            "probs": list(self.probs) if self.probs is not None else None,
            "rewritten_query": self.rewritten_query,
            "answer": self.answer,
            "s_llm": self.s_llm,
            "s_fuzz": self.s_fuzz,
            "s_bleu": self.s_bleu,
            "reward": self.reward,
            "oracle_reward": self.oracle_reward,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PullRecord":
        probs = obj.get("probs")
        return cls(
            t=int(obj["t"]),
            query_id=str(obj["query_id"]),
            context=FeatureVector.from_json(obj["context"], bias_enabled=obj.get("bias_enabled", True)),
            arm=int(obj["arm"]),
            probs=tuple(probs) if probs is not None else None,
            rewritten_query=obj.get("rewritten_query", ""),
            answer=obj.get("answer", ""),
            s_llm=obj.get("s_llm"),
            s_fuzz=obj.get("s_fuzz"),
            s_bleu=obj.get("s_bleu"),
            reward=float(obj["reward"]),
            oracle_reward=obj.get("oracle_reward"),
        )


def dumps_line(obj: Any) -> str:
    """Canonical single-line JSON used for every JSONL artifact."""
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path, items: Iterable[Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in items:
            obj = item.to_json() if hasattr(item, "to_json") else item
            fh.write(dumps_line(obj) + "\n")


def read_trace(path) -> list[PullRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(PullRecord.from_json(json.loads(line)))
    return out


@dataclass
class Trace:
    """An ordered run of pulls with its arm count and entropy bonus weight."""

    records: list[PullRecord] = field(default_factory=list)
    n_arms: int = 5
    lambda_explore: float = 0.1

    def __post_init__(self):
        if self.n_arms < 2:
            raise ValidationError("a trace needs at least 2 arms")
        for i, rec in enumerate(self.records, start=1):
            if rec.t != i:
                raise ValidationError(f"trace rounds must be consecutive from 1 (record {i} has t={rec.t})")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def arms(self) -> list[int]:
        return [r.arm for r in self.records]

    @property
    def rewards(self) -> list[float]:
        return [r.reward for r in self.records]
