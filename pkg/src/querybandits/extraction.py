"""Query feature extraction: the 17 binary linguistic flags that form a bandit context.

The rule-based extractor is the offline default. Its rules are lexical
heuristics driven by the plain-text lexicons in ``lexicons/``; they approximate
the feature definitions, they do not reproduce an LLM's judgement. The
judge-backed extractor asks an LLM client one yes/no question per feature.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

from .core import FEATURE_DESCRIPTIONS, FEATURE_NAMES, N_FEATURES, FeatureVector
from .reward import BackendUnavailable, normalize_answer

EXCESSIVE_CUTOFF = 40
# Features whose rules look at capitalization, so they are exempt from the
# case-insensitivity property.
CASE_SENSITIVE_FEATURES = ("constraints", "entities")

_TOKEN_RE = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)*|\d+(?:[.,]\d+)*")
_ALPHA_RE = re.compile(r"[a-z]+")
_YEAR_RE = re.compile(r"\b(?:1[0-9]{3}|20[0-9]{2})\b")
_NUMBER_RE = re.compile(r"\d")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")
_LOCATION_PREPS = frozenset({"in", "at", "near", "from", "across", "inside", "outside"})


class EmptyQuery(ValueError):
    pass


class Lexicon:
    """A set of lowercase entries; entries with spaces are matched as token phrases."""

    def __init__(self, name: str, entries):
        self.name = name
        entries = [e.strip().lower() for e in entries if e.strip()]
        if not entries:
            raise ValueError(f"lexicon {name!r} is empty")
        self.words = frozenset(e for e in entries if " " not in e)
        self.phrases = tuple(sorted({e for e in entries if " " in e}))

    def __len__(self):
        return len(self.words) + len(self.phrases)

    def __contains__(self, word: str) -> bool:
        return word in self.words

    def count(self, tokens: list[str]) -> int:
        """Occurrences of single-word entries plus occurrences of phrase entries."""
        n = sum(1 for t in tokens if t in self.words)
        if self.phrases:
            padded = f" {' '.join(tokens)} "
            n += sum(padded.count(f" {p} ") for p in self.phrases)
        return n

    def hit(self, tokens: list[str]) -> bool:
        return self.count(tokens) > 0


def read_lexicon_lines(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


@lru_cache(maxsize=None)
def load_lexicon(name: str) -> Lexicon:
    text = resources.files("querybandits").joinpath("lexicons", f"{name}.txt").read_text(encoding="utf-8")
    return Lexicon(name, read_lexicon_lines(text))


def _inflect(base: str) -> set[str]:
    forms = {base, base + "s", base + "es", base + "ed", base + "d", base + "ing"}
    if base.endswith("e"):
        forms.add(base[:-1] + "ing")
    if base.endswith("y"):
        forms |= {base[:-1] + "ies", base[:-1] + "ied"}
    if len(base) >= 3 and base[-1] not in "aeiouwxy":
        forms |= {base + base[-1] + "ed", base + base[-1] + "ing"}
    return forms


@dataclass(frozen=True)
class Lexicons:
    pronouns: Lexicon
    subordinators: Lexicon
    negations: Lexicon
    superlatives: Lexicon
    superlative_exclusions: Lexicon
    polysemy: Lexicon
    common_words: Lexicon
    opinion: Lexicon
    jargon: Lexicon
    interrogatives: Lexicon
    verbs: Lexicon
    mismatch: Lexicon
    presupposition: Lexicon
    pragmatics: Lexicon
    unanswerable: Lexicon
    ambiguity: Lexicon
    constraints: Lexicon

    @classmethod
    def default(cls) -> "Lexicons":
        kw = {name: load_lexicon(name) for name in cls.__dataclass_fields__}
        forms = set()
        for v in kw["verbs"].words:
            forms |= _inflect(v)
        kw["verbs"] = Lexicon("verbs", sorted(forms))
        return cls(**kw)


@lru_cache(maxsize=1)
def default_lexicons() -> Lexicons:
    return Lexicons.default()


def _check_query(query: str) -> None:
    if not isinstance(query, str) or not query.strip():
        raise EmptyQuery("cannot extract features from an empty query")


def word_tokens(query: str) -> list[str]:
    return _TOKEN_RE.findall(query)


def _has_midsentence_capital(query: str) -> bool:
    for sentence in _SENTENCE_RE.split(query.strip()):
        toks = _TOKEN_RE.findall(sentence)
        for tok in toks[1:]:
            if tok[0].isupper() and tok != "I" and not tok.startswith("I'"):
                return True
    return False


def _has_location_pattern(tokens: list[str]) -> bool:
    return any(a.lower() in _LOCATION_PREPS and b[0].isupper() for a, b in zip(tokens, tokens[1:]))


@dataclass
class RuleBasedExtractor:
    """Deterministic lexicon and pattern rules, one per feature."""

    lexicons: Lexicons = field(default_factory=default_lexicons)
    excessive_cutoff: int = EXCESSIVE_CUTOFF
    kind: str = "RuleBased"

    def flags(self, query: str) -> dict[str, int]:
        _check_query(query)
        lx = self.lexicons
        raw = word_tokens(query)
        toks = [t.lower() for t in raw]
        alpha = _ALPHA_RE.findall(query.lower())
        year = bool(_YEAR_RE.search(query))

        superlative = lx.superlatives.hit(toks) or any(
            t.endswith("est") and len(t) >= 5 and t not in lx.superlative_exclusions for t in toks
        )
        constraints = (
            year
            or bool(_NUMBER_RE.search(query))
            or lx.constraints.hit(toks)
            or _has_location_pattern(raw)
        )
        out = {
            "anaphora": lx.pronouns.hit(toks),
            "subordination": lx.subordinators.count(toks) >= 2,
            "mismatch": lx.mismatch.hit(toks),
            "presupposition": lx.presupposition.hit(toks),
            "pragmatics": lx.pragmatics.hit(toks),
            "rarity": any(w not in lx.common_words for w in alpha),
            "negation": lx.negations.hit(toks) or any(t.endswith("n't") for t in toks),
            "superlative": superlative,
            "polysemy": lx.polysemy.hit(toks),
            "answerability": not lx.unanswerable.hit(toks),
            "excessive": len(toks) > self.excessive_cutoff,
            "subjectivity": lx.opinion.hit(toks),
            "ambiguity": lx.ambiguity.hit(toks) or len(toks) <= 3,
            "grounding": lx.interrogatives.hit(toks) and lx.verbs.hit(toks),
            "constraints": constraints,
            "entities": year or _has_midsentence_capital(query),
            "specialization": lx.jargon.hit(toks),
        }
        return {name: int(out[name]) for name in FEATURE_NAMES}

    def extract(self, query: str, bias_enabled: bool = True) -> FeatureVector:
        f = self.flags(query)
        return FeatureVector(tuple(f[name] for name in FEATURE_NAMES), bias_enabled=bias_enabled)


FEATURE_PROMPT = (
    "You are annotating a user query for one linguistic property.\n"
    "Property: {description}\n"
    "Query: {query}\n"
    "Does the query have this property? Reply with YES or NO only."
)


class JudgeBackedExtractor:
    """Asks an LLM client one yes/no question per feature, using the feature descriptions."""

    kind = "JudgeBacked"

    def __init__(self, client):
        self.client = client

    def prompt(self, query: str, feature: str) -> str:
        return FEATURE_PROMPT.format(description=FEATURE_DESCRIPTIONS[feature], query=query.strip())

    def flags(self, query: str) -> dict[str, int]:
        from .llm import ClientFailure

        _check_query(query)
        out = {}
        for name in FEATURE_NAMES:
            try:
                reply = self.client.complete(self.prompt(query, name))
            except ClientFailure as exc:
                raise BackendUnavailable(f"feature judge failed on {name}: {exc}") from exc
            words = normalize_answer(reply).split()
            if not words or words[0] not in ("yes", "no"):
                raise BackendUnavailable(f"unparseable feature judgement for {name}: {reply[:80]!r}")
            out[name] = int(words[0] == "yes")
        return out

    def extract(self, query: str, bias_enabled: bool = True) -> FeatureVector:
        f = self.flags(query)
        return FeatureVector(tuple(f[name] for name in FEATURE_NAMES), bias_enabled=bias_enabled)


class RecordedExtractor:
    """Looks features up in a fixture table keyed by normalized query text.

    The table maps each query either to a list of 17 flags or to a
    ``{feature: flag}`` object.
    """

    kind = "Recorded"

    def __init__(self, table: dict):
        self.table = {}
        for q, v in table.items():
            flags = [v[name] for name in FEATURE_NAMES] if isinstance(v, dict) else list(v)
            FeatureVector(tuple(int(x) for x in flags))  # validates length and values
            self.table[" ".join(q.lower().split())] = tuple(int(x) for x in flags)

    @classmethod
    def from_file(cls, path) -> "RecordedExtractor":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def flags(self, query: str) -> dict[str, int]:
        _check_query(query)
        key = " ".join(query.lower().split())
        if key not in self.table:
            raise BackendUnavailable(f"no recorded features for query {query[:60]!r}")
        return dict(zip(FEATURE_NAMES, self.table[key]))

    def extract(self, query: str, bias_enabled: bool = True) -> FeatureVector:
        return FeatureVector(tuple(self.flags(query)[n] for n in FEATURE_NAMES), bias_enabled=bias_enabled)


def extract_features(query: str, backend=None, bias_enabled: bool = True) -> FeatureVector:
    backend = backend if backend is not None else RuleBasedExtractor()
    fv = backend.extract(query, bias_enabled=bias_enabled)
    assert len(fv.flags) == N_FEATURES
    return fv


def make_extractor(spec: Optional[dict], client=None, base_dir: Optional[Path] = None):
    """Build an extractor from a config mapping such as ``{"kind": "RuleBased"}``."""
    spec = dict(spec or {"kind": "RuleBased"})
    kind = spec.get("kind", "RuleBased")
    if kind == "RuleBased":
        return RuleBasedExtractor(excessive_cutoff=int(spec.get("excessive_cutoff", EXCESSIVE_CUTOFF)))
    if kind == "JudgeBacked":
        if client is None:
            raise ValueError("JudgeBacked extraction needs an LLM client")
        return JudgeBackedExtractor(client)
    if kind == "Recorded":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return RecordedExtractor.from_file(path)
    raise ValueError(f"unknown extractor kind {kind!r}")
