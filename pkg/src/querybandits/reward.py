"""Correctness signals, their convex combination, and the reward-weight simplex sweep."""
from __future__ import annotations

import csv
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import RewardWeights


class ComponentOutOfRange(ValueError):
    pass


class DegenerateLabels(ValueError):
    pass


class BackendUnavailable(RuntimeError):
    """A judge or extractor backend failed after its retries; the round must be skipped."""


_BOUNDARY_PUNCT = string.punctuation + "“”‘’–—…"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation at token boundaries."""
    out = []
    for tok in text.lower().split():
        tok = tok.strip(_BOUNDARY_PUNCT)
        if tok:
            out.append(tok)
    return out


def bleu1(candidate: str, reference: str) -> float:
    """Clipped unigram precision of ``candidate`` against ``reference``, capped at 1."""
    cand = tokenize(candidate)
    if not cand:
        return 0.0
    ref_counts = Counter(tokenize(reference))
    matched = sum(min(c, ref_counts[tok]) for tok, c in Counter(cand).items())
    return min(1.0, matched / len(cand))


def lcs_length(a: str, b: str) -> int:
    # Bit-parallel LCS (Hyyro 2004) over Python ints; a's positions are the bits.
    if not a or not b:
        return 0
    masks: dict[str, int] = {}
    for i, ch in enumerate(a):
        masks[ch] = masks.get(ch, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for ch in b:
        u = v & masks.get(ch, 0)
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def indel_distance(a: str, b: str) -> int:
    """Insertions plus deletions needed to turn ``a`` into ``b``."""
    return len(a) + len(b) - 2 * lcs_length(a, b)


def indel_similarity(a: str, b: str) -> float:
    total = len(a) + len(b)
    if total == 0:
        return 1.0
    return 1.0 - indel_distance(a, b) / total


def token_set_ratio(a: str, b: str) -> float:
    """Token-set fuzzy similarity in [0, 1].

    Builds the sorted intersection ``t0`` and the two intersection-plus-remainder
    strings, and returns the best pairwise normalized indel similarity.
    """
    sa, sb = set(tokenize(a)), set(tokenize(b))
    if not sa and not sb:
        return 1.0
    if not sa or not sb:
        return 0.0
    inter = sorted(sa & sb)
    t0 = " ".join(inter)
    t1 = " ".join(inter + sorted(sa - sb))
    t2 = " ".join(inter + sorted(sb - sa))
    return max(indel_similarity(t0, t1), indel_similarity(t0, t2), indel_similarity(t1, t2))


# --- judge ------------------------------------------------------------------

_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)


def normalize_answer(text: str) -> str:
    return " ".join(_PUNCT_RE.sub(" ", text.lower()).split())


class MockJudge:
    """Offline stand-in for an LLM judge: normalized containment in either direction.

    Makes the pipeline testable without a model; it does not approximate a real
    judge's accuracy.
    """

    kind = "mock"

    def __call__(self, question: str, system_answer: str, reference_answer: str) -> int:
        sys_n, ref_n = normalize_answer(system_answer), normalize_answer(reference_answer)
        if not sys_n or not ref_n:
            return 0
        return int(ref_n in sys_n or sys_n in ref_n)


JUDGE_PROMPT = (
    "You are grading a question-answering system for factual correctness.\n"
    "Question: {question}\n"
    "Reference answer: {reference}\n"
    "System answer: {answer}\n"
    "Is the system answer factually consistent with the reference answer? Reply with YES or NO only."
)


class LlmJudge:
    """Binary consistency judgment delegated to an LLM client (live or recorded)."""

    def __init__(self, client, kind: str = "live"):
        self.client = client
        self.kind = kind

    def __call__(self, question: str, system_answer: str, reference_answer: str) -> int:
        from .llm import ClientFailure

        prompt = JUDGE_PROMPT.format(question=question, reference=reference_answer, answer=system_answer)
        try:
            reply = self.client.complete(prompt)
        except ClientFailure as exc:
            raise BackendUnavailable(f"judge backend failed: {exc}") from exc
        verdict = normalize_answer(reply).split()
        if verdict and verdict[0] in ("yes", "no"):
            return int(verdict[0] == "yes")
        raise BackendUnavailable(f"unparseable judge reply: {reply[:80]!r}")


def judge(question: str, system_answer: str, reference_answer: str, judge_backend) -> int:
    return int(judge_backend(question, system_answer, reference_answer))


# --- composite reward -------------------------------------------------------


@dataclass(frozen=True)
class RewardBreakdown:
    s_llm: int
    s_fuzz: float
    s_bleu: float
    reward: float

    def to_json(self) -> dict:
        return {"s_llm": self.s_llm, "s_fuzz": self.s_fuzz, "s_bleu": self.s_bleu, "reward": self.reward}

    @classmethod
    def from_json(cls, obj: dict) -> "RewardBreakdown":
        return cls(int(obj["s_llm"]), float(obj["s_fuzz"]), float(obj["s_bleu"]), float(obj.get("reward", 0.0)))


def combine_reward(s_llm: int, s_fuzz: float, s_bleu: float, w: RewardWeights) -> float:
    if s_llm not in (0, 1):
        raise ComponentOutOfRange(f"s_llm must be 0 or 1, got {s_llm!r}")
    for name, v in (("s_fuzz", s_fuzz), ("s_bleu", s_bleu)):
        if not (0.0 <= v <= 1.0):
            raise ComponentOutOfRange(f"{name}={v!r} outside [0, 1]")
    r = w.alpha * s_llm + w.beta * s_fuzz + w.gamma * s_bleu
    return min(1.0, max(0.0, r))


def score_answer(
    question: str,
    answer: str,
    reference: str,
    judge_backend,
    weights: RewardWeights,
) -> RewardBreakdown:
    s_llm = judge(question, answer, reference, judge_backend)
    s_fuzz = token_set_ratio(answer, reference)
    s_bleu = bleu1(answer, reference)
    return RewardBreakdown(s_llm, s_fuzz, s_bleu, combine_reward(s_llm, s_fuzz, s_bleu, weights))


# --- ROC-AUC and the simplex sweep ------------------------------------------


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-statistic AUC: P(score_pos > score_neg) with half credit for ties."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-d sequences")
    if len(s) < 2:
        raise ValueError("need at least two samples")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("roc_auc needs at least one positive and one negative label")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class SimplexPoint:
    weights: RewardWeights
    auc: float
    in_frontier: bool = False


def simplex_grid(step: float = 0.1) -> list[RewardWeights]:
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"step {step!r} must divide 1 evenly")
    grid = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            k = n - i - j
            grid.append(RewardWeights(i / n, j / n, k / n))
    return grid


def sweep_simplex(
    breakdowns: Sequence[RewardBreakdown],
    labels: Sequence[int],
    step: float = 0.1,
    frontier_tol: float = 0.01,
) -> list[SimplexPoint]:
    """Re-weight stored components over the triangular grid and score each point by AUC.

    Points with AUC within ``frontier_tol`` (relative) of the best are flagged as
    the frontier.
    """
    if len(breakdowns) != len(labels):
        raise ValueError("breakdowns and labels must be aligned")
    comps = np.array([[b.s_llm, b.s_fuzz, b.s_bleu] for b in breakdowns], dtype=float)
    grid = simplex_grid(step)
    aucs = [roc_auc(comps @ np.array(w.as_tuple()), labels) for w in grid]
    best = max(aucs)
    cutoff = best * (1.0 - frontier_tol)
    return [SimplexPoint(w, a, a >= cutoff) for w, a in zip(grid, aucs)]


def frontier(points: Sequence[SimplexPoint]) -> list[SimplexPoint]:
    return [p for p in points if p.in_frontier]


def write_simplex_csv(points: Sequence[SimplexPoint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["alpha", "beta", "gamma", "auc", "in_frontier"])
        for p in points:
            a, b, g = p.weights.as_tuple()
            writer.writerow([repr(a), repr(b), repr(g), repr(p.auc), str(p.in_frontier).lower()])


def best_weights(points: Sequence[SimplexPoint]) -> Optional[SimplexPoint]:
    return max(points, key=lambda p: p.auc) if points else None
