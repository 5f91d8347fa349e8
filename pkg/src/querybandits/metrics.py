"""Evaluation metrics over traces: exploration-adjusted reward, regret, win rate."""
from __future__ import annotations

import csv
import math
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .core import Trace


class EmptyHistory(ValueError):
    pass


class MissingOracle(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class AlignmentError(LengthMismatch):
    """Policy and baseline pulls do not refer to the same queries."""


def normalized_entropy(history: Sequence[int], n_arms: int) -> float:
    """Shannon entropy of the empirical arm frequencies divided by ln K."""
    if len(history) == 0:
        raise EmptyHistory("entropy of an empty selection history")
    if n_arms < 2:
        raise ValueError("normalized entropy needs K >= 2")
    n = len(history)
    h = 0.0
    for c in Counter(history).values():
        p = c / n
        h -= p * math.log(p)
    return h / math.log(n_arms)


def entropy_series(history: Sequence[int], n_arms: int) -> np.ndarray:
    """H_t over the inclusive prefixes 1..t, computed incrementally."""
    counts: Counter = Counter()
    # running sum of c*ln(c) lets each prefix entropy be O(1): H = ln n - S/n
    s = 0.0
    out = np.empty(len(history))
    log_k = math.log(n_arms)
    for i, arm in enumerate(history, start=1):
        c = counts[arm]
        if c:
            s -= c * math.log(c)
        counts[arm] = c + 1
        s += (c + 1) * math.log(c + 1)
        out[i - 1] = max(0.0, (math.log(i) - s / i) / log_k)
    return out


def exploration_adjusted_reward(trace: Trace) -> float:
    if len(trace) == 0:
        return 0.0
    h = entropy_series(trace.arms, trace.n_arms)
    return float(sum(trace.rewards) + trace.lambda_explore * h.sum())


def regret_series(trace: Trace) -> np.ndarray:
    """Instantaneous regrets r*_t - r_t."""
    gaps = []
    for rec in trace:
        if rec.oracle_reward is None:
            raise MissingOracle(f"record t={rec.t} has no oracle reward")
        gaps.append(rec.oracle_reward - rec.reward)
    return np.array(gaps, dtype=float)


def cumulative_regret(trace: Trace) -> float:
    return float(regret_series(trace).sum())


def mean_cumulative_regret(traces: Iterable[Trace]) -> float:
    sums = [cumulative_regret(tr) for tr in traces]
    if not sums:
        raise ValueError("no traces")
    return float(np.mean(sums))


def has_oracle(trace: Trace) -> bool:
    return len(trace) > 0 and all(r.oracle_reward is not None for r in trace)


def win_rate(policy_rewards: Sequence[float], baseline_rewards: Sequence[float]) -> float:
    """Percentage of paired trials where the policy strictly beats the baseline."""
    if len(policy_rewards) != len(baseline_rewards):
        raise LengthMismatch(f"{len(policy_rewards)} policy rewards vs {len(baseline_rewards)} baseline rewards")
    if len(policy_rewards) == 0:
        raise LengthMismatch("win rate needs at least one paired trial")
    wins = sum(1 for p, b in zip(policy_rewards, baseline_rewards) if p > b)
    return 100.0 * wins / len(policy_rewards)


def final_pulls(trace: Trace, size: int = 100) -> list:
    """The final ``size`` pulls of the run, used as the held-out win-rate trials."""
    return trace.records[-size:] if size > 0 else []


def trace_win_rate(trace: Trace, baseline: Trace, size: int = 100) -> float:
    pol = final_pulls(trace, size)
    base = final_pulls(baseline, size)
    if [r.query_id for r in pol] != [r.query_id for r in base]:
        raise AlignmentError("policy and baseline test splits are not paired by query")
    return win_rate([r.reward for r in pol], [r.reward for r in base])


def write_regret_curves(curves: dict[str, np.ndarray], path) -> None:
    """CSV of mean cumulative regret by round, one block per algorithm."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "mean_regret", "algorithm"])
        for algo, curve in curves.items():
            for t, v in enumerate(curve, start=1):
                writer.writerow([t, repr(float(v)), algo])


def mean_regret_curve(traces: Sequence[Trace]) -> np.ndarray:
    """Seed-averaged cumulative regret curve, truncated to the shortest trace."""
    series = [np.cumsum(regret_series(tr)) for tr in traces]
    n = min(len(s) for s in series)
    return np.mean([s[:n] for s in series], axis=0)
