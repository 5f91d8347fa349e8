"""Post-hoc analytics over traces and policy snapshots.

Every matrix uses arms as rows and features (in canonical order) as columns.
Cells without enough support are NaN and are written as empty CSV cells, so
"no data" is never confused with "no effect". Nothing here is causal: the
outputs are associations between context features, arm choices and rewards.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import ARM_NAMES, FEATURE_NAMES, NO_REWRITE, N_FEATURES, Trace, read_trace
from .policies import NonLinearPolicy, PolicyState, restore_policy


class ArmNeverChosen(LookupError):
    pass


def _check_k(traces: Sequence[Trace]) -> int:
    if not traces:
        raise ValueError("no traces")
    ks = {t.n_arms for t in traces}
    if len(ks) != 1:
        raise ValueError(f"traces disagree on the number of arms: {sorted(ks)}")
    return ks.pop()


def _stack(traces: Sequence[Trace]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arms, rewards and an (n, 17) flag matrix pooled over traces."""
    arms = np.array([r.arm for t in traces for r in t], dtype=int)
    rewards = np.array([r.reward for t in traces for r in t], dtype=float)
    flags = np.array([r.context.flags for t in traces for r in t], dtype=float).reshape(-1, N_FEATURES)
    return arms, rewards, flags


def arm_names(k: int) -> list[str]:
    names = list(ARM_NAMES) + [NO_REWRITE]
    return names[:k] if k <= len(names) else [f"arm{i}" for i in range(k)]


# --- selection behaviour ----------------------------------------------------


def arm_selection_fractions(traces_by_dataset: Mapping[str, Sequence[Trace]]) -> dict[str, np.ndarray]:
    """Fraction of pulls on each arm, per dataset."""
    out = {}
    for ds, traces in traces_by_dataset.items():
        k = _check_k(traces)
        arms, _, _ = _stack(traces)
        if arms.size == 0:
            raise ValueError(f"dataset {ds!r} has no pulls")
        out[ds] = np.bincount(arms, minlength=k) / arms.size
    return out


def mean_reward_ranks(traces_by_dataset: Mapping[str, Sequence[Trace]]) -> dict[str, np.ndarray]:
    """Rank of each arm's mean observed reward per dataset (1 = best, ties share the average rank).

    Arms never pulled in a dataset get NaN and are left out of the ranking.
    """
    out = {}
    for ds, traces in traces_by_dataset.items():
        k = _check_k(traces)
        arms, rewards, _ = _stack(traces)
        means = np.full(k, np.nan)
        for a in range(k):
            m = arms == a
            if m.any():
                means[a] = rewards[m].mean()
        ranks = np.full(k, np.nan)
        seen = ~np.isnan(means)
        if seen.any():
            ranks[seen] = rankdata(-means[seen], method="average")
        out[ds] = ranks
    return out


def per_arm_feature_variance(traces: Sequence[Trace]) -> np.ndarray:
    """p(1-p) of each feature's activation among each arm's pulls; NaN rows for unchosen arms."""
    k = _check_k(traces)
    arms, _, flags = _stack(traces)
    out = np.full((k, N_FEATURES), np.nan)
    for a in range(k):
        m = arms == a
        if m.any():
            p = flags[m].mean(axis=0)
            out[a] = p * (1.0 - p)
    return out


def feature_uplift(traces: Sequence[Trace]) -> np.ndarray:
    """E[r | arm=a, f_i=1] - E[r | arm=a, f_i=0] by direct group averaging."""
    k = _check_k(traces)
    arms, rewards, flags = _stack(traces)
    out = np.full((k, N_FEATURES), np.nan)
    for a in range(k):
        m = arms == a
        for i in range(N_FEATURES):
            on = m & (flags[:, i] == 1)
            off = m & (flags[:, i] == 0)
            if on.any() and off.any():
                out[a, i] = rewards[on].mean() - rewards[off].mean()
    return out


def bernoulli_kl(p: float, q: float) -> float:
    """KL(Bern(p) || Bern(q)) for p, q strictly inside (0, 1)."""
    return p * math.log(p / q) + (1.0 - p) * math.log((1.0 - p) / (1.0 - q))


def symmetric_kl(p: np.ndarray, q: np.ndarray) -> float:
    return float(sum(bernoulli_kl(a, b) + bernoulli_kl(b, a) for a, b in zip(p, q)))


def inter_arm_context_kl(traces: Sequence[Trace]) -> np.ndarray:
    """Symmetric KL between per-arm context distributions.

    Each arm's chosen contexts are modelled as independent Bernoullis with
    Laplace smoothing, p = (ones + 1) / (n + 2). Arms never chosen get NaN.
    """
    k = _check_k(traces)
    arms, _, flags = _stack(traces)
    probs: list[Optional[np.ndarray]] = []
    for a in range(k):
        m = arms == a
        n = int(m.sum())
        probs.append((flags[m].sum(axis=0) + 1.0) / (n + 2.0) if n else None)
    out = np.full((k, k), np.nan)
    for a in range(k):
        if probs[a] is None:
            continue
        out[a, a] = 0.0
        for b in range(a + 1, k):
            if probs[b] is not None:
                out[a, b] = out[b, a] = symmetric_kl(probs[a], probs[b])
    return out


# --- coefficients -----------------------------------------------------------


@dataclass
class ThetaReport:
    """Seed-averaged coefficients; ``normalized`` is min-max per feature across arms."""

    raw: np.ndarray
    normalized: np.ndarray
    columns: list[str]
    n_snapshots: int


def _as_state(s) -> PolicyState:
    if isinstance(s, PolicyState):
        return s
    if isinstance(s, dict) and "state" in s:
        s = s["state"]
    return PolicyState.from_json(s)


def minmax_by_feature(raw: np.ndarray) -> np.ndarray:
    """Rescale each column to [0, 1] across arms; zero-range columns become NaN."""
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    rng = hi - lo
    out = np.full(raw.shape, np.nan)
    ok = rng > 0
    out[:, ok] = (raw[:, ok] - lo[ok]) / rng[ok]
    return out


def theta_report(snapshots: Iterable) -> ThetaReport:
    """Average theta over the given snapshots (typically the seeds of one dataset)."""
    thetas = []
    for s in snapshots:
        policy = restore_policy(_as_state(s))
        thetas.append(policy.theta())
    if not thetas:
        raise ValueError("no snapshots")
    shapes = {t.shape for t in thetas}
    if len(shapes) != 1:
        raise ValueError(f"snapshots disagree on theta shape: {sorted(shapes)}")
    raw = np.mean(thetas, axis=0)
    cols = list(FEATURE_NAMES) + (["bias"] if raw.shape[1] == N_FEATURES + 1 else [])
    return ThetaReport(raw, minmax_by_feature(raw), cols, len(thetas))


def theta_reports(snapshots_by_dataset: Mapping[str, Sequence]) -> dict[str, ThetaReport]:
    """Per-dataset reports averaged over seeds, plus a cross-dataset mean under ``"all-datasets"``.

    The cross-dataset raw matrix is the mean of the per-dataset means.
    """
    out = {ds: theta_report(snaps) for ds, snaps in snapshots_by_dataset.items()}
    if len(out) > 1:
        raw = np.mean([r.raw for r in out.values()], axis=0)
        first = next(iter(out.values()))
        out["all-datasets"] = ThetaReport(raw, minmax_by_feature(raw), first.columns,
                                          sum(r.n_snapshots for r in out.values()))
    return out


def pairwise_coefficient_differences(normalized: np.ndarray, columns: Sequence[str],
                                     names: Optional[Sequence[str]] = None) -> list[dict]:
    """Signed normalized difference for every feature and unordered arm pair.

    ``diff`` is in percent; label is Win (first arm higher), Loss, Tie, or absent
    when the feature had zero range.
    """
    k = normalized.shape[0]
    names = list(names or arm_names(k))
    rows = []
    for j, feat in enumerate(columns):
        for a, b in combinations(range(k), 2):
            d = normalized[a, j] - normalized[b, j]
            if np.isnan(d):
                label, val = "absent", None
            else:
                val = 100.0 * float(d)
                label = "Win" if d > 0 else "Loss" if d < 0 else "Tie"
            rows.append({"feature": feat, "arm_a": names[a], "arm_b": names[b], "diff_pct": val, "label": label})
    return rows


# --- writers ----------------------------------------------------------------


def _cell(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def write_matrix(path, matrix: np.ndarray, rows: Sequence[str], columns: Sequence[str], description: str,
                 **meta) -> None:
    """Write ``<path>.csv`` and a ``<path>.json`` sidecar with axis labels."""
    path = Path(path)
    with open(path.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(columns))
        for name, vals in zip(rows, np.atleast_2d(matrix)):
            w.writerow([name] + [_cell(v) for v in vals])
    sidecar = {"description": description, "rows": list(rows), "columns": list(columns),
               "absent": "empty cell", **meta}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def write_rows(path, rows: Sequence[dict], description: str, **meta) -> None:
    path = Path(path)
    fields = list(rows[0]) if rows else []
    with open(path.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    sidecar = {"description": description, "columns": fields, "absent": "empty cell", **meta}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


# --- results directory -------------------------------------------------------


@dataclass
class LoadedRun:
    tag: str
    dataset: str
    seed: int
    trace: Trace
    state: PolicyState


def load_results(results_dir) -> list[LoadedRun]:
    """Pair every snapshot in ``snapshots/`` with its trace in ``traces/``."""
    results_dir = Path(results_dir)
    runs = []
    for snap_path in sorted((results_dir / "snapshots").glob("*.json")):
        obj = json.loads(snap_path.read_text(encoding="utf-8"))
        state = PolicyState.from_json(obj["state"])
        trace_path = results_dir / "traces" / snap_path.name.replace(".json", ".jsonl")
        trace = Trace(read_trace(trace_path), n_arms=state.n_arms)
        runs.append(LoadedRun(obj["tag"], obj["dataset"], int(obj["seed"]), trace, state))
    if not runs:
        raise FileNotFoundError(f"no snapshots found under {results_dir / 'snapshots'}")
    return runs


def build_figures(results_dir, out_dir=None) -> list[Path]:
    """Materialize every analysis for every algorithm in a results directory."""
    from .pipeline import slug

    results_dir = Path(results_dir)
    out_dir = Path(out_dir or results_dir / "figures")
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = load_results(results_dir)
    written = []
    for tag in dict.fromkeys(r.tag for r in runs):
        mine = [r for r in runs if r.tag == tag]
        k = mine[0].state.n_arms
        names = arm_names(k)
        stem = out_dir / slug(tag)
        by_ds: dict[str, list[Trace]] = {}
        for r in mine:
            by_ds.setdefault(r.dataset, []).append(r.trace)
        datasets = list(by_ds)
        all_traces = [r.trace for r in mine]
        meta = {"algorithm": tag, "datasets": datasets}

        fr = arm_selection_fractions(by_ds)
        write_matrix(f"{stem}__arm_fractions", np.array([fr[d] for d in datasets]), datasets, names,
                     "fraction of pulls per arm (rows: datasets)", **meta)
        rk = mean_reward_ranks(by_ds)
        write_matrix(f"{stem}__reward_ranks", np.array([rk[d] for d in datasets]), datasets, names,
                     "mean-reward rank per arm, 1 = best, ties averaged (rows: datasets)", **meta)
        write_matrix(f"{stem}__feature_variance", per_arm_feature_variance(all_traces), names, FEATURE_NAMES,
                     "variance p(1-p) of each feature over the pulls of each arm", **meta)
        write_matrix(f"{stem}__feature_uplift", feature_uplift(all_traces), names, FEATURE_NAMES,
                     "mean reward with the feature present minus absent, per arm", **meta)
        write_matrix(f"{stem}__context_kl", inter_arm_context_kl(all_traces), names, names,
                     "symmetric KL between Laplace-smoothed per-arm context distributions", **meta)
        written += [Path(f"{stem}__{n}") for n in
                    ("arm_fractions", "reward_ranks", "feature_variance", "feature_uplift", "context_kl")]

        try:
            reports = theta_reports({d: [r.state for r in mine if r.dataset == d] for d in datasets})
        except NonLinearPolicy:
            continue
        for ds, rep in reports.items():
            s = f"{stem}__theta__{slug(ds)}"
            extra = {**meta, "dataset": ds, "n_snapshots": rep.n_snapshots}
            write_matrix(f"{s}__raw", rep.raw, names, rep.columns, "seed-averaged coefficients", **extra)
            write_matrix(f"{s}__normalized", rep.normalized, names, rep.columns,
                         "coefficients min-max normalized per feature across arms", **extra)
            write_rows(f"{s}__pairwise", pairwise_coefficient_differences(rep.normalized, rep.columns, names),
                       "normalized coefficient difference per feature and arm pair, in percent", **extra)
            written += [Path(f"{s}__{n}") for n in ("raw", "normalized", "pairwise")]
    return written
