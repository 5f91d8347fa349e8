"""Synthetic contextual reward environments, dataset ingestion and query construction.

The synthetic environments stand in for the live LLM reward: each arm's mean
reward is a clipped linear function of the context, so the best achievable
reward of every round is known exactly.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import FEATURE_NAMES, N_FEATURES, FeatureVector, QueryRecord, ValidationError

NOISE_MODES = ("Bernoulli", "GaussianClipped")


class ArmOutOfRange(IndexError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingField(ParseError):
    def __init__(self, name: str, line: int):
        super().__init__(f"missing field {name!r}", line)
        self.field = name


class PerturbationCountInvalid(ValueError):
    pass


@dataclass(frozen=True)
class ContextDistribution:
    """Independent Bernoulli activation per feature, optionally a mixture of such products.

    ``components`` is a list of ``(weight, probs)`` pairs; when present a
    component is drawn first and its probabilities are used. ``overrides`` maps
    dataset names to replacement distributions.
    """

    probs: tuple[float, ...] = (0.5,) * N_FEATURES
    components: tuple[tuple[float, tuple[float, ...]], ...] = ()
    component_names: tuple[str, ...] = ()
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        comps = tuple((float(w), tuple(float(p) for p in ps)) for w, ps in self.components)
        object.__setattr__(self, "components", comps)
        for ps in [self.probs] + [ps for _, ps in comps]:
            if len(ps) != N_FEATURES:
                raise ValidationError(f"context distribution needs {N_FEATURES} probabilities")
            if any(not 0.0 <= p <= 1.0 for p in ps):
                raise ValidationError("activation probabilities must lie in [0, 1]")
        if comps:
            total = sum(w for w, _ in comps)
            if any(w < 0 for w, _ in comps) or abs(total - 1.0) > 1e-9:
                raise ValidationError("mixture weights must be nonnegative and sum to 1")

    def for_dataset(self, name: Optional[str]) -> "ContextDistribution":
        if name and name in self.overrides:
            return self.overrides[name]
        return self

    def centroids(self) -> list[np.ndarray]:
        if self.components:
            return [np.array(ps) for _, ps in self.components]
        return [np.array(self.probs)]

    def to_json(self) -> dict:
        out: dict = {"probs": list(self.probs)}
        if self.components:
            out["components"] = [
                {"name": n, "weight": w, "probs": list(ps)}
                for n, (w, ps) in zip(self.component_names or [""] * len(self.components), self.components)
            ]
        if self.overrides:
            out["overrides"] = {k: v.to_json() for k, v in self.overrides.items()}
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ContextDistribution":
        comps = obj.get("components", [])
        overrides = {k: cls.from_json(v) for k, v in obj.get("overrides", {}).items()}
        return cls(
            probs=tuple(obj.get("probs", (0.5,) * N_FEATURES)),
            components=tuple((c["weight"], tuple(c["probs"])) for c in comps),
            component_names=tuple(c.get("name", "") for c in comps),
            overrides=overrides,
        )


def sample_context(dist: ContextDistribution, rng: np.random.Generator, bias_enabled: bool = True) -> FeatureVector:
    probs = dist.probs
    if dist.components:
        weights = np.array([w for w, _ in dist.components])
        idx = min(int(np.searchsorted(np.cumsum(weights), rng.random(), side="right")), len(weights) - 1)
        probs = dist.components[idx][1]
    draws = rng.random(N_FEATURES) < np.asarray(probs)
    return FeatureVector(tuple(int(v) for v in draws), bias_enabled=bias_enabled)


@dataclass(frozen=True)
class EnvSpec:
    """True per-arm reward parameters and a noise model.

    ``theta_star`` has one row per arm. Rows of length 18 carry a trailing bias
    weight and are applied to the context with a constant 1 appended.
    """

    theta_star: tuple[tuple[float, ...], ...]
    noise_mode: str = "Bernoulli"
    noise_scale: float = 0.0
    seed: int = 0
    contexts: ContextDistribution = field(default_factory=ContextDistribution)
    name: str = "custom"

    def __post_init__(self):
        rows = tuple(tuple(float(v) for v in row) for row in self.theta_star)
        object.__setattr__(self, "theta_star", rows)
        if len(rows) < 2:
            raise ValidationError("an environment needs at least 2 arms")
        dims = {len(r) for r in rows}
        if len(dims) != 1 or dims.pop() not in (N_FEATURES, N_FEATURES + 1):
            raise ValidationError(f"theta_star rows must all have length {N_FEATURES} or {N_FEATURES + 1}")
        if self.noise_mode not in NOISE_MODES:
            raise ValidationError(f"unknown noise mode {self.noise_mode!r}")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be nonnegative")

    @property
    def n_arms(self) -> int:
        return len(self.theta_star)

    @property
    def dim(self) -> int:
        return len(self.theta_star[0])

    @property
    def has_bias(self) -> bool:
        return self.dim == N_FEATURES + 1

    @property
    def theta(self) -> np.ndarray:
        return np.array(self.theta_star)

    def augment(self, context: FeatureVector) -> np.ndarray:
        x = np.asarray(context.flags, dtype=float)
        return np.append(x, 1.0) if self.has_bias else x

    def means(self, context: FeatureVector) -> np.ndarray:
        return np.clip(self.theta @ self.augment(context), 0.0, 1.0)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "theta_star": [list(r) for r in self.theta_star],
            "noise_mode": self.noise_mode,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
            "contexts": self.contexts.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EnvSpec":
        return cls(
            theta_star=tuple(tuple(r) for r in obj["theta_star"]),
            noise_mode=obj.get("noise_mode", "Bernoulli"),
            noise_scale=float(obj.get("noise_scale", 0.0)),
            seed=int(obj.get("seed", 0)),
            contexts=ContextDistribution.from_json(obj.get("contexts", {})),
            name=obj.get("name", "custom"),
        )


PRESETS = ("uniform", "contextual-advantage", "single-best-arm", "sparse-recovery")


def load_preset(name: str) -> EnvSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown environment preset {name!r}; choose from {PRESETS}")
    text = resources.files("querybandits").joinpath("presets", f"{name}.json").read_text(encoding="utf-8")
    return EnvSpec.from_json(json.loads(text))


def _realize(spec: EnvSpec, mean: float, draw: float) -> float:
    if spec.noise_mode == "Bernoulli":
        return 1.0 if draw < mean else 0.0
    return float(np.clip(mean + spec.noise_scale * draw, 0.0, 1.0))


def _draw(spec: EnvSpec, rng: np.random.Generator) -> float:
    return rng.random() if spec.noise_mode == "Bernoulli" else rng.standard_normal()


def env_step(spec: EnvSpec, context: FeatureVector, arm: int, rng: np.random.Generator) -> float:
    """Draw one reward for ``arm``; consumes exactly one random draw."""
    if not 0 <= arm < spec.n_arms:
        raise ArmOutOfRange(f"arm {arm} not in [0, {spec.n_arms})")
    return _realize(spec, spec.means(context)[arm], _draw(spec, rng))


def env_round(spec: EnvSpec, context: FeatureVector, arm: int, rng: np.random.Generator) -> tuple[float, float]:
    """Reward of ``arm`` and of the oracle arm under the same noise draw.

    Sharing the draw makes the realized oracle reward dominate the observed one
    (both realizations are monotone in the mean), so per-round regret is >= 0.
    """
    if not 0 <= arm < spec.n_arms:
        raise ArmOutOfRange(f"arm {arm} not in [0, {spec.n_arms})")
    mu = spec.means(context)
    draw = _draw(spec, rng)
    return _realize(spec, mu[arm], draw), _realize(spec, mu.max(), draw)


def oracle_best(spec: EnvSpec, context: FeatureVector) -> tuple[int, float]:
    mu = spec.means(context)
    best = int(np.argmax(mu))
    return best, float(mu[best])


def optimal_arms_by_cluster(spec: EnvSpec) -> list[int]:
    """Oracle arm at each mixture-component centroid of the context distribution."""
    out = []
    for c in spec.contexts.centroids():
        x = np.append(c, 1.0) if spec.has_bias else c
        out.append(int(np.argmax(spec.theta @ x)))
    return out


# --- datasets ---------------------------------------------------------------

REQUIRED_FIELDS = ("id", "dataset", "question", "reference_answer")


def load_dataset(path, bootstrap_to: Optional[int] = None, seed: int = 0) -> list[QueryRecord]:
    """Read a QueryRecord JSONL file, optionally bootstrapping it up to ``bootstrap_to`` records."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            for name in REQUIRED_FIELDS:
                if name not in obj:
                    raise MissingField(name, lineno)
            try:
                records.append(QueryRecord.from_json(obj))
            except (ValidationError, TypeError) as exc:
                raise ParseError(str(exc), lineno) from exc
    if bootstrap_to is not None and len(records) < bootstrap_to:
        records = bootstrap(records, bootstrap_to, seed)
    return records


def bootstrap(records: Sequence[QueryRecord], n: int, seed: int = 0) -> list[QueryRecord]:
    """Keep every record and add ``n - len(records)`` resampled copies with ``#k`` id suffixes."""
    if not records:
        raise ValueError("cannot bootstrap an empty dataset")
    rng = np.random.default_rng(seed)
    out = list(records)
    copies: dict[str, int] = {}
    for idx in rng.integers(len(records), size=n - len(records)):
        rec = records[int(idx)]
        copies[rec.id] = copies.get(rec.id, 0) + 1
        out.append(
            QueryRecord(
                id=f"{rec.id}#{copies[rec.id]}",
                dataset=rec.dataset,
                question=rec.question,
                reference_answer=rec.reference_answer,
                perturbations=rec.perturbations,
                scenario=rec.scenario,
                choices=rec.choices,
            )
        )
    return out


@dataclass(frozen=True)
class FilteredQuery:
    record: QueryRecord
    perturbation_index: int
    query: str


def _record_rng(seed: int, record_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(record_id.encode("utf-8"))])


def filter_queries(
    records: Sequence[QueryRecord],
    original_correct: Callable[[QueryRecord], bool],
    perturbation_correct: Callable[[QueryRecord, int, str], bool],
    seed: int = 0,
    min_incorrect: int = 1,
    max_incorrect: int = 3,
) -> list[FilteredQuery]:
    """Keep records whose original is answered correctly and 1-3 of 5 perturbations are not.

    Each kept record gets one of its five perturbations, chosen uniformly with a
    generator keyed on (seed, record id) so the choice does not depend on which
    other records were kept.
    """
    out = []
    for rec in records:
        if len(rec.perturbations) != 5:
            raise PerturbationCountInvalid(f"record {rec.id!r} has {len(rec.perturbations)} perturbations, need 5")
        if not original_correct(rec):
            continue
        wrong = sum(1 for i, p in enumerate(rec.perturbations) if not perturbation_correct(rec, i, p))
        if not min_incorrect <= wrong <= max_incorrect:
            continue
        idx = int(_record_rng(seed, rec.id).integers(5))
        out.append(FilteredQuery(rec, idx, rec.perturbations[idx]))
    return out


def table_predicates(table: dict) -> tuple[Callable, Callable]:
    """Predicates backed by ``{id: {"original": bool, "perturbations": [bool] * 5}}``."""

    def original(rec):
        return bool(table[rec.id]["original"])

    def perturbed(rec, i, _text):
        return bool(table[rec.id]["perturbations"][i])

    return original, perturbed


def trivial_perturbations(question: str, n: int = 5) -> list[str]:
    """Token rotations of the question, for pipeline smoke tests only.

    These are not meaning-preserving paraphrases.
    """
    toks = question.split()
    if len(toks) < 2:
        return [question] * n
    return [" ".join(toks[(i + 1) % len(toks):] + toks[: (i + 1) % len(toks)]) for i in range(n)]


def feature_index(name: str) -> int:
    return FEATURE_NAMES.index(name)


def read_env(path_or_name: str) -> EnvSpec:
    if path_or_name in PRESETS:
        return load_preset(path_or_name)
    with open(Path(path_or_name), encoding="utf-8") as fh:
        return EnvSpec.from_json(json.load(fh))
