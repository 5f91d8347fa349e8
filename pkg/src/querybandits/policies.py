"""Bandit policies over rewrite arms behind one select/update/snapshot interface.

Non-contextual: EXP3, FTPL, Beta-Bernoulli Thompson sampling.
Linear contextual: LinUCB, LinUCB-KL, FTRL, epsilon-greedy FTRL, LinearEXP3,
LinearFTPL, Gaussian Thompson sampling.
Plus the static single-arm policies used as prompting and no-rewrite baselines.

Every policy owns a counter-based Philox RNG. ``select`` only advances that RNG;
learned state changes in ``update`` and only for the chosen arm.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, ClassVar, Optional

import numpy as np

from .core import FeatureVector

STATE_FORMAT = "querybandits.policy_state"
STATE_VERSION = 1


class HyperparameterError(ValueError):
    pass


class NonLinearPolicy(TypeError):
    """The policy has no per-arm linear coefficients to report."""


class CovarianceNotPD(ArithmeticError):
    pass


class SingularMatrix(ArithmeticError):
    pass


# --- serializable state -----------------------------------------------------


def _rng_state_to_json(state: dict) -> dict:
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, np.ndarray):
            return [int(x) for x in v]
        if isinstance(v, np.integer):
            return int(v)
        return v

    return conv(state)


def _rng_state_from_json(obj: dict) -> dict:
    state = json.loads(json.dumps(obj))
    st = state["state"]
    st["counter"] = np.array(st["counter"], dtype=np.uint64)
    st["key"] = np.array(st["key"], dtype=np.uint64)
    state["buffer"] = np.array(state["buffer"], dtype=np.uint64)
    return state


@dataclass
class PolicyState:
    """A complete, versioned snapshot of a policy: arrays, hyperparameters and RNG."""

    algorithm: str
    n_arms: int
    dim: Optional[int]
    seed: int
    hyperparameters: dict[str, Any]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    rng: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format": STATE_FORMAT,
            "version": STATE_VERSION,
            "algorithm": self.algorithm,
            "n_arms": self.n_arms,
            "dim": self.dim,
            "seed": self.seed,
            "hyperparameters": dict(self.hyperparameters),
            "arrays": {k: np.asarray(v).tolist() for k, v in self.arrays.items()},
            "rng": _rng_state_to_json(self.rng),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, obj: dict) -> "PolicyState":
        if obj.get("format") != STATE_FORMAT:
            raise ValueError("not a policy state document")
        if obj.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported policy state version {obj.get('version')!r}")
        return cls(
            algorithm=obj["algorithm"],
            n_arms=int(obj["n_arms"]),
            dim=obj["dim"],
            seed=int(obj["seed"]),
            hyperparameters=dict(obj["hyperparameters"]),
            arrays={k: np.array(v, dtype=float) for k, v in obj["arrays"].items()},
            rng=obj["rng"],
        )

    @classmethod
    def loads(cls, text: str) -> "PolicyState":
        return cls.from_json(json.loads(text))


# --- base class -------------------------------------------------------------


def _as_vector(context) -> Optional[np.ndarray]:
    if context is None:
        return None
    if isinstance(context, FeatureVector):
        return context.as_array()
    return np.asarray(context, dtype=float)


def _argmax(scores: np.ndarray) -> int:
    # np.argmax returns the first maximum: lowest-index tie-break.
    return int(np.argmax(scores))


class Policy:
    tag: ClassVar[str] = ""
    contextual: ClassVar[bool] = False
    linear: ClassVar[bool] = False
    defaults: ClassVar[dict[str, float]] = {}
    _array_names: ClassVar[tuple[str, ...]] = ()

    def __init__(self, n_arms: int, dim: Optional[int] = None, seed: int = 0, **hyperparameters):
        if n_arms < 1:
            raise HyperparameterError("need at least one arm")
        if self.contextual and (dim is None or dim < 1):
            raise HyperparameterError(f"{self.tag} needs a context dimension")
        unknown = set(hyperparameters) - set(self.defaults)
        if unknown:
            raise HyperparameterError(f"unknown hyperparameters for {self.tag}: {sorted(unknown)}")
        self.n_arms = n_arms
        self.dim = dim if self.contextual else None
        self.seed = int(seed)
        self.hyperparameters = {**self.defaults, **{k: float(v) for k, v in hyperparameters.items()}}
        self._validate()
        self.rng = np.random.Generator(np.random.Philox(self.seed))
        self._init_state()

    def __getattr__(self, name):
        hp = self.__dict__.get("hyperparameters")
        if hp is not None and name in hp:
            return hp[name]
        raise AttributeError(name)

    def _validate(self):
        pass

    def _init_state(self):
        pass

    def _check_context(self, context) -> Optional[np.ndarray]:
        if not self.contextual:
            return None
        x = _as_vector(context)
        if x is None:
            raise ValueError(f"{self.tag} needs a context")
        if x.shape != (self.dim,):
            raise ValueError(f"context has shape {x.shape}, expected ({self.dim},)")
        return x

    def _check_update(self, arm: int, reward: float):
        if not 0 <= arm < self.n_arms:
            raise IndexError(f"arm {arm} out of range")
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"reward {reward!r} outside [0, 1]")

    def _sample(self, probs: np.ndarray) -> int:
        cdf = np.cumsum(probs)
        u = self.rng.random() * cdf[-1]
        return min(int(np.searchsorted(cdf, u, side="right")), self.n_arms - 1)

    def select(self, context=None, t: int = 1) -> tuple[int, Optional[np.ndarray]]:
        raise NotImplementedError

    def update(self, arm: int, context, reward: float) -> None:
        raise NotImplementedError

    def theta(self) -> np.ndarray:
        raise NonLinearPolicy(f"{self.tag} has no per-arm linear coefficients")

    def snapshot(self) -> PolicyState:
        return PolicyState(
            algorithm=self.tag,
            n_arms=self.n_arms,
            dim=self.dim,
            seed=self.seed,
            hyperparameters=dict(self.hyperparameters),
            arrays={name: getattr(self, name).copy() for name in self._array_names},
            rng=_rng_state_to_json(self.rng.bit_generator.state),
        )

    @classmethod
    def restore(cls, state: PolicyState) -> "Policy":
        klass = resolve_algorithm(state.algorithm)
        policy = klass(state.n_arms, state.dim, state.seed, **state.hyperparameters)
        for name in klass._array_names:
            setattr(policy, name, np.array(state.arrays[name], dtype=float))
        policy._refresh()
        policy.rng.bit_generator.state = _rng_state_from_json(state.rng)
        return policy

    def _refresh(self, arm: Optional[int] = None) -> None:
        """Rebuild derived caches from the stored arrays (all arms, or one)."""


def _gumbel(rng: np.random.Generator, size: int, scale: float) -> np.ndarray:
    u = rng.random(size)
    u = np.clip(u, np.finfo(float).tiny, None)  # open interval: avoid ln(0)
    return -scale * np.log(-np.log(u))


# --- non-contextual ---------------------------------------------------------


class EXP3(Policy):
    """Exponential weights with uniform mixing: p = (1-gamma) w/sum(w) + gamma/K."""

    tag = "EXP3 (Non-Contextual)"
    defaults = {"gamma": 0.1}
    _array_names = ("weights",)
    renorm_threshold = 1e12

    def _validate(self):
        if not 0.0 < self.gamma <= 1.0:
            raise HyperparameterError("EXP3 gamma must be in (0, 1]")

    def _init_state(self):
        self.weights = np.ones(self.n_arms)

    def probs(self) -> np.ndarray:
        k = self.n_arms
        return (1.0 - self.gamma) * self.weights / self.weights.sum() + self.gamma / k

    def select(self, context=None, t=1):
        p = self.probs()
        return self._sample(p), p

    def update(self, arm, context, reward):
        self._check_update(arm, reward)
        p = self.probs()[arm]
        self.weights[arm] *= math.exp(self.gamma * reward / (self.n_arms * p))
        total = self.weights.sum()
        if total > self.renorm_threshold:
            self.weights = np.maximum(self.weights / total, np.finfo(float).tiny)


class FTPL(Policy):
    """Follow the perturbed leader: argmax of cumulative reward plus Gumbel(0, 1/eta) noise."""

    tag = "FTPL (Non-Contextual)"
    defaults = {"eta": 1.0}
    _array_names = ("cum_reward",)

    def _validate(self):
        if self.eta <= 0:
            raise HyperparameterError("FTPL eta must be positive")

    def _init_state(self):
        self.cum_reward = np.zeros(self.n_arms)

    def select(self, context=None, t=1):
        noise = _gumbel(self.rng, self.n_arms, 1.0 / self.eta)
        return _argmax(self.cum_reward + noise), None

    def update(self, arm, context, reward):
        self._check_update(arm, reward)
        self.cum_reward[arm] += reward


class BetaThompson(Policy):
    """Beta-Bernoulli Thompson sampling with fractional updates a += r, b += 1 - r."""

    tag = "Thompson Sampling (Non-Contextual)"
    defaults = {"a0": 1.0, "b0": 1.0}
    _array_names = ("a", "b")

    def _validate(self):
        if self.a0 <= 0 or self.b0 <= 0:
            raise HyperparameterError("Beta prior parameters must be positive")

    def _init_state(self):
        self.a = np.full(self.n_arms, self.a0)
        self.b = np.full(self.n_arms, self.b0)

    def select(self, context=None, t=1):
        return _argmax(self.rng.beta(self.a, self.b)), None

    def update(self, arm, context, reward):
        self._check_update(arm, reward)
        self.a[arm] += reward
        self.b[arm] += 1.0 - reward


# --- linear contextual ------------------------------------------------------


class LinUCB(Policy):
    """Disjoint ridge regression per arm with an upper-confidence bonus."""

    tag = "LinUCB"
    contextual = True
    linear = True
    defaults = {"lam": 1.0, "alpha": 1.0}
    _array_names = ("A", "b")

    def _validate(self):
        if self.lam <= 0:
            raise HyperparameterError("ridge lambda must be positive")
        if self.alpha < 0:
            raise HyperparameterError("exploration alpha must be nonnegative")

    def _init_state(self):
        self.A = np.tile(self.lam * np.eye(self.dim), (self.n_arms, 1, 1))
        self.b = np.zeros((self.n_arms, self.dim))
        self._refresh()

    def _refresh(self, arm=None):
        # A^-1 is cached per arm and always recomputed from A alone, so a
        # restored snapshot rebuilds exactly the same cache.
        if arm is None:
            self._A_inv = np.empty_like(self.A)
            arms = range(self.n_arms)
        else:
            arms = (arm,)
        for a in arms:
            try:
                self._A_inv[a] = np.linalg.inv(self.A[a])
            except np.linalg.LinAlgError as exc:
                raise SingularMatrix(str(exc)) from exc

    def _mean_var(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = np.einsum("kij,kj->ki", self._A_inv, self.b)
        mean = theta @ x
        var = np.maximum(np.einsum("i,kij,j->k", x, self._A_inv, x), 0.0)
        return mean, var

    def scores(self, context, t: int = 1) -> np.ndarray:
        mean, var = self._mean_var(self._check_context(context))
        return mean + self.alpha * np.sqrt(var)

    def select(self, context=None, t=1):
        return _argmax(self.scores(context, t)), None

    def update(self, arm, context, reward):
        x = self._check_context(context)
        self._check_update(arm, reward)
        self.A[arm] += np.outer(x, x)
        self.b[arm] += reward * x
        self._refresh(arm)

    def theta(self) -> np.ndarray:
        return np.linalg.solve(self.A, self.b[..., None])[..., 0]


class LinUCBKL(LinUCB):
    """LinUCB with a KL-style bonus sqrt(2 var max(0, (ln t + c ln ln(t+1)) / n_a))."""

    tag = "LinUCB with KL"
    defaults = {"lam": 1.0, "c": 3.0}
    _array_names = ("A", "b", "counts")

    def _validate(self):
        if self.lam <= 0:
            raise HyperparameterError("ridge lambda must be positive")
        if self.c <= 0:
            raise HyperparameterError("KL constant c must be positive")

    def _init_state(self):
        super()._init_state()
        self.counts = np.zeros(self.n_arms)

    def bound(self, t: int) -> np.ndarray:
        if t < 1:
            raise ValueError("round index t is 1-based")
        n = np.maximum(1.0, self.counts)
        raw = (math.log(t) + self.c * math.log(math.log(t + 1))) / n
        return np.maximum(raw, 0.0)

    def scores(self, context, t: int = 1) -> np.ndarray:
        mean, var = self._mean_var(self._check_context(context))
        return mean + np.sqrt(2.0 * var * self.bound(t))

    def update(self, arm, context, reward):
        super().update(arm, context, reward)
        self.counts[arm] += 1


class FTRL(Policy):
    """Per-arm FTRL-proximal regression of reward on context with L1/L2 regularization."""

    tag = "FTRL"
    contextual = True
    linear = True
    defaults = {"alpha": 0.1, "beta": 1.0, "l1": 0.01, "l2": 0.01}
    _array_names = ("z", "n")

    def _validate(self):
        if self.alpha <= 0:
            raise HyperparameterError("FTRL alpha must be positive")
        if self.beta <= 0:
            raise HyperparameterError("FTRL beta must be positive")
        if self.l1 < 0 or self.l2 < 0:
            raise HyperparameterError("FTRL l1 and l2 must be nonnegative")

    def _init_state(self):
        self.z = np.zeros((self.n_arms, self.dim))
        self.n = np.zeros((self.n_arms, self.dim))

    def weights(self, arm: Optional[int] = None) -> np.ndarray:
        z = self.z if arm is None else self.z[arm]
        n = self.n if arm is None else self.n[arm]
        denom = (self.beta + np.sqrt(n)) / self.alpha + self.l2
        w = -(z - np.sign(z) * self.l1) / denom
        return np.where(np.abs(z) > self.l1, w, 0.0)

    def scores(self, context, t: int = 1) -> np.ndarray:
        return self.weights() @ self._check_context(context)

    def select(self, context=None, t=1):
        return _argmax(self.scores(context, t)), None

    def update(self, arm, context, reward):
        x = self._check_context(context)
        self._check_update(arm, reward)
        w = self.weights(arm)
        g = (w @ x - reward) * x
        n = self.n[arm]
        sigma = (np.sqrt(n + g * g) - np.sqrt(n)) / self.alpha
        self.z[arm] = self.z[arm] + g - sigma * w
        self.n[arm] = n + g * g

    def theta(self) -> np.ndarray:
        return self.weights()


class EpsilonFTRL(FTRL):
    """FTRL's greedy arm with probability 1 - eps, a uniform arm otherwise."""

    tag = "Linear ε-FTRL"
    defaults = {**FTRL.defaults, "eps": 0.1}

    def _validate(self):
        super()._validate()
        if not 0.0 <= self.eps <= 1.0:
            raise HyperparameterError("eps must be in [0, 1]")

    def select(self, context=None, t=1):
        greedy = _argmax(self.scores(context, t))
        probs = np.full(self.n_arms, self.eps / self.n_arms)
        probs[greedy] += 1.0 - self.eps
        # Both draws happen every round so the RNG stream does not depend on the branch.
        u = self.rng.random()
        j = int(self.rng.integers(self.n_arms))
        return (j if u < self.eps else greedy), probs


class LinearEXP3(Policy):
    """Softmax over linear logits mixed with uniform; importance-weighted linear update."""

    tag = "Linear EXP3"
    contextual = True
    linear = True
    defaults = {"gamma": 0.1, "eta": 0.1}
    _array_names = ("weights",)

    def _validate(self):
        if not 0.0 < self.gamma <= 1.0:
            raise HyperparameterError("gamma must be in (0, 1]")
        if self.eta <= 0:
            raise HyperparameterError("eta must be positive")

    def _init_state(self):
        self.weights = np.zeros((self.n_arms, self.dim))

    def probs(self, context) -> np.ndarray:
        logits = self.weights @ self._check_context(context)
        logits = logits - logits.max()
        e = np.exp(logits)
        return (1.0 - self.gamma) * e / e.sum() + self.gamma / self.n_arms

    def select(self, context=None, t=1):
        p = self.probs(context)
        return self._sample(p), p

    def update(self, arm, context, reward):
        x = self._check_context(context)
        self._check_update(arm, reward)
        p = self.probs(x)[arm]
        self.weights[arm] += self.eta * (reward / p) * x

    def theta(self) -> np.ndarray:
        return self.weights.copy()


class LinearFTPL(Policy):
    """Linear scores perturbed by Gumbel(0, 1/eta) noise; additive update theta += r x."""

    tag = "Linear FTPL"
    contextual = True
    linear = True
    defaults = {"eta": 1.0}
    _array_names = ("weights",)

    def _validate(self):
        if self.eta <= 0:
            raise HyperparameterError("eta must be positive")

    def _init_state(self):
        self.weights = np.zeros((self.n_arms, self.dim))

    def select(self, context=None, t=1):
        x = self._check_context(context)
        noise = _gumbel(self.rng, self.n_arms, 1.0 / self.eta)
        return _argmax(self.weights @ x + noise), None

    def update(self, arm, context, reward):
        x = self._check_context(context)
        self._check_update(arm, reward)
        self.weights[arm] += reward * x

    def theta(self) -> np.ndarray:
        return self.weights.copy()


class LinearThompson(Policy):
    """Gaussian posterior sampling with conjugate Bayesian linear regression per arm.

    Stored in information form: precision = Sigma^-1 and h = Sigma^-1 mu. The
    noise variance sigma2 is shared across arms.
    """

    tag = "Thompson Sampling (Contextual)"
    contextual = True
    linear = True
    defaults = {"prior_scale": 1.0, "sigma2": 1.0}
    _array_names = ("precision", "h")

    def _validate(self):
        if self.prior_scale <= 0 or self.sigma2 <= 0:
            raise HyperparameterError("prior_scale and sigma2 must be positive")

    def _init_state(self):
        self.precision = np.tile(np.eye(self.dim) / self.prior_scale, (self.n_arms, 1, 1))
        self.h = np.zeros((self.n_arms, self.dim))
        self._refresh()

    def _refresh(self, arm=None):
        if arm is None:
            self._cov = np.empty_like(self.precision)
            self._chol = np.empty_like(self.precision)
            self._mean = np.empty_like(self.h)
            arms = range(self.n_arms)
        else:
            arms = (arm,)
        for a in arms:
            cov = np.linalg.inv(self.precision[a])
            cov = 0.5 * (cov + cov.T)
            try:
                self._chol[a] = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise CovarianceNotPD(f"arm {a}: {exc}") from exc
            self._cov[a] = cov
            self._mean[a] = cov @ self.h[a]

    def posterior(self, arm: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and covariance, for one arm or stacked over all arms."""
        if arm is None:
            return self._mean.copy(), self._cov.copy()
        return self._mean[arm].copy(), self._cov[arm].copy()

    def select(self, context=None, t=1):
        x = self._check_context(context)
        z = self.rng.standard_normal((self.n_arms, self.dim))
        sampled = self._mean + np.einsum("kij,kj->ki", self._chol, z)
        return _argmax(sampled @ x), None

    def update(self, arm, context, reward):
        x = self._check_context(context)
        self._check_update(arm, reward)
        self.precision[arm] += np.outer(x, x) / self.sigma2
        self.h[arm] += x * reward / self.sigma2
        self._refresh(arm)

    def theta(self) -> np.ndarray:
        return self._mean.copy()


class StaticPolicy(Policy):
    """Always plays one fixed arm and ignores feedback (prompting and no-rewrite baselines)."""

    defaults = {"arm": 0.0}

    def __init__(self, n_arms: int, dim: Optional[int] = None, seed: int = 0, arm: int = 0, label: str = ""):
        super().__init__(n_arms, dim, seed, arm=arm)
        self.arm = int(arm)
        self.label = label or f"Static (arm {self.arm})"

    @property
    def tag(self):  # type: ignore[override]
        return self.label

    def _validate(self):
        a = self.hyperparameters["arm"]
        if a != int(a) or not 0 <= a < self.n_arms:
            raise HyperparameterError(f"static arm {a!r} out of range for {self.n_arms} arms")

    def select(self, context=None, t=1):
        return self.arm, None

    def update(self, arm, context, reward):
        self._check_update(arm, reward)

    def snapshot(self) -> PolicyState:
        st = super().snapshot()
        st.algorithm = "static"
        st.hyperparameters = {"arm": self.arm, "label": self.label}
        return st

    @classmethod
    def restore(cls, state: PolicyState) -> "StaticPolicy":
        hp = state.hyperparameters
        policy = cls(state.n_arms, state.dim, state.seed, arm=int(hp["arm"]), label=hp.get("label", ""))
        policy.rng.bit_generator.state = _rng_state_from_json(state.rng)
        return policy


# --- registry ---------------------------------------------------------------

ALGORITHMS: dict[str, type[Policy]] = {
    cls.tag: cls
    for cls in (
        LinearThompson,
        LinUCBKL,
        LinUCB,
        EpsilonFTRL,
        EXP3,
        LinearEXP3,
        BetaThompson,
        LinearFTPL,
        FTPL,
        FTRL,
    )
}

CONTEXTUAL_TABLE_ROWS = (
    LinearThompson.tag,
    LinUCBKL.tag,
    LinUCB.tag,
    EpsilonFTRL.tag,
    LinearEXP3.tag,
    LinearFTPL.tag,
)
NONCONTEXTUAL_TABLE_ROWS = (EXP3.tag, BetaThompson.tag, FTPL.tag)

_ALIASES = {
    "thompson": LinearThompson.tag,
    "thompson_contextual": LinearThompson.tag,
    "linear_thompson": LinearThompson.tag,
    "linucb": LinUCB.tag,
    "linucb_kl": LinUCBKL.tag,
    "kl": LinUCBKL.tag,
    "eps_ftrl": EpsilonFTRL.tag,
    "epsilon_ftrl": EpsilonFTRL.tag,
    "linear eps-ftrl": EpsilonFTRL.tag,
    "linear epsilon-ftrl": EpsilonFTRL.tag,
    "ftrl": FTRL.tag,
    "exp3": EXP3.tag,
    "linear_exp3": LinearEXP3.tag,
    "linearexp3": LinearEXP3.tag,
    "thompson_noncontextual": BetaThompson.tag,
    "beta_thompson": BetaThompson.tag,
    "linear_ftpl": LinearFTPL.tag,
    "linearftpl": LinearFTPL.tag,
    "ftpl": FTPL.tag,
}


def canonical_tag(tag: str) -> str:
    if tag in ALGORITHMS:
        return tag
    key = tag.strip().lower()
    for name in ALGORITHMS:
        if name.lower() == key:
            return name
    if key in _ALIASES:
        return _ALIASES[key]
    raise KeyError(f"unknown algorithm {tag!r}")


def resolve_algorithm(tag: str) -> type[Policy]:
    if tag == "static":
        return StaticPolicy
    return ALGORITHMS[canonical_tag(tag)]


def make_policy(tag: str, n_arms: int, dim: Optional[int], seed: int = 0, hyperparameters=None) -> Policy:
    cls = resolve_algorithm(tag)
    return cls(n_arms, dim, seed, **(hyperparameters or {}))


def restore_policy(state: PolicyState) -> Policy:
    if state.algorithm == "static":
        return StaticPolicy.restore(state)
    return Policy.restore(state)
