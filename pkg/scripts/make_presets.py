"""Regenerate the shipped environment presets in src/querybandits/presets/."""
import json
from pathlib import Path

from querybandits.core import ARM_NAMES, FEATURE_NAMES, N_FEATURES

OUT = Path(__file__).resolve().parents[1] / "src" / "querybandits" / "presets"
K = len(ARM_NAMES)
F = {name: i for i, name in enumerate(FEATURE_NAMES)}


def row(bias=None, **effects):
    """One theta* row; a trailing bias weight is appended only when given."""
    r = [0.0] * N_FEATURES
    for name, v in effects.items():
        r[F[name]] = v
    return r if bias is None else r + [bias]


def uniform():
    return {
        "name": "uniform",
        "theta_star": [row(0.5) for _ in range(K)],
        "noise_mode": "Bernoulli",
        "contexts": {"probs": [0.5] * N_FEATURES},
    }


def single_best_arm():
    return {
        "name": "single-best-arm",
        "theta_star": [row(0.7 if k == 1 else 0.3) for k in range(K)],
        "noise_mode": "Bernoulli",
        "contexts": {"probs": [0.5] * N_FEATURES},
    }


# Each arm has one signature feature that marks its own context cluster.
SIGNATURES = {
    "Paraphrase": "answerability",
    "Simplify": "pragmatics",
    "Disambiguate": "subordination",
    "Expand": "constraints",
    "ClarifyTerms": "rarity",
}


BACKGROUND = 0.1


def contextual_advantage():
    # No bias coordinate: theta*_a[s_k] = 0.95 on its own signature, 0.05 on
    # the others. Background features are sparse and carry no reward signal.
    sig_idx = [F[SIGNATURES[a]] for a in ARM_NAMES]
    theta = []
    for arm in ARM_NAMES:
        theta.append(row(**{SIGNATURES[other]: 0.95 if other == arm else 0.05 for other in ARM_NAMES}))
    components = []
    for arm, s in zip(ARM_NAMES, sig_idx):
        probs = [BACKGROUND] * N_FEATURES
        for j in sig_idx:
            probs[j] = 0.0
        probs[s] = 1.0
        components.append({"name": f"{SIGNATURES[arm]}-cluster", "weight": 1.0 / K, "probs": probs})
    # 0.2 * 5 in floating point is exactly 1.0
    return {
        "name": "contextual-advantage",
        "theta_star": theta,
        "noise_mode": "Bernoulli",
        "contexts": {"probs": [BACKGROUND] * N_FEATURES, "components": components},
    }


def sparse_recovery():
    theta = [
        row(0.45, answerability=0.35, ambiguity=-0.35, grounding=0.31),
        row(0.45, pragmatics=0.35, superlative=-0.32, anaphora=-0.2),
        row(0.45, subordination=0.33, polysemy=-0.34),
        row(0.45, constraints=0.36, ambiguity=-0.33),
        row(0.45, rarity=0.34, subordination=-0.31),
    ]
    return {
        "name": "sparse-recovery",
        "theta_star": theta,
        "noise_mode": "Bernoulli",
        "contexts": {"probs": [0.5] * N_FEATURES},
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for spec in (uniform(), single_best_arm(), contextual_advantage(), sparse_recovery()):
        path = OUT / f"{spec['name']}.json"
        path.write_text(json.dumps(spec, indent=1) + "\n", encoding="utf-8")
        print("wrote", path)


if __name__ == "__main__":
    main()
