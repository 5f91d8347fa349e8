"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("querybandits")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class InputError(Exception):
    """Bad paths or malformed inputs: reported with exit code 2."""


def _print_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=1, ensure_ascii=False) + "\n")


def _split_list(values):
    out = []
    for v in values or []:
        out.extend(x.strip() for x in v.split(",") if x.strip())
    return out


# --- run --------------------------------------------------------------------


def cmd_run(args) -> int:
    from .pipeline import ConfigError, ExperimentConfig, run_experiment

    try:
        config = ExperimentConfig.load(args.config)
        if args.seed is not None:
            config.seeds = [args.seed]
        if args.algorithm:
            config.algorithms = _split_list(args.algorithm)
        if args.arm_set:
            config.arm_set = args.arm_set
        if args.exhaustive:
            config.exhaustive = True
        if args.bootstrap_to is not None:
            config.bootstrap_to = args.bootstrap_to
        config.validate()
    except ConfigError as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out) if args.out else config.resolve(config.out)
    manifest = run_experiment(config, out=out, offline=args.offline, jobs=args.jobs)
    log.info("wrote %d artifacts to %s", len(manifest["artifacts"]), out)
    _print_json({"out": str(out), "config_hash": manifest["config_hash"], "complete": manifest["complete"]})
    return EXIT_OK


# --- report -----------------------------------------------------------------


def cmd_report(args) -> int:
    from .core import Trace, read_trace
    from .pipeline import metrics_row

    def load(p):
        p = Path(p)
        if not p.exists():
            raise InputError(f"trace not found: {p}")
        return Trace(read_trace(p), n_arms=args.n_arms, lambda_explore=args.lambda_explore)

    baseline = load(args.baseline) if args.baseline else None
    table = {}
    for p in args.traces:
        # AlignmentError propagates: a misaligned baseline is a runtime failure here
        table[Path(p).stem] = metrics_row(load(p), baseline, args.test_split, strict=True)
    _print_json(table)
    return EXIT_OK


# --- sweep ------------------------------------------------------------------


def _read_labels(path: Path) -> list[int]:
    text = path.read_text(encoding="utf-8").strip()
    if text.startswith("["):
        return [int(v) for v in json.loads(text)]
    return [int(line) for line in text.splitlines() if line.strip()]


def cmd_sweep(args) -> int:
    from .reward import RewardBreakdown, best_weights, sweep_simplex, write_simplex_csv

    bpath, lpath = Path(args.breakdowns), Path(args.labels)
    for p in (bpath, lpath):
        if not p.exists():
            raise InputError(f"file not found: {p}")
    breakdowns = [RewardBreakdown.from_json(json.loads(line))
                  for line in bpath.read_text(encoding="utf-8").splitlines() if line.strip()]
    labels = _read_labels(lpath)
    if len(breakdowns) != len(labels):
        raise InputError(f"{len(breakdowns)} breakdowns but {len(labels)} labels")
    points = sweep_simplex(breakdowns, labels, step=args.step)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_simplex_csv(points, out)
    best = best_weights(points)
    _print_json({"out": str(out), "points": len(points),
                 "best": {"weights": list(best.weights.as_tuple()), "auc": best.auc} if best else None})
    return EXIT_OK


# --- figures ----------------------------------------------------------------


def cmd_figures(args) -> int:
    from .analysis import build_figures

    results = Path(args.results)
    if not (results / "snapshots").is_dir():
        raise InputError(f"not a results directory (no snapshots/): {results}")
    written = build_figures(results, args.out)
    _print_json({"out": str(Path(args.out or results / "figures")), "matrices": len(written)})
    return EXIT_OK


# --- features ---------------------------------------------------------------


def cmd_features(args) -> int:
    from .extraction import EmptyQuery, RuleBasedExtractor

    try:
        flags = RuleBasedExtractor(excessive_cutoff=args.excessive_cutoff).flags(args.query)
    except EmptyQuery as exc:
        raise InputError(str(exc)) from exc
    _print_json(flags)
    return EXIT_OK


# --- filter -----------------------------------------------------------------


def cmd_filter(args) -> int:
    from .core import QueryRecord, write_jsonl
    from .env import ParseError, filter_queries, load_dataset, table_predicates

    try:
        records = load_dataset(args.dataset)
    except FileNotFoundError:
        raise InputError(f"dataset not found: {args.dataset}") from None
    except ParseError as exc:
        raise InputError(f"{args.dataset}: {exc}") from exc
    cpath = Path(args.correctness)
    if not cpath.exists():
        raise InputError(f"correctness table not found: {cpath}")
    table = json.loads(cpath.read_text(encoding="utf-8"))
    table = table.get("table", table)
    missing = [r.id for r in records if r.id not in table]
    if missing:
        raise InputError(f"correctness table lacks records: {missing[:5]}")
    original, perturbed = table_predicates(table)
    kept = filter_queries(records, original, perturbed, seed=args.seed)
    out_records = [
        QueryRecord(f.record.id, f.record.dataset, f.query, f.record.reference_answer, (),
                    f.record.scenario, f.record.choices)
        for f in kept
    ]
    if args.out:
        write_jsonl(args.out, out_records)
    _print_json({"kept": [f.record.id for f in kept],
                 "perturbation_index": {f.record.id: f.perturbation_index for f in kept},
                 "total": len(records)})
    return EXIT_OK


# --- validate ---------------------------------------------------------------


def cmd_validate(args) -> int:
    from .env import ParseError, load_dataset
    from .pipeline import ConfigError, ExperimentConfig

    problems = []
    for p in args.paths:
        path = Path(p)
        if not path.exists():
            problems.append(f"{path}: not found")
            continue
        try:
            if path.suffix == ".jsonl":
                n = len(load_dataset(path))
                log.info("%s: %d records ok", path, n)
            else:
                ExperimentConfig.load(path)
                log.info("%s: config ok", path)
        except (ConfigError, ParseError, ValueError) as exc:
            problems.append(f"{path}: {exc}")
    for msg in problems:
        sys.stderr.write(msg + "\n")
    _print_json({"checked": len(args.paths), "problems": problems})
    return EXIT_CONFIG if problems else EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .core import ARM_SET_CHOICES

    p = argparse.ArgumentParser(prog="querybandits", description="Bandit-driven query rewriting experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run experiments from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="run this single seed instead of the config's seeds")
    r.add_argument("--out", help="output directory (default: the config's 'out')")
    r.add_argument("--jobs", type=int, default=1, help="parallel experiments")
    r.add_argument("--offline", action="store_true", help="fail on any attempted network access")
    r.add_argument("--exhaustive", action="store_true", help="evaluate every arm to get oracle rewards")
    r.add_argument("--bootstrap-to", type=int, help="bootstrap each dataset file up to N records")
    r.add_argument("--algorithm", action="append", help="override the config's algorithms (repeatable, or comma list)")
    r.add_argument("--arm-set", choices=ARM_SET_CHOICES)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="reward-weight simplex sweep scored by ROC-AUC")
    s.add_argument("--breakdowns", required=True, help="JSONL of {s_llm, s_fuzz, s_bleu}")
    s.add_argument("--labels", required=True, help="JSON list or one 0/1 label per line")
    s.add_argument("--step", type=float, default=0.1)
    s.add_argument("--out", default="simplex.csv")
    s.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="adjusted reward, regret and win rate for traces")
    rep.add_argument("traces", nargs="+")
    rep.add_argument("--baseline", help="baseline trace for win rates")
    rep.add_argument("--test-split", type=int, default=100)
    rep.add_argument("--n-arms", type=int, default=5)
    rep.add_argument("--lambda-explore", type=float, default=0.1)
    rep.set_defaults(func=cmd_report)

    f = sub.add_parser("figures", help="write every analysis matrix for a results directory")
    f.add_argument("results")
    f.add_argument("--out")
    f.set_defaults(func=cmd_figures)

    fe = sub.add_parser("features", help="print the rule-based features of a query")
    fe.add_argument("query")
    fe.add_argument("--excessive-cutoff", type=int, default=40)
    fe.set_defaults(func=cmd_features)

    fl = sub.add_parser("filter", help="keep records with a correct original and 1-3 wrong perturbations")
    fl.add_argument("--dataset", required=True)
    fl.add_argument("--correctness", required=True)
    fl.add_argument("--seed", type=int, default=0)
    fl.add_argument("--out")
    fl.set_defaults(func=cmd_filter)

    v = sub.add_parser("validate", help="lint configs (.json) and datasets (.jsonl)")
    v.add_argument("paths", nargs="+")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit 1
        log.debug("failure", exc_info=True)
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
