"""Command-line entry point.

Exit status is 0 only when every bound monitor passed (or, for
``verify-chain`` and ``shapley-oracle``, when the check succeeded).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from .approx import perm_shapley
from .config import load_config
from .harness import (
    ExperimentConfig,
    count_evaluations,
    emit_report,
    run_experiment,
    run_fedavg,
    verify_ledger_file,
)
from .valuation import MAX_EXACT_PLAYERS, exact_shapley


def _experiment_args(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="TOML experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--attack", choices=["none", "fr", "pa"], help="override the attack")
    p.add_argument("--malicious-frac", type=float, help="override the malicious fraction")
    p.add_argument("--rounds", type=int, help="override the number of rounds")
    p.add_argument("--out", type=Path, help="directory for metrics.csv, shapley.csv, ledger.ndjson, manifest.json")


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.attack is not None:
        overrides["attack"] = args.attack
    if args.malicious_frac is not None:
        overrides["malicious_frac"] = args.malicious_frac
    if args.rounds is not None:
        overrides["rounds"] = args.rounds
    return replace(cfg, **overrides) if overrides else cfg


def _summary(report) -> str:
    last = report.rounds[-1]
    return (
        f"{report.pipeline}: rounds={len(report.rounds)} accuracy={last['accuracy']:.4f} "
        f"auprc={last['auprc']:.4f} ledger={len(report.ledger)}"
    )


def cmd_run(args) -> int:
    report = run_experiment(_resolve(args))
    print(_summary(report))
    ok = report.monitors_ok
    if args.out:
        paths = emit_report(report, args.out)
        problems = verify_ledger_file(paths["ledger"])
        if problems:
            print("ledger verification failed: " + problems[0])
            ok = False
    print("monitors: " + ("ok" if ok else "FAILED"))
    return 0 if ok else 1


def cmd_baseline(args) -> int:
    report = run_fedavg(_resolve(args))
    print(_summary(report))
    if args.out:
        emit_report(report, args.out)
    return 0


def _parse_game(path: Path, n: int) -> dict[frozenset, float]:
    """Game file: JSON object mapping comma-separated player indices ("" for the empty set) to values."""
    raw = json.loads(path.read_text())
    game = {}
    for key, value in raw.items():
        members = frozenset(int(k) for k in key.split(",") if k.strip() != "")
        if any(not 0 <= m < n for m in members):
            raise ValueError(f"player index out of range in {key!r}")
        game[members] = float(value)
    if len(game) != 2**n:
        raise ValueError(f"game file must define all {2**n} coalitions, found {len(game)}")
    return game


def cmd_shapley_oracle(args) -> int:
    n = args.players
    if n > MAX_EXACT_PLAYERS:
        print("use approximation")
        return 2
    game = _parse_game(args.game, n)
    players = list(range(n))
    exact = exact_shapley(lambda s: game[frozenset(s)], players)
    exhaustive = n <= 8
    approx = perm_shapley(players, lambda s: game[frozenset(s)], args.k_perm, args.seed, exhaustive=exhaustive)
    gap = max(abs(exact[p] - approx[p]) for p in players) if players else 0.0
    total = math.fsum(exact.values())
    eff = abs(total - (game[frozenset(players)] - game[frozenset()]))
    for p in players:
        print(f"player {p}: exact={exact[p]!r} approx={approx[p]!r}")
    print(f"efficiency gap {eff:.3e}; max exact/approx gap {gap:.3e} ({'all orderings' if exhaustive else f'{args.k_perm} permutations'})")
    ok = eff <= 1e-9 and (gap <= 1e-9 or not exhaustive)
    return 0 if ok else 1


def cmd_verify_chain(args) -> int:
    manifest = json.loads(args.manifest.read_text()) if args.manifest else None
    problems = verify_ledger_file(args.ledger, manifest)
    if problems:
        print("chain INVALID: " + problems[0])
        return 1
    n = sum(1 for _ in open(args.ledger))
    print(f"chain ok: {n} blocks")
    return 0


def cmd_bench_evals(args) -> int:
    report = run_experiment(_resolve(args))
    if args.out:
        emit_report(report, args.out)
    try:
        counters = count_evaluations(report)
    except AssertionError as exc:
        print(str(exc))
        return 1
    print("round,actual,grouped_bound,naive_bound,naive_over_actual")
    for r, c in zip(report.rounds, counters):
        print(f"{r['round']},{c.actual},{c.grouped_bound},{c.naive_bound},{c.ratio:.1f}")
    return 0 if report.monitors_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sichainfl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the Shapley-gated pipeline")
    _experiment_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("baseline", help="run the FedAvg baseline")
    _experiment_args(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("shapley-oracle", help="exact vs permutation Shapley on a tabulated game")
    p.add_argument("--players", type=int, required=True)
    p.add_argument("--game", type=Path, required=True)
    p.add_argument("--k-perm", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_shapley_oracle)

    p = sub.add_parser("verify-chain", help="re-check every hash and link of a ledger")
    p.add_argument("--ledger", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="manifest.json; enables signature-tag checks")
    p.set_defaults(func=cmd_verify_chain)

    p = sub.add_parser("bench-evals", help="report coalition-evaluation counters")
    _experiment_args(p, config_required=True)
    p.set_defaults(func=cmd_bench_evals)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
