"""`vac` command line: solve, train, gen-traj, verify.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure or divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .config import ConfigError, build_mdp, parse_config
from .errors import InvalidInputError, VacError
from .harness import export_trajectory, oracle_summary, run_experiment
from .oracle import solve

log = logging.getLogger("vac")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _load(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seeds(args.seed)
    for w in cfg.warnings:
        log.warning(w)
    return cfg


def cmd_solve(args) -> int:
    cfg = _load(args)
    mdp = build_mdp(cfg)
    info = oracle_summary(mdp, cfg.params.lam)
    info["pi_star"] = solve(mdp).pi_star.tolist()
    if cfg.params.lam > 0:
        info["pi_star_lam"] = np.round(solve(mdp, cfg.params.lam).pi_star, 12).tolist()
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    res = run_experiment(cfg, out_dir=args.out, workers=args.workers)
    for r in res.results:
        msg = f"seed {r.seed}: {r.status}"
        if r.trace is not None and np.isfinite(r.trace.final_l1):
            msg += f", final L1 policy error {r.trace.final_l1:.4g}"
        if r.error:
            msg += f" ({r.error})"
        print(msg)
    print(f"wrote {res.out_dir}")
    return res.exit_code


def cmd_gen_traj(args) -> int:
    cfg = _load(args)
    seed = cfg.seeds[0]
    export_trajectory(cfg, seed, args.out)
    print(f"wrote {args.out} (T={cfg.T}, seed={seed})")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suite

    if args.suite != "all" and args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {['all', *SUITES]}", file=sys.stderr)
        return EXIT_INVALID
    checks = run_suite(args.suite, seed=(args.seed or [0])[0])
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vac", description="Variational actor-critic experiments on finite MDPs.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, nargs="+", help="override the config's seed list")

    p = sub.add_parser("solve", help="print the oracle solution for the configured MDP")
    common(p)
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("train", help="run the configured method for every seed")
    common(p)
    p.add_argument("--out", help="output directory (default: run.output from the config)")
    p.add_argument("--workers", type=int, help="worker processes (default: run.workers)")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("gen-traj", help="export a behavior-policy trajectory as CSV")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_traj)
    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("--suite", required=True, help="oracle, gradients, fixed-point, optimality, regularized, unbiased or all")
    common(p, config=False)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (VacError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
