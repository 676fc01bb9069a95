"""Seeded multi-run driver writing per-seed traces, an aggregate and run metadata."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, build_mdp
from .errors import DivergenceError, EstimationError, GenerationError, NumericalError
from .mdp import FiniteMdp
from .model_based import StopRule, run_model_based
from .model_free import generate_trajectory, run_model_free, run_v_formulation
from .npg import run_npg
from .oracle import action_gap, beta_threshold, solve, value_iteration
from .trace import COLUMNS, RunTrace

TRACE_HEADER = ("run_id", "seed") + COLUMNS
METRICS = COLUMNS[1:6]
PERCENTILES = (10, 50, 90)
INT_COLUMNS = {"iter", "negative_residual_flag", "samples_consumed"}


@dataclass
class SeedResult:
    seed: int
    trace: RunTrace | None
    status: str
    error: str = ""


@dataclass
class ExperimentResult:
    out_dir: Path
    results: list
    exit_code: int

    @property
    def failed(self):
        return [r.seed for r in self.results if r.error]


def uniform_behavior(mdp: FiniteMdp) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def run_seed(config: ExperimentConfig, seed: int, mdp: FiniteMdp | None = None) -> SeedResult:
    """One training run; divergence is caught and reported with the partial trace."""
    mdp = build_mdp(config) if mdp is None else mdp
    p = config.params
    try:
        if config.method == "model_based":
            rng = np.random.default_rng(seed)
            th0 = rng.uniform(-config.init_noise, config.init_noise, (mdp.n_states, mdp.n_actions))
            stop = StopRule(tol=config.tol, greedy_window=config.greedy_window)
            trace = run_model_based(mdp, p, init=(np.zeros(mdp.n_states), th0), max_iters=config.max_iters,
                                    stop=stop, stride=config.stride)
        elif config.method == "model_free":
            trace = run_model_free(mdp, uniform_behavior(mdp), p, T=config.T, seed=seed,
                                   next_state_mode=config.next_state_mode, stride=config.stride)
        elif config.method == "v_formulation":
            trace = run_v_formulation(mdp, uniform_behavior(mdp), p, T=config.T, seed=seed,
                                      next_state_mode=config.next_state_mode, stride=config.stride)
        else:
            trace = run_npg(mdp, uniform_behavior(mdp), p, T=config.T, seed=seed, eps=config.eps,
                            next_state_mode=config.next_state_mode, stride=config.stride)
    except DivergenceError as exc:
        return SeedResult(seed, exc.trace, "diverged", str(exc))
    except (NumericalError, EstimationError) as exc:
        return SeedResult(seed, None, "failed", str(exc))
    return SeedResult(seed, trace, trace.status)


def _fmt(name, value) -> str:
    if name in INT_COLUMNS:
        return str(int(value))
    return repr(float(value))


def run_id(config: ExperimentConfig, seed: int) -> str:
    return f"{config.digest()[:8]}-s{seed}"


def write_trace(path, rid: str, seed: int, trace: RunTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in trace.rows:
            w.writerow([rid, seed] + [_fmt(c, x) for c, x in zip(COLUMNS, row)])


def aggregate_rows(traces) -> tuple[list, np.ndarray]:
    """Per-iteration mean and percentile bands over the traces that recorded that iteration."""
    header = ["iter", "n_seeds"]
    for m in METRICS:
        header += [f"{m}_mean"] + [f"{m}_p{q}" for q in PERCENTILES]
    traces = [t for t in traces if t is not None and len(t)]
    if not traces:
        return header, np.empty((0, len(header)))
    iters = np.unique(np.concatenate([t.iters for t in traces]))
    cols = [COLUMNS.index(m) for m in METRICS]
    out = []
    for it in iters:
        block = np.array([t.rows[t.iters == it][0, cols] for t in traces if np.any(t.iters == it)])
        line = [it, len(block)]
        for j in range(len(METRICS)):
            x = block[:, j]
            line += [x.mean()] + list(np.percentile(x, PERCENTILES))
        out.append(line)
    return header, np.array(out, dtype=float)


def write_aggregate(path, traces) -> None:
    header, table = aggregate_rows(traces)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for line in table:
            w.writerow([str(int(line[0])), str(int(line[1]))] + [repr(float(x)) for x in line[2:]])


def oracle_summary(mdp: FiniteMdp, lam: float) -> dict:
    sol = value_iteration(mdp)
    info = {
        "mdp_digest": mdp.digest(),
        "oracle_hash": sol.digest(),
        "v_star": [float(x) for x in sol.v_star],
        "greedy_actions": [int(a) for a in sol.greedy_actions],
        "gamma": float(mdp.gamma),
    }
    if mdp.n_actions >= 2:
        gap = action_gap(mdp, sol.v_star)
        info["action_gap"] = float(gap)
        if gap > 0:
            alpha = gap / 4
            info["alpha"] = float(alpha)
            info["beta0"] = float(beta_threshold(mdp, alpha, gap=gap))
    if lam > 0:
        reg = solve(mdp, lam)
        info["regularized_oracle_hash"] = reg.digest()
        info["v_star_lam"] = [float(x) for x in reg.v_star]
    return info


def run_experiment(config: ExperimentConfig, out_dir=None, workers: int | None = None) -> ExperimentResult:
    """Run every seed, then write traces, aggregate.csv and metadata.json from one place.

    Results are gathered in seed order, so outputs do not depend on the
    number of workers.
    """
    out = Path(config.output if out_dir is None else out_dir)
    if not out.is_absolute() and out_dir is None:
        out = Path(config.base_dir) / out
    out.mkdir(parents=True, exist_ok=True)
    try:
        mdp = build_mdp(config)
    except GenerationError as exc:
        return _fail(out, config, str(exc))
    workers = config.workers if workers is None else int(workers)
    seeds = list(config.seeds)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            results = list(pool.map(run_seed, [config] * len(seeds), seeds, [mdp] * len(seeds)))
    else:
        results = [run_seed(config, s, mdp) for s in seeds]

    for res in results:
        if res.trace is not None:
            write_trace(out / f"trace_seed{res.seed}.csv", run_id(config, res.seed), res.seed, res.trace)
    write_aggregate(out / "aggregate.csv", [r.trace for r in results])
    exit_code = 0 if all(not r.error for r in results) else 2
    meta = {
        "package_version": __version__,
        "config_hash": config.digest(),
        "config": config.as_dict(),
        "seeds": seeds,
        "oracle": oracle_summary(mdp, config.params.lam),
        "runs": [
            {
                "run_id": run_id(config, r.seed),
                "seed": r.seed,
                "status": r.status,
                "iterations": None if r.trace is None else int(r.trace.n_iters),
                "final_l1_policy_error": None if r.trace is None or not np.isfinite(r.trace.final_l1)
                else float(r.trace.final_l1),
                "error": r.error,
            }
            for r in results
        ],
        "warnings": list(config.warnings),
        "exit_code": exit_code,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(out, results, exit_code)


def _fail(out, config, message):
    meta = {"config_hash": config.digest(), "config": config.as_dict(), "error": message, "exit_code": 2}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(out, [], 2)


def export_trajectory(config: ExperimentConfig, seed: int, path) -> None:
    from .io import save_trajectory

    mdp = build_mdp(config)
    save_trajectory(generate_trajectory(mdp, uniform_behavior(mdp), config.T, seed), path)
