"""YAML experiment configuration.

Schema (defaults in brackets)::

    mdp:
      kind: ring | torus | random | file
      # ring:   n, sigma [0.0], gamma [0.95]
      # torus:  n1, n2, sigma [0.0], gamma [0.95]
      # random: n_states, n_actions, gamma [0.9], seed [0]
      # file:   path (relative to the config file)
    algorithm:
      method: model_based | model_free | v_formulation | npg   [model_based]
      variant: vanilla | clipping | flipping                   [flipping]
      beta [10.0], lam [0.0]
      eta_v, eta_pi, eta_q                                     [1 / (4 beta)]
      M [1000]            batch size, model-free methods only
      T [1000000]         trajectory length, model-free methods only
      max_iters [10000]   model-based iterations
      tol [1e-10]         model-based stopping tolerance (0 disables)
      greedy_window [0]   model-based greedy-stability stop (0 disables)
      next_state_mode     exact | bff | bff_literal | resample
                          [bff; bff_literal for v_formulation]
      eps [2e-4]          NPG inner-loop tolerance
      init_noise [0.1]    model-based logits start at U[-init_noise, init_noise]
    run:
      seeds [[0]], output [runs], stride [10], workers [1]
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .errors import InvalidInputError
from .mdp import VARIANTS, FiniteMdp, HyperParams

METHODS = ("model_based", "model_free", "v_formulation", "npg")
MODEL_FREE = ("model_free", "v_formulation", "npg")
NEXT_STATE_MODES = ("exact", "bff", "bff_literal", "resample")

MDP_KEYS = {
    "ring": {"n": None, "sigma": 0.0, "gamma": 0.95},
    "torus": {"n1": None, "n2": None, "sigma": 0.0, "gamma": 0.95},
    "random": {"n_states": None, "n_actions": None, "gamma": 0.9, "seed": 0},
    "file": {"path": None},
}
ALGORITHM_KEYS = {
    "method": "model_based", "variant": "flipping", "beta": 10.0, "lam": 0.0,
    "eta_v": None, "eta_pi": None, "eta_q": None, "M": 1000, "T": 1_000_000,
    "max_iters": 10_000, "tol": 1e-10, "greedy_window": 0, "next_state_mode": None,
    "eps": 2e-4, "init_noise": 0.1,
}
RUN_KEYS = {"seeds": [0], "output": "runs", "stride": 10, "workers": 1}


class ConfigError(InvalidInputError):
    """Every problem found in a config, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    mdp: dict
    method: str
    params: HyperParams
    T: int
    max_iters: int
    tol: float
    greedy_window: int
    next_state_mode: str
    eps: float
    init_noise: float
    seeds: tuple
    output: str
    stride: int
    workers: int = 1
    base_dir: str = "."
    warnings: tuple = field(default=(), compare=False)

    def as_dict(self) -> dict:
        """Normalized, defaults-filled form (what the config hash covers)."""
        p = self.params
        return {
            "mdp": dict(self.mdp),
            "algorithm": {
                "method": self.method, "variant": p.variant, "beta": p.beta, "lam": p.lam,
                "eta_v": p.eta_v, "eta_pi": p.eta_pi, "eta_q": p.eta_q, "M": p.batch_size, "T": self.T,
                "max_iters": self.max_iters, "tol": self.tol, "greedy_window": self.greedy_window,
                "next_state_mode": self.next_state_mode, "eps": self.eps, "init_noise": self.init_noise,
            },
            "run": {"seeds": list(self.seeds), "output": self.output, "stride": self.stride},
        }

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))


def _section(raw, name, errors):
    sec = raw.get(name, {})
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        errors.append(f"{name}: expected a mapping, got {type(sec).__name__}")
        return {}
    return sec


def _unknown(sec, allowed, where, errors):
    for key in sec:
        if key not in allowed:
            errors.append(f"{where}.{key}: unknown key")


def _number(value, where, errors, *, kind=float, lo=None, hi=None, lo_open=False, hi_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{where}: expected a number, got {value!r}")
        return None
    if kind is int and float(value) != int(value):
        errors.append(f"{where}: expected an integer, got {value!r}")
        return None
    v = kind(value)
    if lo is not None and (v <= lo if lo_open else v < lo):
        errors.append(f"{where}: must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and (v >= hi if hi_open else v > hi):
        errors.append(f"{where}: must be {'<' if hi_open else '<='} {hi}, got {v}")
    return v


def _mdp_block(sec, base_dir, errors):
    kind = sec.get("kind")
    if kind not in MDP_KEYS:
        errors.append(f"mdp.kind: must be one of {sorted(MDP_KEYS)}, got {kind!r}")
        return {"kind": kind}
    allowed = MDP_KEYS[kind]
    _unknown({k: v for k, v in sec.items() if k != "kind"}, allowed, "mdp", errors)
    out = {"kind": kind}
    for key, default in allowed.items():
        value = sec.get(key, default)
        where = f"mdp.{key}"
        if value is None:
            errors.append(f"{where}: required for kind {kind}")
            continue
        if key == "path":
            path = Path(base_dir) / str(value)
            if not path.is_file():
                errors.append(f"{where}: file not found: {path}")
            out[key] = str(value)
        elif key == "gamma":
            out[key] = _number(value, where, errors, lo=0, hi=1, lo_open=True, hi_open=True)
        elif key == "sigma":
            out[key] = _number(value, where, errors, lo=0)
        elif key == "seed":
            out[key] = _number(value, where, errors, kind=int, lo=0)
        elif key in ("n_actions", "n", "n1", "n2"):
            out[key] = _number(value, where, errors, kind=int, lo=2)
        else:
            out[key] = _number(value, where, errors, kind=int, lo=1)
    return out


def validate(raw, base_dir=".") -> ExperimentConfig:
    """Check a parsed config mapping; raise ConfigError listing every problem."""
    errors, warnings = [], []
    if not isinstance(raw, dict):
        raise ConfigError([f"top level: expected a mapping, got {type(raw).__name__}"])
    _unknown(raw, ("mdp", "algorithm", "run"), "config", errors)
    if "mdp" not in raw:
        errors.append("mdp: section is required")
    mdp = _mdp_block(_section(raw, "mdp", errors), base_dir, errors)

    alg = _section(raw, "algorithm", errors)
    _unknown(alg, ALGORITHM_KEYS, "algorithm", errors)
    a = {**ALGORITHM_KEYS, **alg}
    method = a["method"]
    if method not in METHODS:
        errors.append(f"algorithm.method: must be one of {list(METHODS)}, got {method!r}")
    if a["variant"] not in VARIANTS:
        errors.append(f"algorithm.variant: must be one of {list(VARIANTS)}, got {a['variant']!r}")
    beta = _number(a["beta"], "algorithm.beta", errors, lo=0, lo_open=True)
    lam = _number(a["lam"], "algorithm.lam", errors, lo=0)
    default_eta = 1.0 / (4 * beta) if beta and beta > 0 else None
    etas = {}
    for key in ("eta_v", "eta_pi", "eta_q"):
        value = a[key] if a[key] is not None else default_eta
        etas[key] = None if value is None else _number(value, f"algorithm.{key}", errors, lo=0, lo_open=True)
    M = _number(a["M"], "algorithm.M", errors, kind=int, lo=1)
    T = _number(a["T"], "algorithm.T", errors, kind=int, lo=2)
    max_iters = _number(a["max_iters"], "algorithm.max_iters", errors, kind=int, lo=1)
    tol = _number(a["tol"], "algorithm.tol", errors, lo=0)
    window = _number(a["greedy_window"], "algorithm.greedy_window", errors, kind=int, lo=0)
    eps = _number(a["eps"], "algorithm.eps", errors, lo=0, lo_open=True)
    noise = _number(a["init_noise"], "algorithm.init_noise", errors, lo=0)
    mode = a["next_state_mode"]
    if mode is None:
        mode = "bff_literal" if method == "v_formulation" else "bff"
    if mode not in NEXT_STATE_MODES:
        errors.append(f"algorithm.next_state_mode: must be one of {list(NEXT_STATE_MODES)}, got {mode!r}")
    elif method == "v_formulation" and mode != "bff_literal":
        errors.append("algorithm.next_state_mode: v_formulation supports bff_literal only")
    if method == "model_based" and "M" in alg:
        warnings.append("algorithm.M: M ignored for model-based runs")
    if method == "model_based" and "T" in alg:
        warnings.append("algorithm.T: T ignored for model-based runs")
    if method in MODEL_FREE and M is not None and T is not None and T <= M:
        errors.append(f"algorithm.T: must exceed M={M} to fit one batch, got {T}")
    if mode in ("bff", "bff_literal") and method in MODEL_FREE and mdp.get("kind") == "random":
        warnings.append("algorithm.next_state_mode: random MDPs have no geometry; BFF uses state differences mod n")

    run = _section(raw, "run", errors)
    _unknown(run, RUN_KEYS, "run", errors)
    r = {**RUN_KEYS, **run}
    seeds = r["seeds"]
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds:
        errors.append(f"run.seeds: expected a non-empty list of integers, got {seeds!r}")
        seeds = []
    else:
        seeds = [_number(s, "run.seeds", errors, kind=int, lo=0) for s in seeds]
        if len(set(seeds)) != len(seeds):
            errors.append("run.seeds: duplicate seeds")
    stride = _number(r["stride"], "run.stride", errors, kind=int, lo=1)
    workers = _number(r["workers"], "run.workers", errors, kind=int, lo=1)
    if not isinstance(r["output"], str) or not r["output"]:
        errors.append(f"run.output: expected a path string, got {r['output']!r}")

    params = None
    if not errors:
        try:
            params = HyperParams(beta=beta, lam=lam, batch_size=M, variant=a["variant"], **etas)
        except InvalidInputError as exc:
            errors.append(str(exc))
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        mdp=mdp, method=method, params=params, T=T, max_iters=max_iters, tol=tol, greedy_window=window,
        next_state_mode=mode, eps=eps, init_noise=noise, seeds=tuple(seeds), output=r["output"],
        stride=stride, workers=workers, base_dir=str(base_dir), warnings=tuple(warnings),
    )


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML syntax error: {exc}"]) from exc
    return validate(raw or {}, base_dir=path.parent)


def build_mdp(config: ExperimentConfig) -> FiniteMdp:
    from .instances import RingSpec, TorusSpec, random_mdp, ring_mdp, torus_mdp
    from .io import load_mdp

    m = config.mdp
    if m["kind"] == "ring":
        return ring_mdp(RingSpec(m["n"], m["sigma"], m["gamma"]))
    if m["kind"] == "torus":
        return torus_mdp(TorusSpec(m["n1"], m["n2"], m["sigma"], m["gamma"]))
    if m["kind"] == "random":
        return random_mdp(m["n_states"], m["n_actions"], m["gamma"], m["seed"])
    return load_mdp(Path(config.base_dir) / m["path"])
