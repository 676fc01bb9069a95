"""Finite discounted MDPs, soft-max policies and the Bellman algebra."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .errors import InvalidInputError, NumericalError

VARIANTS = ("vanilla", "clipping", "flipping")
ROW_TOL = 1e-12


def _frozen(x, dtype=float):
    a = np.array(x, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Geometry:
    """Index geometry of a lattice MDP.

    States are the row-major flattening of a periodic grid of `shape`;
    action `a` nominally moves by `moves[a]`. Model-free surrogates use it
    to do displacement arithmetic with wrap-around.
    """

    shape: tuple
    moves: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "moves", _frozen(self.moves, np.int64).reshape(-1, len(self.shape)))

    def coords(self, s):
        return np.stack(np.unravel_index(np.asarray(s), self.shape), axis=-1)

    def index(self, c):
        c = np.asarray(c) % np.array(self.shape)
        return np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), self.shape)


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """P[a, s, t] = P^a_{st}, rewards[s, a] = r_{sa}, discount gamma."""

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    geometry: Geometry | None = field(default=None)

    def __post_init__(self):
        P = _frozen(self.transitions)
        r = _frozen(self.rewards)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise InvalidInputError(f"transitions must have shape (A, S, S), got {P.shape}")
        A, S, _ = P.shape
        if S < 1 or A < 1:
            raise InvalidInputError("need at least one state and one action")
        if r.shape != (S, A):
            raise InvalidInputError(f"rewards must have shape ({S}, {A}), got {r.shape}")
        if not np.all(np.isfinite(P)) or P.min() < 0 or P.max() > 1:
            raise InvalidInputError("transition entries must lie in [0, 1]")
        dev = np.abs(P.sum(axis=2) - 1).max()
        if dev > ROW_TOL:
            raise InvalidInputError(f"transition rows must sum to 1 (max deviation {dev:.3e})")
        if not np.all(np.isfinite(r)):
            raise InvalidInputError("rewards must be finite")
        g = float(self.gamma)
        if not 0 < g < 1:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {g}")
        if self.geometry is not None and (
            int(np.prod(self.geometry.shape)) != S or self.geometry.moves.shape[0] != A
        ):
            raise InvalidInputError("geometry does not match the MDP dimensions")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "gamma", g)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]

    def digest(self) -> str:
        """Content hash, stable across processes."""
        h = hashlib.sha256()
        h.update(np.array([self.n_states, self.n_actions], dtype="<i8").tobytes())
        h.update(np.array([self.gamma], dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.transitions, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.rewards, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class HyperParams:
    beta: float = 10.0
    lam: float = 0.0
    eta_v: float = 0.025
    eta_pi: float = 0.025
    eta_q: float = 0.025
    batch_size: int = 1000
    variant: str = "flipping"

    def __post_init__(self):
        errs = []
        if not self.beta > 0:
            errs.append(f"beta must be > 0, got {self.beta}")
        if not self.lam >= 0:
            errs.append(f"lam must be >= 0, got {self.lam}")
        for name in ("eta_v", "eta_pi", "eta_q"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be > 0, got {getattr(self, name)}")
        if int(self.batch_size) < 1:
            errs.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.variant not in VARIANTS:
            errs.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if errs:
            raise InvalidInputError("; ".join(errs))

    @property
    def variant_index(self) -> int:
        return VARIANTS.index(self.variant)


def variant_index(variant) -> int:
    if isinstance(variant, (int, np.integer)) and 0 <= variant < 3:
        return int(variant)
    if variant in VARIANTS:
        return VARIANTS.index(variant)
    raise InvalidInputError(f"unknown variant {variant!r}")


def uniform_rho(n_states: int) -> np.ndarray:
    return np.full(n_states, 1.0 / n_states)


def check_rho(rho, n_states: int) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (n_states,):
        raise InvalidInputError(f"rho must have shape ({n_states},), got {rho.shape}")
    if not np.all(rho > 0) or abs(rho.sum() - 1) > ROW_TOL:
        raise InvalidInputError("rho must be strictly positive and sum to 1")
    return rho


def _check_policy(mdp: FiniteMdp, policy) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError(
            f"policy must have shape ({mdp.n_states}, {mdp.n_actions}), got {pi.shape}"
        )
    return pi


def _check_values(mdp: FiniteMdp, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise InvalidInputError(f"values must have shape ({mdp.n_states},), got {v.shape}")
    return v


def shift_logits(logits) -> np.ndarray:
    """Subtract the row maximum so every row peaks at exactly 0."""
    th = np.asarray(logits, dtype=float)
    return th - th.max(axis=1, keepdims=True)


def log_policy(logits) -> np.ndarray:
    th = np.asarray(logits, dtype=float)
    if th.ndim != 2:
        raise InvalidInputError(f"logits must be a 2-d table, got shape {th.shape}")
    if not np.all(np.isfinite(th)):
        raise InvalidInputError("logits must be finite")
    z = th - th.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def policy_from_logits(logits) -> np.ndarray:
    """Row-wise soft-max, overflow-free for arbitrarily large logits."""
    th = np.asarray(logits, dtype=float)
    if th.ndim != 2:
        raise InvalidInputError(f"logits must be a 2-d table, got shape {th.shape}")
    if not np.all(np.isfinite(th)):
        raise InvalidInputError("logits must be finite")
    e = np.exp(shift_logits(th))
    return e / e.sum(axis=1, keepdims=True)


def transition_under_policy(mdp: FiniteMdp, policy) -> np.ndarray:
    pi = _check_policy(mdp, policy)
    return np.einsum("sa,ast->st", pi, mdp.transitions)


def reward_under_policy(mdp: FiniteMdp, policy) -> np.ndarray:
    pi = _check_policy(mdp, policy)
    return (pi * mdp.rewards).sum(axis=1)


def neg_entropy(policy) -> np.ndarray:
    """H(pi_s) = sum_a pi log pi, with 0 log 0 = 0. Non-positive."""
    pi = np.asarray(policy, dtype=float)
    return xlogy(pi, pi).sum(axis=1)


def _solve(M, b):
    try:
        x = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular Bellman system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError("Bellman solve produced non-finite values")
    return x


def policy_value(mdp: FiniteMdp, policy, lam: float = 0.0) -> np.ndarray:
    """V^pi_lam = (I - gamma P^pi)^{-1} (r^pi - lam H(pi))."""
    if lam < 0:
        raise InvalidInputError(f"lam must be >= 0, got {lam}")
    pi = _check_policy(mdp, policy)
    Ppi = transition_under_policy(mdp, pi)
    c = reward_under_policy(mdp, pi) - lam * neg_entropy(pi)
    return _solve(np.eye(mdp.n_states) - mdp.gamma * Ppi, c)


def bellman_residual(mdp: FiniteMdp, v, policy, lam: float = 0.0) -> np.ndarray:
    """ell(V, pi) = (I - gamma P^pi) V - r^pi + lam H(pi)."""
    v = _check_values(mdp, v)
    pi = _check_policy(mdp, policy)
    Ppi = transition_under_policy(mdp, pi)
    return v - mdp.gamma * Ppi @ v - reward_under_policy(mdp, pi) + lam * neg_entropy(pi)


def objective(mdp: FiniteMdp, v, policy, rho, params: HyperParams, *, beta=None) -> float:
    """E(V, pi) = -rho.V + beta/2 * sum_s rho_s ell_s^2.

    `beta` overrides params.beta; unlike HyperParams it may be 0.
    """
    rho = check_rho(rho, mdp.n_states)
    b = params.beta if beta is None else float(beta)
    ell = bellman_residual(mdp, v, policy, params.lam)
    return float(-rho @ np.asarray(v, dtype=float) + 0.5 * b * (rho * ell**2).sum())


def policy_error(policy, pi_star) -> float:
    """L1 distance sum_{s,a} |pi - pi*|."""
    p, q = np.asarray(policy, dtype=float), np.asarray(pi_star, dtype=float)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch {p.shape} vs {q.shape}")
    return float(np.abs(p - q).sum())
