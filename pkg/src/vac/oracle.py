"""Exact reference solutions, action gaps and step-size thresholds."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax, xlogy

from .errors import InvalidInputError, NumericalError
from .mdp import FiniteMdp, check_rho, policy_value, uniform_rho

MAX_SWEEPS = 10**6


@dataclass(frozen=True, eq=False)
class OptimalSolution:
    v_star: np.ndarray
    pi_star: np.ndarray
    greedy_actions: np.ndarray
    lam: float = 0.0

    def digest(self) -> str:
        h = hashlib.sha256()
        for x in (self.v_star, self.pi_star, self.greedy_actions.astype(np.int64)):
            h.update(np.ascontiguousarray(x).astype("<f8").tobytes())
        return h.hexdigest()[:16]


def q_values(mdp: FiniteMdp, v) -> np.ndarray:
    """Q[s, a] = r_sa + gamma sum_t P^a_st v_t."""
    return mdp.rewards + mdp.gamma * np.einsum("ast,t->sa", mdp.transitions, np.asarray(v, float))


def policy_q(mdp: FiniteMdp, policy, lam: float = 0.0) -> np.ndarray:
    """Regularized action values Q^pi_lam, consistent with V = sum_a pi (Q - lam log pi)."""
    return q_values(mdp, policy_value(mdp, policy, lam))


def greedy(q) -> np.ndarray:
    """Per-row argmax, lowest index on ties."""
    return np.argmax(np.asarray(q), axis=1)


def one_hot(actions, n_actions: int) -> np.ndarray:
    return np.eye(n_actions)[np.asarray(actions)]


def _stop_threshold(tol, gamma):
    return tol * (1 - gamma) / (2 * gamma)


def value_iteration(mdp: FiniteMdp, tol: float = 1e-10) -> OptimalSolution:
    if not tol > 0:
        raise InvalidInputError(f"tol must be > 0, got {tol}")
    eps = _stop_threshold(tol, mdp.gamma)
    v = np.zeros(mdp.n_states)
    for _ in range(MAX_SWEEPS):
        v_new = q_values(mdp, v).max(axis=1)
        done = np.abs(v_new - v).max() <= eps
        v = v_new
        if done:
            break
    else:
        raise NumericalError(f"value iteration exceeded {MAX_SWEEPS} sweeps")
    a = greedy(q_values(mdp, v))
    return OptimalSolution(v, one_hot(a, mdp.n_actions), a)


def soft_value_iteration(mdp: FiniteMdp, lam: float, tol: float = 1e-10) -> OptimalSolution:
    """Iterate V <- lam log sum_a exp(Q/lam); returns V*_lam and soft-max(Q/lam)."""
    if not lam > 0:
        raise InvalidInputError(f"lam must be > 0, got {lam}; use value_iteration")
    if not tol > 0:
        raise InvalidInputError(f"tol must be > 0, got {tol}")
    eps = _stop_threshold(tol, mdp.gamma)
    v = np.zeros(mdp.n_states)
    for _ in range(MAX_SWEEPS):
        v_new = lam * logsumexp(q_values(mdp, v) / lam, axis=1)
        done = np.abs(v_new - v).max() <= eps
        v = v_new
        if done:
            break
    else:
        raise NumericalError(f"soft value iteration exceeded {MAX_SWEEPS} sweeps")
    q = q_values(mdp, v)
    return OptimalSolution(v, softmax(q / lam, axis=1), greedy(q), lam)


def solve(mdp: FiniteMdp, lam: float = 0.0, tol: float = 1e-10) -> OptimalSolution:
    return value_iteration(mdp, tol) if lam == 0 else soft_value_iteration(mdp, lam, tol)


def action_gap(mdp: FiniteMdp, v_star) -> float:
    """min_s of (best Q - runner-up Q) at V*; zero flags a tie."""
    if mdp.n_actions < 2:
        raise InvalidInputError("action gap needs at least two actions")
    q = np.sort(q_values(mdp, v_star), axis=1)
    return float((q[:, -1] - q[:, -2]).min())


def beta_threshold(mdp: FiniteMdp, alpha: float, rho=None, gap: float | None = None) -> float:
    """beta_0 = (1 / min rho) / (alpha (1 - gamma)^2).

    Passing `gap` additionally enforces alpha < gap / 3.
    """
    if not alpha > 0:
        raise InvalidInputError(f"alpha must be > 0, got {alpha}")
    if gap is not None and not alpha < gap / 3:
        raise InvalidInputError(f"alpha={alpha} must be below gap/3={gap / 3}")
    rho = uniform_rho(mdp.n_states) if rho is None else check_rho(rho, mdp.n_states)
    return float(1.0 / rho.min() / (alpha * (1 - mdp.gamma) ** 2))


def kl_rows(p, q) -> np.ndarray:
    """Per-state KL(p_s || q_s)."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    return (xlogy(p, p) - xlogy(p, q)).sum(axis=1)
