"""Exact-gradient variational actor-critic (vanilla, clipping, flipping)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import DivergenceError, InvalidInputError, NumericalError
from .mdp import (
    FiniteMdp,
    HyperParams,
    bellman_residual,
    check_rho,
    log_policy,
    policy_from_logits,
    policy_value,
    shift_logits,
    transition_under_policy,
    variant_index,
)
from .oracle import one_hot, solve, value_iteration
from .trace import COLUMNS, RunTrace


def residual_transform(x, variant):
    """h0(x) = x, h1(x) = x 1{x > 0}, h2(x) = |x|."""
    i = variant_index(variant)
    x = np.asarray(x, dtype=float)
    if i == 1:
        return np.where(x > 0, x, 0.0)
    if i == 2:
        return np.abs(x)
    return x


@dataclass(frozen=True)
class StopRule:
    """Primary: ||G_V||_inf + ||G_theta centered||_inf < tol.

    Secondary: greedy actions unchanged for `greedy_window` iterations while
    ||G_V||_inf < v_tol. tol = 0 and greedy_window = 0 disable them.
    """

    tol: float = 1e-10
    greedy_window: int = 1000
    v_tol: float = 1e-8


NO_STOP = StopRule(tol=0.0, greedy_window=0)


def grad_v(mdp: FiniteMdp, v, policy, rho, params: HyperParams) -> np.ndarray:
    """G_V = -rho + beta (I - gamma P^pi)^T (ell * rho)."""
    rho = check_rho(rho, mdp.n_states)
    ell = bellman_residual(mdp, v, policy, params.lam)
    w = ell * rho
    Ppi = transition_under_policy(mdp, policy)
    return -rho + params.beta * (w - mdp.gamma * Ppi.T @ w)


def _bracket(mdp, v, logpi, lam):
    br = -mdp.gamma * np.einsum("ast,t->sa", mdp.transitions, v) - mdp.rewards
    if lam > 0:
        br = br + lam * logpi
    return br


def _grad_theta(mdp, v, pi, logpi, rho, params, variant):
    ell = bellman_residual(mdp, v, pi, params.lam)
    scale = params.beta * rho * residual_transform(ell, variant)
    return scale[:, None] * _bracket(mdp, np.asarray(v, float), logpi, params.lam)


def grad_theta(mdp: FiniteMdp, v, policy, rho, params: HyperParams, transform=None) -> np.ndarray:
    """Natural-gradient direction beta rho_s h(ell_s) [-gamma P^a V - r + lam log pi] (c_s = 0)."""
    rho = check_rho(rho, mdp.n_states)
    pi = np.asarray(policy, dtype=float)
    if params.lam > 0 and np.any(pi <= 0):
        raise InvalidInputError("log pi is undefined for zero-probability actions when lam > 0")
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    variant = params.variant if transform is None else transform
    return _grad_theta(mdp, v, pi, logpi, rho, params, variant)


def euclidean_grad_theta(mdp: FiniteMdp, v, logits, rho, params: HyperParams, transform=None) -> np.ndarray:
    """Plain logit gradient pi * (G - sum_a pi G) built from the natural direction G.

    For the vanilla transform this is the derivative of the objective with
    respect to the raw logits.
    """
    pi = policy_from_logits(logits)
    g = grad_theta(mdp, v, pi, rho, params, transform)
    return pi * (g - (pi * g).sum(axis=1, keepdims=True))


def mb_step(state, mdp: FiniteMdp, rho, params: HyperParams, transform=None):
    """One joint step: V -= eta_v G_V, theta -= eta_pi G_theta, rows re-shifted."""
    v, logits = state
    v = np.asarray(v, dtype=float)
    pi = policy_from_logits(logits)
    logpi = log_policy(logits)
    rho = check_rho(rho, mdp.n_states)
    variant = params.variant if transform is None else transform
    gv = grad_v(mdp, v, pi, rho, params)
    gt = _grad_theta(mdp, v, pi, logpi, rho, params, variant)
    v_new = v - params.eta_v * gv
    th_new = shift_logits(np.asarray(logits, float) - params.eta_pi * gt)
    if not (np.all(np.isfinite(v_new)) and np.all(np.isfinite(th_new))):
        raise NumericalError("non-finite iterate in model-based step")
    return v_new, th_new


def critic_fixed_point(mdp: FiniteMdp, policy, rho, params: HyperParams) -> np.ndarray:
    """The V solving G_V(V, pi) = 0 for fixed pi."""
    rho = check_rho(rho, mdp.n_states)
    M = np.eye(mdp.n_states) - mdp.gamma * transition_under_policy(mdp, policy)
    ell = np.linalg.solve(M.T, rho) / (params.beta * rho)
    return policy_value(mdp, policy, params.lam) + np.linalg.solve(M, ell)


def predicted_residual(mdp: FiniteMdp, policy, rho, params: HyperParams) -> np.ndarray:
    """(1/beta) rho~ * (I - gamma P^pi)^{-T} rho, the residual wherever G_V = 0."""
    rho = check_rho(rho, mdp.n_states)
    M = np.eye(mdp.n_states) - mdp.gamma * transition_under_policy(mdp, policy)
    return np.linalg.solve(M.T, rho) / (params.beta * rho)


def fixed_point_residual_gap(mdp: FiniteMdp, v, policy, rho, params: HyperParams) -> float:
    ell = bellman_residual(mdp, v, policy, params.lam)
    return float(np.abs(ell - predicted_residual(mdp, policy, rho, params)).max())


def greedy_limit(mdp: FiniteMdp, logits, rho, params: HyperParams):
    """Project a converged policy onto its greedy actions and re-solve the critic.

    Returns (actions, one-hot policy, V with G_V = 0 at that policy).
    """
    actions = np.argmax(np.asarray(logits), axis=1)
    pi = one_hot(actions, mdp.n_actions)
    return actions, pi, critic_fixed_point(mdp, pi, rho, params)


_STATUS = {
    K.MAX_ITERS: "max_iters",
    K.CONVERGED: "converged",
    K.GREEDY_STABLE: "greedy_stable",
}


def run_model_based(
    mdp: FiniteMdp,
    params: HyperParams,
    *,
    rho=None,
    transform=None,
    init=None,
    max_iters: int = 10_000,
    stop: StopRule = StopRule(),
    stride: int = 10,
    pi_ref=None,
    v_ref=None,
    fast: bool = True,
) -> RunTrace:
    """Iterate mb_step in compiled code and record a RunTrace.

    The L1 policy error is measured against `pi_ref` (default: the
    unregularized optimum) and the value error against `v_ref` (default:
    V* for lam = 0, V*_lam otherwise). Deterministic two-action MDPs use a
    specialised kernel unless `fast` is False.
    """
    if int(max_iters) < 1:
        raise InvalidInputError(f"max_iters must be >= 1, got {max_iters}")
    if int(stride) < 1:
        raise InvalidInputError(f"stride must be >= 1, got {stride}")
    S, A = mdp.n_states, mdp.n_actions
    rho = np.full(S, 1.0 / S) if rho is None else check_rho(rho, S)
    if pi_ref is None:
        pi_ref = value_iteration(mdp).pi_star
    if v_ref is None:
        v_ref = solve(mdp, params.lam).v_star
    if init is None:
        v0, th0 = np.zeros(S), np.zeros((S, A))
    else:
        v0, th0 = init
    V = np.array(v0, dtype=float, copy=True)
    th = shift_logits(np.array(th0, dtype=float, copy=True))
    if V.shape != (S,) or th.shape != (S, A):
        raise InvalidInputError("init shapes do not match the MDP")
    variant = variant_index(params.variant if transform is None else transform)
    n_rows = (int(max_iters) - 1) // int(stride) + 2
    out = np.zeros((n_rows, K.N_METRICS))
    common = (np.ascontiguousarray(mdp.rewards), mdp.gamma, rho, float(params.beta), float(params.lam),
              float(params.eta_v), float(params.eta_pi), variant, int(max_iters), int(stride),
              float(stop.tol), int(stop.greedy_window), float(stop.v_tol),
              np.ascontiguousarray(pi_ref, dtype=float), np.ascontiguousarray(v_ref, dtype=float), out)
    nxt = K.deterministic_two_action(mdp.transitions) if fast else None
    if nxt is not None:
        d = th[:, 1] - th[:, 0]
        rows, status, k = K.mb_loop_det2(V, d, nxt, *common)
        th = shift_logits(np.stack([np.zeros(S), d], axis=1))
    else:
        indptr, indices, data = K.csr_rows(mdp.transitions)
        rows, status, k = K.mb_loop(V, th, indptr, indices, data, *common)
    table = np.zeros((rows, len(COLUMNS)))
    table[:, :6] = out[:rows]
    trace = RunTrace(table, _STATUS.get(status, "diverged"), int(k), V, th, None,
                     float(np.abs(policy_from_logits(th) - pi_ref).sum()) if np.all(np.isfinite(th)) else np.nan)
    if status == K.DIVERGED:
        raise DivergenceError(f"|V| exceeded {K.DIVERGENCE_BOUND:g} at iteration {k}", trace)
    if status == K.NONFINITE:
        raise DivergenceError(f"non-finite iterate at iteration {k}", trace)
    return trace

