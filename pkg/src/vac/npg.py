"""Natural policy gradient baseline with a stochastic Bellman-residual critic."""
from __future__ import annotations

import numpy as np

from .errors import EstimationError, InvalidInputError
from .mdp import FiniteMdp, HyperParams, log_policy, policy_from_logits, shift_logits, uniform_rho
from .trace import RunTrace
from .model_free import (
    NEXT_STATE_MODES,
    Trajectory,
    _finish,
    _record,
    _references,
    check_behavior,
    generate_trajectory,
    next_states,
    resample_next_states,
)

MAX_INNER_BATCHES = 10_000


def npg_policy_update(policy, q, eta_pi: float, lam: float, gamma: float) -> np.ndarray:
    """pi <- pi^(1 - lam eta/(1-gamma)) exp(eta Q/(1-gamma)), renormalized in log space."""
    pi = np.asarray(policy, dtype=float)
    if np.any(pi <= 0):
        raise InvalidInputError("NPG update needs a strictly positive policy")
    keep = 1 - lam * eta_pi / (1 - gamma)
    if not keep > 0:
        raise InvalidInputError(f"lam * eta_pi / (1 - gamma) must be < 1, got {1 - keep}")
    return policy_from_logits(keep * np.log(pi) + eta_pi * np.asarray(q, float) / (1 - gamma))


def _npg_logits(logits, q, eta_pi, lam, gamma):
    keep = 1 - lam * eta_pi / (1 - gamma)
    return shift_logits(keep * log_policy(logits) + eta_pi * q / (1 - gamma))


def npg_q_batch(q, logits, s, a, r, s1, sp, eta_q, lam, gamma):
    """One inner step Q <- Q - eta_q * mean_t G_t."""
    S, A = q.shape
    logpi = log_policy(logits)
    pi = np.exp(logpi)
    V = (q * pi).sum(axis=1)
    H = (pi * logpi).sum(axis=1)
    w = q[s, a] - r - gamma * (V[s1] - lam * H[s1])
    G = np.bincount(s * A + a, w, minlength=S * A).reshape(S, A)
    G -= gamma * np.bincount(sp, w, minlength=S)[:, None] * pi
    return q - eta_q * G / len(s)


def npg_estimate_q(traj: Trajectory, logits, q0, params: HyperParams, gamma: float, eps: float,
                   second=None, start: int = 0, max_batches: int = MAX_INNER_BATCHES):
    """Run inner batches from transition `start` until sum (dQ)^2 / n_states < eps.

    `second` holds the second next-state sample for every transition (the
    exact next state when omitted). Returns (Q, transitions consumed).
    """
    if not eps > 0:
        raise InvalidInputError(f"eps must be > 0, got {eps}")
    M = int(params.batch_size)
    q = np.array(q0, dtype=float)
    S = q.shape[0]
    if second is None:
        second = traj.states[1:]
    available = len(second)
    t = start
    for j in range(max_batches):
        if t + M > available:
            raise InvalidInputError(f"trajectory exhausted: need {M} transitions from {t}, have {available - t}")
        idx = np.arange(t, t + M)
        q_new = npg_q_batch(q, logits, traj.states[idx], traj.actions[idx], traj.rewards[idx],
                            traj.states[idx + 1], second[idx], params.eta_q, params.lam, gamma)
        t += M
        delta = ((q_new - q) ** 2).sum() / S
        q = q_new
        if not np.isfinite(delta):
            raise EstimationError("Q estimate became non-finite", {"batches": j + 1})
        if delta < eps:
            return q, t - start
    raise EstimationError(
        f"inner Q loop did not reach eps={eps} in {max_batches} batches",
        {"batches": max_batches, "last_delta": float(delta)},
    )


def run_npg(
    mdp: FiniteMdp,
    behavior_policy,
    params: HyperParams,
    *,
    T: int,
    seed: int,
    eps: float,
    next_state_mode: str = "exact",
    max_outer: int | None = None,
    stride: int = 1,
    traj: Trajectory | None = None,
    pi_ref=None,
    v_ref=None,
) -> RunTrace:
    """Alternate Q estimation and NPG policy updates until the trajectory runs out.

    The samples column counts transitions consumed, for budget-matched
    comparisons with run_model_free.
    """
    if next_state_mode not in NEXT_STATE_MODES:
        raise InvalidInputError(f"unknown next_state_mode {next_state_mode!r}")
    b = check_behavior(behavior_policy, mdp)
    if traj is None:
        traj = generate_trajectory(mdp, b, T, seed)
    resampled = resample_next_states(mdp, traj, seed) if next_state_mode == "resample" else None
    usable = traj.T - 1 if next_state_mode in ("bff", "bff_literal") else traj.T
    second = next_states(traj, np.arange(usable), next_state_mode, mdp, resampled)
    pi_ref, v_ref = _references(mdp, params.lam, pi_ref, v_ref)
    rho = uniform_rho(mdp.n_states)
    S, A = mdp.n_states, mdp.n_actions
    q, th = np.zeros((S, A)), np.zeros((S, A))
    used = 0
    rows = []
    k = 0
    status = "exhausted"

    def soft_v(q, th):
        return (policy_from_logits(th) * (q - params.lam * log_policy(th))).sum(axis=1)

    while max_outer is None or k < max_outer:
        if k % stride == 0:
            _record(mdp, rows, k, soft_v(q, th), policy_from_logits(th), params, rho, pi_ref, v_ref, used)
        if used + params.batch_size > usable:
            break
        try:
            q, n = npg_estimate_q(traj, th, q, params, mdp.gamma, eps, second, used)
        except InvalidInputError:
            break  # trajectory ran out mid-estimate
        used += n
        th = _npg_logits(th, q, params.eta_pi, params.lam, mdp.gamma)
        k += 1
    else:
        status = "max_iters"
    pi = policy_from_logits(th)
    if not rows or rows[-1][0] != k:
        _record(mdp, rows, k, soft_v(q, th), pi, params, rho, pi_ref, v_ref, used)
    return _finish(rows, status, k, v=soft_v(q, th), logits=th, q=q,
                   final_l1=float(np.abs(pi - pi_ref).sum()))
