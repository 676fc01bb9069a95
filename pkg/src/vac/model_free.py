"""Stochastic variational actor-critic from an off-policy trajectory.

The Q-formulation is the main path; the V-formulation with importance
ratios is kept for comparison. Batch quantities are always evaluated at the
start-of-batch parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DivergenceError, InvalidInputError
from .mdp import (
    FiniteMdp,
    Geometry,
    HyperParams,
    bellman_residual,
    log_policy,
    objective,
    policy_from_logits,
    shift_logits,
    uniform_rho,
    variant_index,
)
from .oracle import solve, value_iteration
from .trace import COLUMNS, RunTrace

NEXT_STATE_MODES = ("exact", "bff", "bff_literal", "resample")
DIVERGENCE_BOUND = 1e12


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States, actions and rewards for t = 0..T under a fixed behavior policy."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behavior: np.ndarray
    seed: int = 0
    mdp_digest: str = ""

    def __post_init__(self):
        n = len(self.states)
        if len(self.actions) != n or len(self.rewards) != n:
            raise InvalidInputError("states, actions and rewards must have equal length")
        if n < 3:
            raise InvalidInputError("a trajectory needs T >= 2")

    @property
    def T(self) -> int:
        return len(self.states) - 1


@dataclass
class BatchStats:
    states: np.ndarray
    residuals: np.ndarray
    ell_hat: np.ndarray  # nan at unvisited states
    counts: np.ndarray


def check_behavior(behavior, mdp: FiniteMdp) -> np.ndarray:
    b = np.asarray(behavior, dtype=float)
    if b.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError(f"behavior policy must have shape {(mdp.n_states, mdp.n_actions)}")
    if not np.all(b > 0):
        raise InvalidInputError("behavior policy must be strictly positive")
    if np.abs(b.sum(axis=1) - 1).max() > 1e-12:
        raise InvalidInputError("behavior policy rows must sum to 1")
    return b


@numba.njit(cache=True)
def _rollout(cum_pi, cum_p, s0, ua, us):
    T = len(us)
    S, A = cum_pi.shape
    s = np.empty(T + 1, np.int64)
    a = np.empty(T + 1, np.int64)
    s[0] = s0
    for t in range(T + 1):
        j = 0
        while j < A - 1 and cum_pi[s[t], j] <= ua[t]:
            j += 1
        a[t] = j
        if t < T:
            row = cum_p[a[t], s[t]]
            i = np.searchsorted(row, us[t], side="right")
            s[t + 1] = min(i, S - 1)
    return s, a


def _cumulative(P):
    c = np.cumsum(P, axis=-1)
    c[..., -1] = 1.0
    return c


def generate_trajectory(mdp: FiniteMdp, behavior_policy, T: int, seed: int) -> Trajectory:
    """Roll out the behavior policy for T steps from a uniformly drawn start state."""
    if int(T) < 2:
        raise InvalidInputError(f"T must be >= 2, got {T}")
    b = check_behavior(behavior_policy, mdp)
    rng = np.random.default_rng(seed)
    s0 = int(rng.integers(mdp.n_states))
    ua = rng.uniform(size=int(T) + 1)
    us = rng.uniform(size=int(T))
    s, a = _rollout(_cumulative(b), _cumulative(mdp.transitions), s0, ua, us)
    return Trajectory(s, a, mdp.rewards[s, a], b, int(seed), mdp.digest())


def resample_next_states(mdp: FiniteMdp, traj: Trajectory, seed: int) -> np.ndarray:
    """Independent draws s'_{t+1} ~ P^{a_t}(s_t, .) for t = 0..T-1 (simulator access)."""
    rng = np.random.default_rng([int(seed), 1])
    u = rng.uniform(size=traj.T)
    cum = _cumulative(mdp.transitions)[traj.actions[:-1], traj.states[:-1]]
    return np.minimum((cum <= u[:, None]).sum(axis=1), mdp.n_states - 1)


def _geometry(mdp_or_geometry, n_states=None) -> Geometry:
    if isinstance(mdp_or_geometry, Geometry):
        return mdp_or_geometry
    if mdp_or_geometry is not None and mdp_or_geometry.geometry is not None:
        return mdp_or_geometry.geometry
    n = n_states if mdp_or_geometry is None else mdp_or_geometry.n_states
    A = 1 if mdp_or_geometry is None else mdp_or_geometry.n_actions
    return Geometry((n,), np.zeros((A, 1), np.int64))


def bff_states(traj: Trajectory, t, geometry: Geometry, literal: bool = False) -> np.ndarray:
    """Borrowed next states s_t + (s_{t+2} - s_{t+1}) in wrap-around index space.

    Unless `literal`, the displacement is re-based from action a_{t+1} to a_t
    by adding moves[a_t] - moves[a_{t+1}]; on translation-invariant dynamics
    this makes the surrogate an exact independent draw.
    """
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > traj.T - 2):
        raise InvalidInputError(f"BFF index must lie in [0, {traj.T - 2}]")
    s = traj.states
    c = geometry.coords(s[t]) + geometry.coords(s[t + 2]) - geometry.coords(s[t + 1])
    if not literal:
        c = c + geometry.moves[traj.actions[t]] - geometry.moves[traj.actions[t + 1]]
    return geometry.index(c)


def bff_next_state(traj: Trajectory, t: int, geometry=None, n_states=None, literal: bool = False) -> int:
    """Scalar form of `bff_states`; without a geometry, plain mod-n arithmetic is used."""
    if geometry is None:
        n = int(n_states if n_states is not None else traj.states.max() + 1)
        geometry = Geometry((n,), np.zeros((int(traj.actions.max()) + 1, 1), np.int64))
    return int(bff_states(traj, t, geometry, literal))


def next_states(traj: Trajectory, idx, mode: str, mdp: FiniteMdp | None = None, resampled=None):
    """Second next-state sample for transitions `idx` under `mode`."""
    idx = np.asarray(idx)
    if mode == "exact":
        return traj.states[idx + 1]
    if mode in ("bff", "bff_literal"):
        return bff_states(traj, idx, _geometry(mdp, traj.states.max() + 1), mode == "bff_literal")
    if mode == "resample":
        if resampled is None:
            raise InvalidInputError("resample mode needs pre-drawn independent next states")
        return resampled[idx]
    raise InvalidInputError(f"unknown next_state_mode {mode!r}; expected one of {NEXT_STATE_MODES}")


# ---- Q-formulation on arrays -------------------------------------------------


def _mean_by_state(values, states, n_states, weights=None):
    w = np.ones(len(states)) if weights is None else np.asarray(weights, float)
    cnt = np.bincount(states, w, minlength=n_states)
    tot = np.bincount(states, w * values, minlength=n_states)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, tot / np.where(cnt > 0, cnt, 1), np.nan), cnt


def hhat(residuals, states, ell_hat, variant):
    """Transform each sample by the sign of its state's averaged residual.

    Clipping keeps L where ell_hat > 0; flipping multiplies by sign(ell_hat)
    with sign(0) = +1.
    """
    i = variant_index(variant)
    L = np.asarray(residuals, float)
    if i == 0:
        return L
    lh = ell_hat[states]
    if i == 1:
        return np.where(lh > 0, L, 0.0)
    return np.where(lh >= 0, L, -L)


def q_residuals(q, logits, s, a, r, s1, gamma, lam):
    """L_t = Q(s_t, a_t) - r_t - gamma sum_a (Q(s_{t+1}, a) - lam log pi) pi."""
    pi = policy_from_logits(logits)
    logpi = log_policy(logits)
    soft_v = (pi * (q - lam * logpi)).sum(axis=1)
    return q[s, a] - r - gamma * soft_v[s1]


def q_batch_grads(q, logits, s, a, r, s1, sp, params: HyperParams, gamma, variant=None, weights=None):
    """Batch gradients of the Q objective.

    Returns (G_Q, F, stats) where G_Q is the weighted average of per-sample
    Q gradients and F the weighted average of the soft-max fast-path policy
    terms f, so the logit update is theta -= eta_pi * F. Uniform weights give
    the plain batch mean.
    """
    q = np.asarray(q, float)
    S, A = q.shape
    n = len(s)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
    variant = params.variant if variant is None else variant
    logpi = log_policy(logits)
    pi = np.exp(logpi)
    lam, beta = params.lam, params.beta
    L = q[s, a] - r - gamma * (pi * (q - lam * logpi)).sum(axis=1)[s1]
    ell_hat, counts = _mean_by_state(L, s, S, None if weights is None else w)
    h = hhat(L, s, ell_hat, variant)

    GQ = np.bincount(s * A + a, w * (-1.0 + beta * L), minlength=S * A).reshape(S, A)
    GQ -= np.bincount(sp, w * beta * gamma * L, minlength=S)[:, None] * pi

    V = (pi * q).sum(axis=1)
    H = (pi * logpi).sum(axis=1)
    adv = V[:, None] - q + lam * logpi - lam * H[:, None]
    F = np.bincount(sp, w * gamma * beta * h, minlength=S)[:, None] * pi * adv
    return GQ, F, BatchStats(s, L, ell_hat, counts)


def q_objective(mdp: FiniteMdp, q, logits, rho_sa, params: HyperParams) -> float:
    """Expected Q objective: sum_{sa} rho_sa (-Q + beta/2 ell_sa^2)."""
    ell = q_model_residual(mdp, q, logits, params.lam)
    return float((rho_sa * (-np.asarray(q) + 0.5 * params.beta * ell**2)).sum())


def q_model_residual(mdp: FiniteMdp, q, logits, lam):
    """ell_sa = Q - r - gamma E_{s'}[sum_b (Q(s', b) - lam log pi) pi]."""
    pi = policy_from_logits(logits)
    soft_v = (pi * (np.asarray(q) - lam * log_policy(logits))).sum(axis=1)
    return q - mdp.rewards - mdp.gamma * np.einsum("ast,t->sa", mdp.transitions, soft_v)


def q_objective_grads(mdp: FiniteMdp, q, logits, rho_sa, params: HyperParams):
    """Analytic (dE/dQ, dE/dtheta) of `q_objective` (Euclidean logit gradient)."""
    pi = policy_from_logits(logits)
    logpi = log_policy(logits)
    lam, beta, g = params.lam, params.beta, mdp.gamma
    ell = q_model_residual(mdp, q, logits, lam)
    w = rho_sa * ell
    inflow = np.einsum("sa,ast->t", w, mdp.transitions)  # sum_{sa} rho ell P^a_st
    dQ = -rho_sa + beta * w - beta * g * inflow[:, None] * pi
    x = q - lam * logpi
    xv = (pi * x).sum(axis=1)
    dsoft = pi * (x - xv[:, None])  # d/dtheta_tb of sum_c pi_tc (Q - lam log pi)_tc
    dth = -beta * g * inflow[:, None] * dsoft
    return dQ, dth


# ---- V-formulation on arrays -------------------------------------------------


def v_batch_grads(v, logits, s, a, r, s1, ap, sp, behavior, params: HyperParams, gamma,
                  variant=None, weights=None):
    """Importance-weighted V-formulation gradients.

    L_t = V(s_t) - tau(s_t, a_t) (r_t + gamma V(s_{t+1})) + lam H(s_t); the
    second sample (a'_t, s'_{t+1}) enters G_V and G_pi. Returns
    (G_V, G_theta, stats) with G_theta a Euclidean logit gradient.
    """
    v = np.asarray(v, float)
    S = len(v)
    n = len(s)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
    variant = params.variant if variant is None else variant
    pi = policy_from_logits(logits)
    logpi = log_policy(logits)
    tau = pi / behavior
    lam, beta = params.lam, params.beta
    H = (pi * logpi).sum(axis=1)
    L = v[s] - tau[s, a] * (r + gamma * v[s1]) + lam * H[s]
    ell_hat, counts = _mean_by_state(L, s, S, None if weights is None else w)
    h = hhat(L, s, ell_hat, variant)

    tp = tau[s, ap]
    GV = np.bincount(s, w * (-1.0 + beta * L), minlength=S)
    GV -= np.bincount(sp, w * beta * L * gamma * tp, minlength=S)

    A = pi.shape[1]
    # -gamma tau V(s') grad log pi(s, a') + lam grad H(s), per sample, row s only
    coef = w * beta * h
    score = np.zeros((n, A))
    score[np.arange(n), ap] = 1.0
    score -= pi[s]
    Gt = np.zeros((S, A))
    np.add.at(Gt, s, (coef * -gamma * tp * v[sp])[:, None] * score)
    gradH = pi * (logpi - H[:, None])
    Gt += np.bincount(s, coef * lam, minlength=S)[:, None] * gradH
    return GV, Gt, BatchStats(s, L, ell_hat, counts)


# ---- runs --------------------------------------------------------------------


def _n_batches(T, M, mode):
    usable = T - 1 if mode in ("bff", "bff_literal") else T
    return usable // M


def _record(mdp, rows, k, v, pi, params, rho, pi_ref, v_ref, samples):
    ell = bellman_residual(mdp, v, pi, params.lam)
    rows.append((
        k,
        np.abs(pi - pi_ref).sum(),
        np.abs(v - v_ref).max(),
        ell.min(),
        objective(mdp, v, pi, rho, params),
        float(ell.min() < 0),
        samples,
    ))


def _finish(rows, status, k, **kw):
    table = np.array(rows, dtype=float).reshape(-1, len(COLUMNS))
    return RunTrace(table, status, k, **kw)


def _references(mdp, lam, pi_ref, v_ref):
    if pi_ref is None:
        pi_ref = value_iteration(mdp).pi_star
    if v_ref is None:
        v_ref = solve(mdp, lam).v_star
    return pi_ref, v_ref


def run_model_free(
    mdp: FiniteMdp,
    behavior_policy,
    params: HyperParams,
    *,
    T: int,
    seed: int,
    transform=None,
    next_state_mode: str = "bff",
    stride: int = 1,
    traj: Trajectory | None = None,
    init=None,
    pi_ref=None,
    v_ref=None,
) -> RunTrace:
    """Consume the trajectory in consecutive batches of size M (Q-formulation).

    Rows are recorded at the start of every `stride`-th batch and after the
    last one; V is reported as sum_a pi (Q - lam log pi).
    """
    if next_state_mode not in NEXT_STATE_MODES:
        raise InvalidInputError(f"unknown next_state_mode {next_state_mode!r}")
    M = int(params.batch_size)
    if traj is None:
        if int(T) < M:
            raise InvalidInputError(f"T={T} is shorter than one batch of {M}")
        traj = generate_trajectory(mdp, behavior_policy, T, seed)
    resampled = resample_next_states(mdp, traj, seed) if next_state_mode == "resample" else None
    nb = _n_batches(traj.T, M, next_state_mode)
    second = next_states(traj, np.arange(nb * M), next_state_mode, mdp, resampled)
    variant = params.variant if transform is None else transform
    pi_ref, v_ref = _references(mdp, params.lam, pi_ref, v_ref)
    rho = uniform_rho(mdp.n_states)
    S, A = mdp.n_states, mdp.n_actions
    q, th = (np.zeros((S, A)), np.zeros((S, A))) if init is None else (
        np.array(init[0], float), shift_logits(init[1]))
    rows = []
    status = "exhausted"

    def soft_v(q, th):
        return (policy_from_logits(th) * (q - params.lam * log_policy(th))).sum(axis=1)

    k = 0
    for k in range(nb):
        idx = np.arange(k * M, (k + 1) * M)
        if k % stride == 0:
            _record(mdp, rows, k, soft_v(q, th), policy_from_logits(th), params, rho, pi_ref, v_ref, k * M)
        GQ, F, _ = q_batch_grads(q, th, traj.states[idx], traj.actions[idx], traj.rewards[idx],
                                 traj.states[idx + 1], second[idx], params, mdp.gamma, variant)
        q = q - params.eta_q * GQ
        th = th - params.eta_pi * F
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(th))) or np.abs(q).max() > DIVERGENCE_BOUND:
            trace = _finish(rows, "diverged", k + 1, q=q, logits=th)
            raise DivergenceError(f"Q diverged in batch {k}", trace)
        th = shift_logits(th)
    else:
        k = nb
    pi = policy_from_logits(th)
    v = soft_v(q, th)
    _record(mdp, rows, k, v, pi, params, rho, pi_ref, v_ref, k * M)
    return _finish(rows, status, k, v=v, logits=th, q=q, final_l1=float(np.abs(pi - pi_ref).sum()))


def v_formulation_step(v, logits, traj: Trajectory, window, behavior_policy, params: HyperParams,
                       gamma: float, transform=None, next_state_mode="bff_literal", mdp=None,
                       resampled=None):
    """One batch update of (V, theta) over transitions `window`.

    The second action is a'_t = a_{t+1}; its next state comes from
    `next_state_mode` ("bff_literal" by default, the only form that pairs
    with a'_t = a_{t+1} without correction).
    """
    idx = np.asarray(window)
    if len(idx) == 0:
        raise InvalidInputError("empty batch window")
    b = np.asarray(behavior_policy, float)
    if np.any(b <= 0):
        raise InvalidInputError("behavior policy must be strictly positive")
    s, a = traj.states[idx], traj.actions[idx]
    ap = traj.actions[idx + 1]
    if next_state_mode == "bff_literal":
        sp = bff_states(traj, idx, _geometry(mdp, traj.states.max() + 1), literal=True)
    elif next_state_mode == "resample":
        sp = resampled[idx]
    else:
        raise InvalidInputError("V-formulation supports bff_literal or resample next states")
    GV, Gt, _ = v_batch_grads(v, logits, s, a, traj.rewards[idx], traj.states[idx + 1], ap, sp, b,
                              params, gamma, transform)
    return np.asarray(v, float) - params.eta_v * GV, shift_logits(np.asarray(logits, float) - params.eta_pi * Gt)


def run_v_formulation(
    mdp: FiniteMdp,
    behavior_policy,
    params: HyperParams,
    *,
    T: int,
    seed: int,
    transform=None,
    next_state_mode: str = "bff_literal",
    stride: int = 1,
    traj: Trajectory | None = None,
    pi_ref=None,
    v_ref=None,
) -> RunTrace:
    b = check_behavior(behavior_policy, mdp)
    M = int(params.batch_size)
    if traj is None:
        traj = generate_trajectory(mdp, b, T, seed)
    if next_state_mode != "bff_literal":
        raise InvalidInputError("run_v_formulation supports bff_literal next states only")
    resampled = None
    pi_ref, v_ref = _references(mdp, params.lam, pi_ref, v_ref)
    rho = uniform_rho(mdp.n_states)
    v, th = np.zeros(mdp.n_states), np.zeros((mdp.n_states, mdp.n_actions))
    nb = (traj.T - 1) // M
    rows = []
    k = 0
    for k in range(nb):
        if k % stride == 0:
            _record(mdp, rows, k, v, policy_from_logits(th), params, rho, pi_ref, v_ref, k * M)
        v, th = v_formulation_step(v, th, traj, np.arange(k * M, (k + 1) * M), b, params, mdp.gamma,
                                   transform, next_state_mode, mdp, resampled)
        if not np.all(np.isfinite(v)) or np.abs(v).max() > DIVERGENCE_BOUND:
            raise DivergenceError(f"V diverged in batch {k}", _finish(rows, "diverged", k + 1, v=v, logits=th))
    else:
        k = nb
    pi = policy_from_logits(th)
    _record(mdp, rows, k, v, pi, params, rho, pi_ref, v_ref, k * M)
    return _finish(rows, "exhausted", k, v=v, logits=th, final_l1=float(np.abs(pi - pi_ref).sum()))
