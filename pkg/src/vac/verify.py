"""Property suites behind `vac verify`.

Each suite returns a list of Check records; a suite passes when all of its
checks do. They are small enough to run in seconds.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .instances import RingSpec, random_mdp, ring_mdp
from .mdp import FiniteMdp, HyperParams, objective, policy_from_logits, policy_value, uniform_rho
from .model_based import (
    StopRule,
    critic_fixed_point,
    euclidean_grad_theta,
    grad_v,
    greedy_limit,
    predicted_residual,
    run_model_based,
)
from .model_free import q_batch_grads, q_objective_grads, v_batch_grads
from .oracle import action_gap, beta_threshold, kl_rows, one_hot, solve, value_iteration


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _sizes(rng, max_s=4, max_a=3):
    return int(rng.integers(2, max_s + 1)), int(rng.integers(2, max_a + 1))


def enumerate_optimum(mdp: FiniteMdp):
    """Best deterministic policy by exhaustive evaluation (value vector, actions)."""
    best_v, best_a = None, None
    for acts in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        v = policy_value(mdp, one_hot(np.array(acts), mdp.n_actions))
        if best_v is None or np.all(v >= best_v - 1e-12) and np.any(v > best_v + 1e-12):
            best_v, best_a = v, np.array(acts)
    return best_v, best_a


def suite_oracle(seed=0, n=10):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        S, A = _sizes(rng)
        mdp = random_mdp(S, A, 0.9, seed * 1000 + i)
        sol = value_iteration(mdp)
        v, acts = enumerate_optimum(mdp)
        err = np.abs(v - sol.v_star).max()
        ok = err <= 1e-8 and np.array_equal(acts, sol.greedy_actions)
        out.append(Check(f"oracle[{i}] S={S} A={A}", bool(ok), f"|dV|={err:.2e}"))
    return out


def _fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def suite_gradients(seed=0, n=5):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        S, A = _sizes(rng)
        mdp = random_mdp(S, A, 0.9, seed * 1000 + i)
        p = HyperParams(beta=float(rng.uniform(1, 10)), lam=float(rng.choice([0.0, 0.1])), variant="vanilla")
        rho = rng.dirichlet(np.ones(S))
        v, th = rng.normal(size=S), rng.normal(size=(S, A))
        gv = grad_v(mdp, v, policy_from_logits(th), rho, p)
        gt = euclidean_grad_theta(mdp, v, th, rho, p)
        fv = _fd(lambda x: objective(mdp, x, policy_from_logits(th), rho, p), v)
        ft = _fd(lambda x: objective(mdp, v, policy_from_logits(x), rho, p), th)
        rel = max(np.abs(gv - fv).max() / max(np.abs(fv).max(), 1.0), np.abs(gt - ft).max() / max(np.abs(ft).max(), 1.0))
        out.append(Check(f"gradients[{i}]", bool(rel <= 1e-5), f"rel={rel:.2e}"))
    return out


def suite_fixed_point(seed=0, n=10):
    rng = np.random.default_rng(seed)
    out = []
    mdp = random_mdp(4, 3, 0.9, seed)
    p = HyperParams(beta=5.0)
    for i in range(n):
        pi = policy_from_logits(rng.normal(size=(4, 3)))
        rho = rng.dirichlet(np.ones(4))
        v = critic_fixed_point(mdp, pi, rho, p)
        gap = np.abs(grad_v(mdp, v, pi, rho, p)).max()
        ell = predicted_residual(mdp, pi, rho, p)
        out.append(Check(f"fixed-point[{i}]", bool(gap < 1e-9 and np.all(ell > 0)), f"|G_V|={gap:.1e}"))
    return out


def suite_optimality(seed=0, n=3):
    out = []
    for i in range(n):
        mdp = random_mdp(3, 2, 0.9, seed * 1000 + i)
        sol = value_iteration(mdp)
        gap = action_gap(mdp, sol.v_star)
        alpha = gap / 4
        beta = 2 * beta_threshold(mdp, alpha, gap=gap)
        p = HyperParams(beta=beta, eta_v=1 / (4 * beta), eta_pi=1 / (4 * beta), variant="flipping")
        rho = uniform_rho(mdp.n_states)
        tr = run_model_based(mdp, p, max_iters=2_000_000, stride=100_000)
        acts, _, v_inf = greedy_limit(mdp, tr.logits, rho, p)
        err = np.abs(v_inf - sol.v_star).max()
        ok = np.array_equal(acts, sol.greedy_actions) and err <= alpha
        out.append(Check(f"optimality[{i}]", bool(ok), f"|V-V*|={err:.2e} alpha={alpha:.2e} ({tr.status})"))
    return out


def suite_regularized(seed=0):
    mdp = ring_mdp(RingSpec(5, 0.0, 0.95))
    lam, eps = 0.1, 0.05
    beta = 4 * 5 / (eps * (1 - mdp.gamma) ** 2)
    p = HyperParams(beta=beta, lam=lam, eta_v=1 / (4 * beta), eta_pi=1 / (4 * beta))
    tr = run_model_based(mdp, p, max_iters=2_000_000, stop=StopRule(tol=1e-12, greedy_window=0), stride=100_000)
    reg = solve(mdp, lam)
    dv = tr.v - reg.v_star
    bound = 5 / (beta * (1 - mdp.gamma) ** 2)
    kl = kl_rows(reg.pi_star, policy_from_logits(tr.logits)).max()
    return [
        Check("regularized value gap", bool(np.all(dv > 0) and np.all(dv < bound)),
              f"min={dv.min():.2e} max={dv.max():.2e} bound={bound:.2e}"),
        Check("regularized KL", bool(kl <= eps * mdp.gamma / lam), f"KL={kl:.2e} limit={eps * mdp.gamma / lam:.3f}"),
    ]


def suite_unbiased(seed=0):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(3, 2, 0.9, seed)
    S, A = 3, 2
    P, g = mdp.transitions, mdp.gamma
    p = HyperParams(beta=3.0, lam=0.2, variant="vanilla")
    rho = rng.dirichlet(np.ones(S))
    b = rng.dirichlet(np.ones(A), size=S)
    q, th, v = rng.normal(size=(S, A)), rng.normal(size=(S, A)), rng.normal(size=S)
    out = []

    cells = [(s, a, s1, s2, rho[s] * b[s, a] * P[a, s, s1] * P[a, s, s2])
             for s, a, s1, s2 in itertools.product(range(S), range(A), range(S), range(S))]
    s, a, s1, sp, w = (np.array(x) for x in zip(*cells))
    GQ, F, _ = q_batch_grads(q, th, s, a, mdp.rewards[s, a], s1, sp, p, g, weights=w)
    dQ, dth = q_objective_grads(mdp, q, th, rho[:, None] * b, p)
    err = max(np.abs(GQ - dQ).max(), np.abs(F - dth).max())
    out.append(Check("unbiased Q-formulation", bool(err <= 1e-10), f"err={err:.1e}"))

    state_only = FiniteMdp(P, np.repeat(rng.normal(size=(S, 1)), A, axis=1), g)
    pi = policy_from_logits(th)
    for name, m, pick in (("G_V", mdp, 0), ("G_theta", state_only, 1)):
        cells = [(s_, a_, s1_, a2, s2, rho[s_] * b[s_, a_] * m.transitions[a_, s_, s1_] * b[s_, a2]
                  * m.transitions[a2, s_, s2])
                 for s_, a_, s1_, a2, s2 in itertools.product(range(S), range(A), range(S), range(A), range(S))]
        s, a, s1, ap, sp, w = (np.array(x) for x in zip(*cells))
        GV, Gt, _ = v_batch_grads(v, th, s, a, m.rewards[s, a], s1, ap, sp, b, p, g, weights=w)
        ref = grad_v(m, v, pi, rho, p) if pick == 0 else euclidean_grad_theta(m, v, th, rho, p)
        err = np.abs((GV, Gt)[pick] - ref).max()
        out.append(Check(f"unbiased V-formulation {name}", bool(err <= 1e-10), f"err={err:.1e}"))
    return out


SUITES = {
    "oracle": suite_oracle,
    "gradients": suite_gradients,
    "fixed-point": suite_fixed_point,
    "optimality": suite_optimality,
    "regularized": suite_regularized,
    "unbiased": suite_unbiased,
}


def run_suite(name: str, seed: int = 0):
    if name == "all":
        return [c for fn in SUITES.values() for c in fn(seed=seed)]
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](seed=seed)
