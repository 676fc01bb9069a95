import numpy as np
import pytest
from hypothesis import given, strategies as st

from vac.errors import DivergenceError, InvalidInputError
from vac.instances import RingSpec, random_mdp, ring_mdp
from vac.mdp import (
    HyperParams,
    bellman_residual,
    neg_entropy,
    objective,
    policy_from_logits,
    policy_value,
    reward_under_policy,
    transition_under_policy,
    uniform_rho,
)
from vac.model_based import (
    NO_STOP,
    StopRule,
    critic_fixed_point,
    euclidean_grad_theta,
    fixed_point_residual_gap,
    grad_theta,
    grad_v,
    greedy_limit,
    mb_step,
    predicted_residual,
    residual_transform,
    run_model_based,
)
from vac.oracle import value_iteration

from conftest import random_policy


def eta(beta, **kw):
    return HyperParams(beta=beta, eta_v=1 / (4 * beta), eta_pi=1 / (4 * beta), **kw)


def central(f, x, h):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@given(st.floats(1e-9, 1e6))
def test_transforms_agree_for_positive(x):
    vals = [residual_transform(x, v) for v in ("vanilla", "clipping", "flipping")]
    assert vals[0] == vals[1] == vals[2] == x


def test_transform_values():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(residual_transform(x, "clipping"), [0, 0, 3])
    np.testing.assert_array_equal(residual_transform(x, "flipping"), [2, 0, 3])


def test_grad_v_zero_residual(rng, mdp3):
    pi, rho = random_policy(rng, 3, 2), rng.dirichlet(np.ones(3))
    p = HyperParams(beta=1.0, lam=0.2)
    np.testing.assert_allclose(grad_v(mdp3, policy_value(mdp3, pi, 0.2), pi, rho, p), -rho, atol=1e-12)


def test_grad_v_finite_difference(rng):
    for seed in range(10):
        mdp = random_mdp(4, 3, 0.9, seed)
        pi, rho, v = random_policy(rng, 4, 3), rng.dirichlet(np.ones(4)), rng.normal(size=4)
        p = HyperParams(beta=float(rng.uniform(1, 20)), lam=0.1)
        fd = central(lambda x: objective(mdp, x, pi, rho, p), v, 1e-5)
        np.testing.assert_allclose(grad_v(mdp, v, pi, rho, p), fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


def test_grad_theta_finite_difference(rng):
    for seed in range(10):
        mdp = random_mdp(4, 3, 0.9, seed)
        th, rho, v = rng.normal(size=(4, 3)), rng.dirichlet(np.ones(4)), rng.normal(size=4)
        p = HyperParams(beta=float(rng.uniform(1, 20)), lam=float(rng.choice([0, 0.2])), variant="vanilla")
        fd = central(lambda x: objective(mdp, v, policy_from_logits(x), rho, p), th, 1e-5)
        # remove the per-row constant direction, to which the objective is blind
        fd -= fd.mean(axis=1, keepdims=True)
        g = euclidean_grad_theta(mdp, v, th, rho, p)
        np.testing.assert_allclose(g - g.mean(axis=1, keepdims=True), fd, atol=1e-5 * np.abs(fd).max())


def test_fixed_point_matches_direct_solve(rng, mdp3):
    pi, rho = random_policy(rng, 3, 2), rng.dirichlet(np.ones(3))
    p = HyperParams(beta=7.0, lam=0.1)
    M = np.eye(3) - 0.9 * transition_under_policy(mdp3, pi)
    c = reward_under_policy(mdp3, pi) - 0.1 * neg_entropy(pi)
    D = np.diag(rho)
    # G_V = -rho + beta M^T D (M V - c) = 0
    v = np.linalg.solve(M.T @ D @ M, rho / p.beta + M.T @ D @ c)
    np.testing.assert_allclose(critic_fixed_point(mdp3, pi, rho, p), v, atol=1e-10)
    expected = np.linalg.solve(M, np.linalg.solve(M.T, rho) / rho) / p.beta
    np.testing.assert_allclose(v - policy_value(mdp3, pi, 0.1), expected, atol=1e-10)
    assert fixed_point_residual_gap(mdp3, v, pi, rho, p) < 1e-9
    assert np.all(predicted_residual(mdp3, pi, rho, p) > 0)


def test_residual_gap_brute_force(rng, mdp3):
    pi, rho, v = random_policy(rng, 3, 2), rng.dirichlet(np.ones(3)), rng.normal(size=3)
    p = HyperParams(beta=3.0)
    M = np.eye(3) - 0.9 * transition_under_policy(mdp3, pi)
    ref = np.abs(bellman_residual(mdp3, v, pi) - np.linalg.inv(M).T @ rho / (3.0 * rho)).max()
    assert fixed_point_residual_gap(mdp3, v, pi, rho, p) == pytest.approx(ref, rel=1e-10)


def _states_with_sign(mdp, pi, sign):
    v0 = policy_value(mdp, pi)
    return v0 + sign * 5.0


def test_variant_relations(rng, mdp3):
    pi, rho = random_policy(rng, 3, 2), uniform_rho(3)
    neg, pos = _states_with_sign(mdp3, pi, -1), _states_with_sign(mdp3, pi, +1)
    assert np.all(bellman_residual(mdp3, neg, pi) < 0) and np.all(bellman_residual(mdp3, pos, pi) > 0)
    p = HyperParams(beta=5.0)
    g = {v: grad_theta(mdp3, neg, pi, rho, p, v) for v in ("vanilla", "clipping", "flipping")}
    np.testing.assert_array_equal(g["clipping"], 0.0)
    np.testing.assert_array_equal(g["flipping"], -g["vanilla"])
    g = [grad_theta(mdp3, pos, pi, rho, p, v) for v in ("vanilla", "clipping", "flipping")]
    np.testing.assert_array_equal(g[0], g[1])
    np.testing.assert_array_equal(g[0], g[2])


def test_grad_theta_rejects_zero_prob_with_entropy(mdp3):
    with pytest.raises(InvalidInputError):
        grad_theta(mdp3, np.zeros(3), np.eye(2)[[0, 1, 0]], uniform_rho(3), HyperParams(lam=0.1))


def test_step_zero_rates(rng, mdp3):
    v, th = rng.normal(size=3), rng.normal(size=(3, 2))
    th -= th.max(axis=1, keepdims=True)
    p = HyperParams(eta_v=1e-300, eta_pi=1e-300)
    v2, th2 = mb_step((v, th), mdp3, uniform_rho(3), p)
    np.testing.assert_array_equal(v2, v)
    np.testing.assert_array_equal(th2, th)


def test_step_at_fixed_point(ring5):
    p = eta(10.0)
    rho = uniform_rho(5)
    acts = value_iteration(ring5).greedy_actions
    th = np.where(np.eye(2)[acts] > 0, 0.0, -800.0)
    _, pi, v = greedy_limit(ring5, th, rho, p)
    v2, th2 = mb_step((v, th), ring5, rho, p)
    np.testing.assert_allclose(v2, v, atol=1e-12)
    np.testing.assert_allclose(policy_from_logits(th2), pi, atol=1e-12)


def test_step_brute_force(ring5):
    p = eta(10.0)
    rho = uniform_rho(5)
    v2, th2 = mb_step((np.zeros(5), np.zeros((5, 2))), ring5, rho, p)
    P, r = ring5.transitions, ring5.rewards
    pi_new = np.zeros((5, 2))
    for s in range(5):
        ell = 0.0 - sum(0.5 * (r[s, a] + 0.95 * 0.0) for a in range(2))
        w = [0.5 * np.exp(-p.eta_pi * p.beta * 0.2 * ell * (-0.95 * 0.0 - r[s, a])) for a in range(2)]
        pi_new[s] = np.array(w) / sum(w)
    np.testing.assert_allclose(policy_from_logits(th2), pi_new, atol=1e-14)


@pytest.mark.parametrize("variant", ["vanilla", "clipping", "flipping"])
def test_kernels_match_reference_step(variant):
    mdp = random_mdp(4, 3, 0.9, 3)
    p = eta(5.0, lam=0.1, variant=variant)
    rho = np.array([0.1, 0.2, 0.3, 0.4])
    state = (np.zeros(4), np.zeros((4, 3)))
    for _ in range(300):
        state = mb_step(state, mdp, rho, p)
    tr = run_model_based(mdp, p, rho=rho, max_iters=300, stop=NO_STOP)
    np.testing.assert_allclose(tr.v, state[0], atol=1e-12)
    np.testing.assert_allclose(tr.policy, policy_from_logits(state[1]), atol=1e-12)


def test_two_action_kernel_matches_generic():
    mdp = ring_mdp(RingSpec(7, 0.0, 0.95))
    p = eta(10.0, lam=0.1)
    a = run_model_based(mdp, p, max_iters=5000, stop=NO_STOP, stride=100)
    b = run_model_based(mdp, p, max_iters=5000, stop=NO_STOP, stride=100, fast=False)
    np.testing.assert_allclose(a.v, b.v, atol=1e-10)
    np.testing.assert_allclose(a.rows, b.rows, atol=1e-9)


def test_ring5_flipping_converges(ring5):
    tr = run_model_based(ring5, eta(10.0), max_iters=30_000, stop=NO_STOP, stride=1000)
    assert tr.final_l1 < 1e-2


def test_vanilla_error_rises_under_negative_residual():
    mdp = random_mdp(5, 2, 0.9, 0)
    tr = run_model_based(mdp, eta(10.0, variant="vanilla"), max_iters=5000, stop=NO_STOP, stride=1)
    rising = np.diff(tr.l1_error) > 0
    assert np.any(rising & (tr.min_residual[:-1] < 0))


def test_iteration_contract(ring5):
    with pytest.raises(InvalidInputError):
        run_model_based(ring5, eta(10.0), max_iters=0)
    assert len(run_model_based(ring5, eta(10.0), max_iters=1)) == 1
    tr = run_model_based(ring5, eta(10.0), max_iters=95, stride=10, stop=NO_STOP)
    np.testing.assert_array_equal(tr.iters, [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 94])
    assert np.all(tr.l1_error >= 0) and np.all(tr.linf_error >= 0)


def test_divergence_carries_trace(ring5):
    p = HyperParams(beta=10.0, eta_v=5.0, eta_pi=0.01)
    with pytest.raises(DivergenceError) as exc:
        run_model_based(ring5, p, max_iters=10_000, stop=NO_STOP, stride=1)
    assert exc.value.trace is not None and len(exc.value.trace) > 0


@pytest.mark.parametrize("seed", range(5))
def test_vanilla_descends(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(4, 2, 0.9, seed)
    p = eta(float(rng.uniform(2, 20)), variant="vanilla")
    rho = uniform_rho(4)
    state = (rng.normal(size=4), rng.normal(size=(4, 2)))
    e = objective(mdp, state[0], policy_from_logits(state[1]), rho, p)
    for _ in range(2000):
        state = mb_step(state, mdp, rho, p)
        e_new = objective(mdp, state[0], policy_from_logits(state[1]), rho, p)
        assert e_new <= e + 1e-9
        e = e_new


def test_stop_rule_fires_with_entropy(ring5):
    tr = run_model_based(ring5, eta(10.0, lam=0.5), max_iters=500_000, stop=StopRule(tol=1e-9), stride=1000)
    assert tr.status in ("converged", "greedy_stable")
    assert tr.n_iters < 500_000
