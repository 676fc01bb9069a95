import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import softmax

from vac.errors import InvalidInputError
from vac.instances import random_mdp
from vac.mdp import FiniteMdp, neg_entropy, policy_value, reward_under_policy, transition_under_policy
from vac.oracle import (
    action_gap,
    beta_threshold,
    kl_rows,
    one_hot,
    q_values,
    soft_value_iteration,
    solve,
    value_iteration,
)

from conftest import bandit, random_policy


def best_by_enumeration(mdp):
    vals = []
    for acts in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        vals.append((policy_value(mdp, one_hot(acts, mdp.n_actions)), acts))
    v, acts = max(vals, key=lambda x: x[0].sum())
    return v, np.array(acts)


def test_myopic_limit(rng):
    mdp = random_mdp(4, 3, 1e-9, 3)
    sol = value_iteration(mdp)
    np.testing.assert_array_equal(sol.greedy_actions, mdp.rewards.argmax(axis=1))
    np.testing.assert_allclose(sol.v_star, mdp.rewards.max(axis=1), atol=1e-8)


def test_geometric_series():
    np.testing.assert_allclose(value_iteration(bandit([1.0])).v_star, [2.0], atol=1e-9)


def test_enumeration_4x3():
    mdp = random_mdp(4, 3, 0.9, 0)
    sol = value_iteration(mdp)
    v, acts = best_by_enumeration(mdp)
    np.testing.assert_allclose(sol.v_star, v, atol=1e-8)
    np.testing.assert_array_equal(sol.greedy_actions, acts)


def test_soft_bandit():
    sol = soft_value_iteration(bandit([1.0, 0.0], gamma=1e-9), 1.0)
    e = np.e
    np.testing.assert_allclose(sol.pi_star, [[e / (1 + e), 1 / (1 + e)]], atol=1e-8)


def test_soft_large_lambda():
    sol = soft_value_iteration(random_mdp(3, 3, 0.9, 1), 1e6)
    np.testing.assert_allclose(sol.pi_star, 1 / 3, atol=1e-5)


def test_soft_rejects_zero_lambda():
    with pytest.raises(InvalidInputError):
        soft_value_iteration(random_mdp(2, 2, 0.9, 1), 0.0)


@given(st.integers(0, 10_000), st.sampled_from([0.01, 0.1, 1.0]))
def test_soft_sandwich(seed, lam):
    mdp = random_mdp(3, 3, 0.8, seed)
    d = solve(mdp, lam).v_star - solve(mdp).v_star
    # for small lam the gap is ~exp(-gap/lam), below double precision
    assert np.all(d > 0) if lam >= 0.1 else np.all(d >= -1e-9)
    assert np.all(d <= lam * np.log(3) / 0.2 + 1e-8)


def test_soft_coupled_system(rng):
    mdp, lam = random_mdp(4, 3, 0.9, 2), 0.3
    sol = soft_value_iteration(mdp, lam, tol=1e-12)
    target = softmax(q_values(mdp, sol.v_star) / lam, axis=1)
    assert kl_rows(target, sol.pi_star).max() < 1e-8
    assert np.all(sol.pi_star > 0)
    np.testing.assert_allclose(sol.v_star, policy_value(mdp, sol.pi_star, lam), atol=1e-8)


def test_optimality_equation_and_dominance(rng):
    tol = 1e-10
    for seed in range(5):
        mdp = random_mdp(5, 3, 0.9, seed)
        sol = value_iteration(mdp, tol)
        rhs = reward_under_policy(mdp, sol.pi_star) + 0.9 * transition_under_policy(mdp, sol.pi_star) @ sol.v_star
        assert np.abs(sol.v_star - rhs).max() <= 2 * tol
        for _ in range(50):
            assert np.all(sol.v_star >= policy_value(mdp, random_policy(rng, 5, 3)) - 1e-9)


def test_action_gap_cases():
    assert action_gap(bandit([1.0, 0.0], 1e-9), [1.0]) == pytest.approx(1.0, abs=1e-8)
    P = np.stack([np.eye(2), np.eye(2)])
    dup = FiniteMdp(P, np.ones((2, 2)), 0.9)
    assert action_gap(dup, value_iteration(dup).v_star) == 0.0
    mdp = random_mdp(5, 3, 0.9, 4)
    v = value_iteration(mdp).v_star
    ref = np.inf
    for s in range(5):
        qs = [mdp.rewards[s, a] + 0.9 * sum(mdp.transitions[a, s, t] * v[t] for t in range(5)) for a in range(3)]
        best = max(qs)
        second = max(q for i, q in enumerate(qs) if i != int(np.argmax(qs)))
        ref = min(ref, best - second)
    assert action_gap(mdp, v) == pytest.approx(ref, abs=1e-12)


def test_beta_threshold_values():
    mdp = random_mdp(5, 2, 0.9, 0)
    assert beta_threshold(mdp, 0.1) == pytest.approx(5000.0)
    assert beta_threshold(mdp, 0.1, rho=np.full(5, 0.2)) == pytest.approx(5000.0)
    mdp2 = random_mdp(2, 2, 0.5, 0)
    assert beta_threshold(mdp2, 0.2, rho=[0.7, 0.3]) == pytest.approx(66.667, abs=1e-3)
    with pytest.raises(InvalidInputError):
        beta_threshold(mdp, 0.5, gap=0.9)


def test_digest_stable():
    a = solve(random_mdp(3, 2, 0.9, 0))
    b = solve(random_mdp(3, 2, 0.9, 0))
    assert a.digest() == b.digest()


def test_entropy_convention_onehot():
    np.testing.assert_array_equal(neg_entropy(one_hot([0, 1], 2)), 0.0)
