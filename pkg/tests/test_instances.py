import numpy as np
import pytest
from hypothesis import given, strategies as st

from vac.errors import InvalidInputError
from vac.instances import (
    RingSpec,
    TorusSpec,
    random_mdp,
    ring_mdp,
    ring_sample,
    torus_mdp,
    torus_sample,
    wrapped_bins,
)
from vac.oracle import value_iteration


def test_ring_wraps(ring5):
    assert ring5.transitions[0, 4, 0] == 1.0
    assert ring5.transitions[1, 0, 4] == 1.0
    np.testing.assert_array_equal(ring5.rewards[0], [1.0, 1.0])


def test_ring_sigma0_is_permutation():
    for n in (2, 5, 9):
        P = ring_mdp(RingSpec(n)).transitions
        for a in range(2):
            np.testing.assert_array_equal(P[a].sum(axis=0), 1.0)
            assert set(np.unique(P[a])) == {0.0, 1.0}


def _mc_check(P, sampler, n_states, actions, n=1_000_000, seed=0):
    rng = np.random.default_rng(seed)
    for a in actions:
        for s in (0, n_states // 2):
            draws = sampler(np.full(n, s), np.full(n, a), rng)
            freq = np.bincount(draws, minlength=n_states) / n
            p = P[a, s]
            # cells expecting fewer than 5 hits are pooled so the normal band applies
            rare = p * n < 5
            freq = np.append(freq[~rare], freq[rare].sum())
            p = np.append(p[~rare], p[rare].sum())
            se = np.sqrt(p * (1 - p) / n)
            assert np.all(np.abs(freq - p) <= 3 * se + 1e-12), (a, s)


@pytest.mark.slow
def test_ring_monte_carlo():
    spec = RingSpec(10, 1.0)
    mdp = ring_mdp(spec)
    np.testing.assert_allclose(mdp.transitions.sum(axis=2), 1.0, atol=1e-12)
    _mc_check(mdp.transitions, lambda s, a, g: ring_sample(spec, s, a, g), 10, (0, 1))


@pytest.mark.slow
def test_torus_monte_carlo():
    spec = TorusSpec(7, 7, 0.1)
    mdp = torus_mdp(spec)
    np.testing.assert_allclose(mdp.transitions.sum(axis=2), 1.0, atol=1e-12)
    _mc_check(mdp.transitions, lambda s, a, g: torus_sample(spec, s, a, g), 49, range(4))


def test_torus_rewards_and_moves():
    mdp = torus_mdp(TorusSpec(4, 6))
    assert mdp.rewards[0, 0] == 3.0
    assert mdp.rewards.min() >= 0 and mdp.rewards.max() <= 4
    # state (0,0), action (0,+1) -> (0,1)
    assert mdp.transitions[2, 0, 1] == 1.0
    # (3,5) + (1,0) wraps to (0,5)
    assert mdp.transitions[0, 3 * 6 + 5, 5] == 1.0


def test_wrapped_bins_half_up():
    np.testing.assert_array_equal(wrapped_bins(2.0, 0.0, 5), np.eye(5)[2])
    np.testing.assert_array_equal(wrapped_bins(4.5, 0.0, 5), np.eye(5)[0])
    p = wrapped_bins(0.0, 0.5, 6)
    assert p.sum() == pytest.approx(1.0, abs=1e-14)
    assert p[1] == pytest.approx(p[5], abs=1e-14)


def test_specs_validate():
    with pytest.raises(InvalidInputError):
        RingSpec(1)
    with pytest.raises(InvalidInputError):
        RingSpec(5, -0.1)
    with pytest.raises(InvalidInputError):
        TorusSpec(1, 4)


@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**31))
def test_random_mdp_rows(S, A, seed):
    mdp = random_mdp(S, A, 0.9, seed)
    assert np.all(mdp.transitions >= 0)
    np.testing.assert_allclose(mdp.transitions.sum(axis=2), 1.0, atol=1e-12)


def test_random_mdp_deterministic():
    a, b = random_mdp(4, 3, 0.9, 11), random_mdp(4, 3, 0.9, 11)
    np.testing.assert_array_equal(a.transitions, b.transitions)
    np.testing.assert_array_equal(a.rewards, b.rewards)
    assert a.digest() == b.digest()
    assert random_mdp(4, 3, 0.9, 12).digest() != a.digest()


def test_single_action_policy():
    sol = value_iteration(random_mdp(3, 1, 0.9, 5))
    np.testing.assert_array_equal(sol.pi_star, 1.0)
