"""Benchmark MDPs: the noisy 1-D ring, the 2-D torus and seeded random instances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import GenerationError, InvalidInputError
from .mdp import FiniteMdp, Geometry

TRUNCATION = 8.0
MAX_RETRIES = 100


@dataclass(frozen=True)
class RingSpec:
    n: int
    sigma: float = 0.0
    gamma: float = 0.95

    def __post_init__(self):
        if int(self.n) < 2:
            raise InvalidInputError(f"ring needs n >= 2, got {self.n}")
        if not self.sigma >= 0:
            raise InvalidInputError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 < self.gamma < 1:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {self.gamma}")


@dataclass(frozen=True)
class TorusSpec:
    n1: int
    n2: int
    sigma: float = 0.0
    gamma: float = 0.95

    def __post_init__(self):
        if int(self.n1) < 2 or int(self.n2) < 2:
            raise InvalidInputError(f"torus needs n1, n2 >= 2, got {self.n1}x{self.n2}")
        if not self.sigma >= 0:
            raise InvalidInputError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 < self.gamma < 1:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {self.gamma}")


RING_MOVES = np.array([[1], [-1]])
TORUS_MOVES = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])


def wrapped_bins(mean: float, sigma: float, n: int) -> np.ndarray:
    """Distribution of round(mean + sigma Z) mod n, rounding half up.

    Each integer j collects the normal mass on [j - 1/2, j + 1/2); the
    support is truncated at +-8 sigma and renormalized.
    """
    out = np.zeros(n)
    if sigma == 0:
        out[int(np.floor(mean + 0.5)) % n] = 1.0
        return out
    lo = int(np.floor(mean - TRUNCATION * sigma + 0.5))
    hi = int(np.floor(mean + TRUNCATION * sigma + 0.5))
    j = np.arange(lo, hi + 1)
    mass = ndtr((j + 0.5 - mean) / sigma) - ndtr((j - 0.5 - mean) / sigma)
    np.add.at(out, j % n, mass)
    return out / out.sum()


def ring_reward(n: int) -> np.ndarray:
    return 1.0 + np.sin(2 * np.pi * np.arange(n) / n)


def ring_mdp(spec: RingSpec) -> FiniteMdp:
    """States 0..n-1 on a circle; action 0 steps +1, action 1 steps -1."""
    n = int(spec.n)
    P = np.empty((2, n, n))
    for a, (step,) in enumerate(RING_MOVES):
        for k in range(n):
            P[a, k] = wrapped_bins(k + step, spec.sigma, n)
    r = np.repeat(ring_reward(n)[:, None], 2, axis=1)
    return FiniteMdp(P, r, spec.gamma, Geometry((n,), RING_MOVES))


def ring_sample(spec: RingSpec, s, a, rng: np.random.Generator) -> np.ndarray:
    """Draw next states by the literal noisy-move-then-round rule."""
    s, a = np.asarray(s), np.asarray(a)
    x = s + RING_MOVES[a, 0] + spec.sigma * rng.standard_normal(np.broadcast(s, a).shape)
    return np.floor(np.mod(x, spec.n) + 0.5).astype(np.int64) % spec.n


def torus_reward(n1: int, n2: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    return (2 + np.sin(2 * np.pi * i / n1) + np.cos(2 * np.pi * j / n2)).ravel()


def torus_mdp(spec: TorusSpec) -> FiniteMdp:
    """Row-major grid index i*n2 + j; the move (1 + sigma Z) a is rounded per coordinate."""
    n1, n2 = int(spec.n1), int(spec.n2)
    S = n1 * n2
    geo = Geometry((n1, n2), TORUS_MOVES)
    P = np.zeros((4, S, S))
    for a, (di, dj) in enumerate(TORUS_MOVES):
        for s in range(S):
            i, j = divmod(s, n2)
            if di:
                col = wrapped_bins(i + di, spec.sigma, n1)
                P[a, s, np.arange(n1) * n2 + j] = col
            else:
                row = wrapped_bins(j + dj, spec.sigma, n2)
                P[a, s, i * n2 + np.arange(n2)] = row
    r = np.repeat(torus_reward(n1, n2)[:, None], 4, axis=1)
    return FiniteMdp(P, r, spec.gamma, geo)


def torus_sample(spec: TorusSpec, s, a, rng: np.random.Generator) -> np.ndarray:
    s, a = np.asarray(s), np.asarray(a)
    shape = np.broadcast(s, a).shape
    i, j = np.divmod(s, spec.n2)
    mv = TORUS_MOVES[a]
    z = 1 + spec.sigma * rng.standard_normal(shape)
    x = np.floor(np.mod(i + z * mv[..., 0], spec.n1) + 0.5).astype(np.int64) % spec.n1
    y = np.floor(np.mod(j + z * mv[..., 1], spec.n2) + 0.5).astype(np.int64) % spec.n2
    return x * spec.n2 + y


def _random_candidate(n_states, n_actions, gamma, rng):
    P = rng.uniform(size=(n_actions, n_states, n_states))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(size=(n_states, n_actions))
    return FiniteMdp(P, r, gamma)


def random_mdp(n_states: int, n_actions: int, gamma: float = 0.9, seed: int = 0) -> FiniteMdp:
    """Dense random MDP with a strictly positive action gap.

    Candidates are drawn from sub-seeds (seed, 0), (seed, 1), ... until the
    gap is positive.
    """
    from .oracle import action_gap, value_iteration

    if n_states < 1 or n_actions < 1:
        raise InvalidInputError("n_states and n_actions must be >= 1")
    for sub in range(MAX_RETRIES):
        mdp = _random_candidate(n_states, n_actions, gamma, np.random.default_rng([seed, sub]))
        if n_actions == 1:
            return mdp
        if action_gap(mdp, value_iteration(mdp).v_star) > 0:
            return mdp
    raise GenerationError(f"no positive-gap MDP after {MAX_RETRIES} retries (seed {seed})")
