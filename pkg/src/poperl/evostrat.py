"""Gaussian ES with rank-weighted recombination and target-actor injection.

The population is ``theta_i = mean + sigma * eps_i``.  After fitness
evaluation, a parent set of size ``K + 1`` is chosen by one of three
strategies that differ only in how the RL target actor enters it, and the
mean moves by ``sigma * sum_j w_j * eps_j``.  The target participates
through its fake noise ``(theta - mean) / sigma``.

``param_noise`` is the degenerate variant whose mean is pinned to the target.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, SequencingError

STRATEGIES = ("normal", "always", "always_first", "param_noise")
TARGET_ID = -1


def recombination_weights(k_hat: int) -> np.ndarray:
    """``w_i ∝ log(k_hat + 0.5) - log(i)`` for ranks ``i = 1..k_hat``, normalized to sum 1."""
    if k_hat < 1:
        raise DomainError(f"need at least one parent, got k_hat={k_hat}")
    raw = np.log(k_hat + 0.5) - np.log(np.arange(1, k_hat + 1))
    return raw / raw.sum()


@dataclass
class ParentSet:
    ids: list[int]            # population index, or TARGET_ID for the target actor
    noises: list[np.ndarray]
    fitnesses: list[float]

    def __len__(self):
        return len(self.ids)

    def rank_of_target(self) -> int | None:
        """1-based rank of the target actor, or None when it was not selected."""
        return self.ids.index(TARGET_ID) + 1 if TARGET_ID in self.ids else None


@dataclass
class PopulationState:
    mean: np.ndarray
    sigma: float = 0.01
    n: int = 10
    k: int = 5
    strategy: str = "always"
    noises: np.ndarray | None = None       # (n, dim) draws of the current iteration
    fitnesses: np.ndarray | None = None    # (n,)
    target_noise: np.ndarray | None = None
    target_fitness: float | None = None
    iteration: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown ES strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.n < 1 or not 1 <= self.k <= self.n:
            raise ConfigError(f"need 1 <= K <= N, got N={self.n}, K={self.k}")
        self.mean = np.array(self.mean, dtype=np.float64)

    def individual(self, i: int) -> np.ndarray:
        return self.mean + self.sigma * self.noises[i]


def sample_population(pop: PopulationState, rng: np.random.Generator) -> list[np.ndarray]:
    """Draw fresh standard-normal noises and return the ``n`` individuals."""
    pop.noises = rng.standard_normal((pop.n, pop.mean.size))
    pop.fitnesses = None
    pop.target_noise = None
    pop.target_fitness = None
    return [pop.individual(i) for i in range(pop.n)]


def set_fitness(pop: PopulationState, fitnesses, target_params: np.ndarray, target_fitness: float):
    """Record this iteration's fitnesses and the target's fake noise."""
    if pop.noises is None:
        raise SequencingError("set_fitness called before sample_population")
    f = np.asarray(fitnesses, dtype=float)
    if f.shape != (pop.n,):
        raise ConfigError(f"expected {pop.n} fitnesses, got shape {f.shape}")
    pop.fitnesses = f
    pop.target_fitness = float(target_fitness)
    pop.target_noise = (np.asarray(target_params, dtype=float) - pop.mean) / pop.sigma


def _pop_order(f: np.ndarray) -> list[int]:
    # descending fitness; ties keep ascending index (stable sort on -f)
    return [int(i) for i in np.argsort(-f, kind="stable")]


def select_parents(pop: PopulationState, strategy: str | None = None) -> ParentSet:
    strategy = pop.strategy if strategy is None else strategy
    if strategy == "param_noise":
        return ParentSet([], [], [])
    if pop.fitnesses is None or pop.target_fitness is None or pop.target_noise is None:
        raise SequencingError("fitnesses for this iteration are missing")
    f, ft = pop.fitnesses, pop.target_fitness
    order = _pop_order(f)
    if strategy == "normal":
        # the target loses ties, so it goes after every member with f >= ft
        pos = sum(1 for i in order if f[i] >= ft)
        merged = order[:pos] + [TARGET_ID] + order[pos:]
        ids = merged[: pop.k + 1]
    elif strategy == "always":
        top = order[: pop.k]
        pos = sum(1 for i in top if f[i] >= ft)
        ids = top[:pos] + [TARGET_ID] + top[pos:]
    elif strategy == "always_first":
        ids = [TARGET_ID] + order[: pop.k]
    else:
        raise ConfigError(f"unknown ES strategy {strategy!r}")
    noises = [pop.target_noise if i == TARGET_ID else pop.noises[i] for i in ids]
    fits = [ft if i == TARGET_ID else float(f[i]) for i in ids]
    return ParentSet(ids, noises, fits)


def es_update(pop: PopulationState, parents: ParentSet, target_params: np.ndarray | None = None) -> np.ndarray:
    """Move the mean by ``sigma * sum_j w_j eps_j``; param_noise copies the target instead."""
    if pop.strategy == "param_noise":
        if target_params is None:
            raise SequencingError("param_noise update needs the current target parameters")
        pop.mean = np.array(target_params, dtype=np.float64)
    elif len(parents):
        w = recombination_weights(len(parents))
        step = np.zeros_like(pop.mean)
        for wj, eps in zip(w, parents.noises):
            step += wj * eps
        pop.mean = pop.mean + pop.sigma * step
    pop.iteration += 1
    return pop.mean


def action_discrepancy(target_policy, individual_policy, states) -> float:
    """Mean over visited states of the per-dimension mean squared action gap.

    ``states`` are the states of the individual's own trajectory (a
    Trajectory or an array ``(T, state_dim)``); both policies are evaluated
    without exploration noise and must accept a batch of states.
    """
    S = getattr(states, "states", states)
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or len(S) == 0:
        raise DomainError("action discrepancy needs a non-empty trajectory")
    a = np.asarray(target_policy(S), dtype=float)
    b = np.asarray(individual_policy(S), dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"policies disagree on action shape: {a.shape} vs {b.shape}")
    d = (a - b) ** 2
    return float(np.mean(d.reshape(len(S), -1).mean(axis=1)))
