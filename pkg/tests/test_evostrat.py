import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poperl.errors import ConfigError, DomainError, SequencingError
from poperl.evostrat import (
    TARGET_ID,
    PopulationState,
    action_discrepancy,
    es_update,
    recombination_weights,
    sample_population,
    select_parents,
    set_fitness,
)

from oracles import recombination_weights_loop


def test_weights_k1():
    assert recombination_weights(1).tolist() == [1.0]


def test_weights_k3_hand_computed():
    # log(3.5) - log(i) for i = 1, 2, 3 -> 1.252763, 0.559616, 0.154151; sum 1.966529
    np.testing.assert_allclose(recombination_weights(3), [0.637043, 0.284570, 0.078387], atol=1e-6)


@pytest.mark.parametrize("k_hat", range(1, 21))
def test_weights_normalized_decreasing(k_hat):
    w = recombination_weights(k_hat)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.all(w > 0) and np.all(np.diff(w) < 0)
    np.testing.assert_allclose(w, recombination_weights_loop(k_hat), rtol=1e-13)


def test_weights_domain():
    with pytest.raises(DomainError):
        recombination_weights(0)


def pop_with(fits, target_fit, k=5, strategy="always", dim=3, seed=0):
    pop = PopulationState(np.zeros(dim), sigma=0.01, n=len(fits), k=k, strategy=strategy)
    sample_population(pop, np.random.default_rng(seed))
    set_fitness(pop, fits, np.full(dim, 0.02), target_fit)
    return pop


def test_always_inserts_target_by_fitness():
    fits = [5, 4, 3, 2, 1, 0, -1, -2, -3, -4]
    ps = select_parents(pop_with(fits, 3.5), "always")
    assert ps.fitnesses == [5, 4, 3.5, 3, 2, 1]
    assert ps.ids == [0, 1, TARGET_ID, 2, 3, 4]


def test_always_first_with_worst_target():
    fits = [5, 4, 3, 2, 1, 0, -1, -2, -3, -4]
    ps = select_parents(pop_with(fits, -100.0), "always_first")
    assert ps.rank_of_target() == 1 and len(ps) == 6
    assert ps.fitnesses[1:] == [5, 4, 3, 2, 1]


def test_normal_may_drop_target():
    fits = [5, 4, 3, 2, 1, 0, -1, -2, -3, -4]
    ps = select_parents(pop_with(fits, -100.0), "normal")
    assert ps.rank_of_target() is None and ps.ids == [0, 1, 2, 3, 4, 5]


def test_normal_equals_always_first_when_target_best():
    fits = list(np.random.default_rng(1).normal(size=10))
    pop = pop_with(fits, 99.0)
    a, b = select_parents(pop, "normal"), select_parents(pop, "always_first")
    assert a.ids == b.ids
    assert all(np.array_equal(x, y) for x, y in zip(a.noises, b.noises))


def test_target_loses_ties():
    fits = [3.0, 3.0, 1.0, 0.0, -1.0]
    pop = pop_with(fits, 3.0, k=2)
    assert select_parents(pop, "normal").ids == [0, 1, TARGET_ID]
    assert select_parents(pop, "always").ids == [0, 1, TARGET_ID]
    pop2 = pop_with([1.0, 3.0, 3.0, 0.0], 0.5, k=3)
    assert select_parents(pop2, "always").ids == [1, 2, 0, TARGET_ID]


def test_parents_use_fake_target_noise():
    pop = pop_with([1.0] * 10, 9.0)
    ps = select_parents(pop, "always")
    np.testing.assert_allclose(ps.noises[0], (np.full(3, 0.02) - pop.mean) / pop.sigma)


def test_param_noise_empty_parents_and_copy():
    pop = pop_with([1.0] * 10, 0.0, strategy="param_noise")
    assert len(select_parents(pop)) == 0
    theta = np.array([1.0, 2.0, 3.0])
    es_update(pop, select_parents(pop), theta)
    assert np.array_equal(pop.mean, theta)
    theta[0] = 7.0
    assert pop.mean[0] == 1.0


def test_missing_fitness_is_sequencing_error():
    pop = PopulationState(np.zeros(2), n=4, k=2)
    sample_population(pop, np.random.default_rng(0))
    with pytest.raises(SequencingError):
        select_parents(pop)
    with pytest.raises(ConfigError):
        PopulationState(np.zeros(2), n=4, k=5)
    with pytest.raises(ConfigError):
        PopulationState(np.zeros(2), strategy="elitist")


@settings(max_examples=200, deadline=None)
@given(fits=st.lists(st.floats(-10, 10), min_size=2, max_size=12), ft=st.floats(-12, 12), data=st.data())
def test_strategy_rank_monotonicity(fits, ft, data):
    k = data.draw(st.integers(1, len(fits)))
    pop = pop_with(fits, ft, k=k)
    inf = len(fits) + 2
    r = {s: select_parents(pop, s).rank_of_target() or inf for s in ("normal", "always", "always_first")}
    assert r["always_first"] <= r["always"] <= r["normal"]
    for s in ("normal", "always", "always_first"):
        assert len(select_parents(pop, s)) == k + 1


@settings(max_examples=100, deadline=None)
@given(fits=st.lists(st.floats(-10, 10), min_size=6, max_size=6), ft=st.floats(-12, 12))
def test_selection_against_brute_force_sort(fits, ft):
    pop = pop_with(fits, ft, k=3)
    # oracle: python sort with explicit tie-break keys
    entries = [(-f, 0, i) for i, f in enumerate(fits)] + [(-ft, 1, TARGET_ID)]
    assert select_parents(pop, "normal").ids == [e[2] for e in sorted(entries)][:4]
    top = [e for e in sorted(entries) if e[2] != TARGET_ID][:3]
    assert select_parents(pop, "always").ids == [e[2] for e in sorted(top + [(-ft, 1, TARGET_ID)])]


def test_reconstruction_bit_exact():
    pop = PopulationState(np.random.default_rng(0).normal(size=50), sigma=0.01, n=10, k=5)
    inds = sample_population(pop, np.random.default_rng(1))
    for i, th in enumerate(inds):
        assert (pop.mean + pop.sigma * pop.noises[i]).tobytes() == th.tobytes()
        assert pop.individual(i).tobytes() == th.tobytes()


def test_sample_population_std():
    pop = PopulationState(np.zeros(20), sigma=0.01, n=1000, k=5)
    inds = np.array(sample_population(pop, np.random.default_rng(2)))
    std = (inds - pop.mean).std(axis=0)
    assert np.all(np.abs(std / 0.01 - 1) < 0.05)


def test_es_update_single_parent_and_zero_noise():
    pop = PopulationState(np.ones(3), sigma=0.1, n=2, k=1)
    from poperl.evostrat import ParentSet
    eps = np.array([1.0, -2.0, 0.5])
    es_update(pop, ParentSet([0], [eps], [1.0]))
    np.testing.assert_allclose(pop.mean, np.ones(3) + 0.1 * eps)
    before = pop.mean.copy()
    es_update(pop, ParentSet([0, 1], [np.zeros(3), np.zeros(3)], [1.0, 0.0]))
    assert np.array_equal(pop.mean, before)


def run_sphere(seed, iters=200, dim=10, sigma=0.05):
    """ES on f(theta) = -||theta - theta*||^2 with the mean itself as the 'target'."""
    rng = np.random.default_rng(seed)
    theta_star = rng.normal(size=dim)
    pop = PopulationState(theta_star + 20.0 / np.sqrt(dim), sigma=sigma, n=10, k=5, strategy="normal")
    f = lambda th: -float(np.sum((th - theta_star) ** 2))
    dists = [np.linalg.norm(pop.mean - theta_star)]
    for _ in range(iters):
        inds = sample_population(pop, rng)
        set_fitness(pop, [f(t) for t in inds], pop.mean.copy(), f(pop.mean))
        es_update(pop, select_parents(pop))
        dists.append(np.linalg.norm(pop.mean - theta_star))
    return np.array(dists)


def test_sphere_median_distance_decreases():
    curves = np.array([run_sphere(s) for s in range(5)])
    med = np.median(curves, axis=0)
    checkpoints = med[::25]
    assert np.all(np.diff(checkpoints) < 0)
    assert med[-1] < med[0]


def test_action_discrepancy():
    S = np.random.default_rng(0).normal(size=(7, 3))
    f = lambda s: np.tanh(s[:, :2])
    assert action_discrepancy(f, f, S) == 0.0
    assert action_discrepancy(lambda s: np.zeros((len(s), 1)), lambda s: np.full((len(s), 1), 0.5), S) == 0.25
    with pytest.raises(DomainError):
        action_discrepancy(f, f, np.zeros((0, 3)))


def test_action_discrepancy_matches_loop():
    rng = np.random.default_rng(1)
    S = rng.normal(size=(11, 4))
    A, B = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    mu, b = (lambda s: np.tanh(s @ A)), (lambda s: np.tanh(s @ B))
    total = 0.0
    for s in S:
        x, y = np.tanh(s @ A), np.tanh(s @ B)
        total += sum((x[j] - y[j]) ** 2 for j in range(3)) / 3
    assert abs(action_discrepancy(mu, b, S) - total / len(S)) <= 1e-12
