import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import belief_value, random_mdp, tiger
from polca import solvers
from polca.abstraction import ClusterMap, project_model


def flat(model, mode="mdp"):
    return project_model(model, ClusterMap.singletons(model.n_states), mode=mode)


def test_greedy_breaks_ties_toward_lowest_index():
    q = np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 1.0]])
    assert solvers.greedy(q).tolist() == [1, 0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 4), st.integers(1, 3))
def test_value_iteration_matches_best_policy_by_enumeration(seed, n, n_actions):
    m = random_mdp(np.random.default_rng(seed), n, n_actions, duplicate=False)
    cm = flat(m)
    vf = solvers.value_iterate(cm, tolerance=1e-11)
    best = np.full(n, -np.inf)
    for pol in itertools.product(range(n_actions), repeat=n):
        best = np.maximum(best, solvers.evaluate_policy(cm, np.array(pol)))
    np.testing.assert_allclose(vf.values, best, atol=1e-8)
    assert vf.residual <= 1e-9


def test_value_iteration_validates_arguments():
    cm = flat(random_mdp(np.random.default_rng(0), 3, 2))
    with pytest.raises(ValueError):
        solvers.value_iterate(cm, gamma=1.0)
    with pytest.raises(ValueError):
        solvers.value_iterate(cm, tolerance=0)


def test_extracted_policy_is_optimal():
    m = random_mdp(np.random.default_rng(3), 8, 3)
    cm = flat(m)
    vf = solvers.value_iterate(cm, tolerance=1e-12)
    pol = solvers.extract_policy(cm, vf)
    np.testing.assert_allclose(solvers.evaluate_policy(cm, pol), vf.values, atol=1e-8)


# -- pruning


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 5), st.integers(1, 40))
def test_prune_preserves_the_upper_surface(seed, dim, k):
    rng = np.random.default_rng(seed)
    vecs = rng.normal(size=(k, dim))
    kept, _ = solvers.prune(vecs)
    beliefs = np.vstack([np.eye(dim), rng.dirichlet(np.ones(dim), size=2000)])
    np.testing.assert_allclose((beliefs @ kept.T).max(1), (beliefs @ vecs.T).max(1), atol=1e-9)
    # nothing kept is redundant: each survivor wins somewhere against the rest
    for i in range(len(kept)):
        others = np.delete(kept, i, axis=0)
        if len(others):
            margin, _ = solvers._lp_witness(kept[i], others)
            assert margin > 0


def test_prune_drops_dominated_and_duplicate_vectors():
    vecs = np.array([[1.0, 0.0], [0.0, 1.0], [0.4, 0.4], [1.0, 0.0], [0.6, 0.6]])
    kept, acts = solvers.prune(vecs, np.arange(5))
    assert sorted(map(tuple, kept)) == [(0.0, 1.0), (0.6, 0.6), (1.0, 0.0)]
    assert 2 not in acts and 3 not in acts


def test_sample_prune_keeps_a_subset():
    rng = np.random.default_rng(1)
    vecs = rng.normal(size=(30, 3))
    kept, _ = solvers.prune(vecs, method="sample", rng=np.random.default_rng(0))
    assert all(any(np.array_equal(k, v) for v in vecs) for k in kept)


def test_merged_joints_sum_proportional_observations():
    a = np.array([[0.2, 0.1], [0.0, 0.3]])
    joint = np.stack([a, 2 * a, np.array([[0.1, 0.0], [0.0, 0.1]])])[None]
    merged = solvers.merged_joints(joint)
    assert len(merged[0]) == 2
    np.testing.assert_allclose(merged[0][0], 3 * a)


# -- exact POMDP solving


@pytest.mark.parametrize("horizon", [1, 2, 3, 4])
def test_tiger_finite_horizon_matches_belief_recursion(horizon):
    m = tiger()
    cm = flat(m, "pomdp")
    avs = solvers.solve_pomdp_exact(cm, horizon=horizon)
    rng = np.random.default_rng(horizon)
    for b in [np.array([0.5, 0.5]), np.array([0.9, 0.1]), *rng.dirichlet([1, 1], size=5)]:
        assert avs.value(b) == pytest.approx(belief_value(m, b, horizon), abs=1e-9)


def test_tiger_one_step_values():
    avs = solvers.solve_pomdp_exact(flat(tiger(), "pomdp"), horizon=1)
    assert avs.value(np.array([0.5, 0.5])) == pytest.approx(-1.0)
    assert avs.value(np.array([1.0, 0.0])) == pytest.approx(10.0)
    assert tiger().actions[avs.action(np.array([0.5, 0.5]))] == "listen"


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 100_000))
def test_random_pomdp_finite_horizon_matches_recursion(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, 3, 2, n_obs=2, duplicate=False)
    avs = solvers.solve_pomdp_exact(flat(m, "pomdp"), horizon=3)
    for b in rng.dirichlet(np.ones(3), size=4):
        assert avs.value(b) == pytest.approx(belief_value(m, b, 3), abs=1e-8)


@pytest.fixture(scope="module")
def tiger_solution():
    cm = flat(tiger(), "pomdp")
    return cm, solvers.solve_pomdp_exact(cm, tolerance=1e-6)


def test_tiger_infinite_horizon_converges(tiger_solution):
    cm, avs = tiger_solution
    assert avs.converged
    beliefs = solvers.sample_beliefs(2)
    assert solvers.pomdp_bellman_residual(cm, avs, beliefs) <= 1e-6
    # the value is symmetric in the two doors
    b = np.array([0.3, 0.7])
    assert avs.value(b) == pytest.approx(avs.value(b[::-1]), abs=1e-6)


def test_qmdp_bounds_the_exact_value_from_above(tiger_solution):
    cm, avs = tiger_solution
    qt = solvers.qmdp_solve(cm)
    for b in solvers.sample_beliefs(2, n_random=50):
        assert float((b @ qt.q).max()) >= avs.value(b) - 1e-6


def test_point_based_solution_is_a_certified_lower_bound(tiger_solution):
    cm, exact = tiger_solution
    pb = solvers.solve_pomdp_pbvi(cm, tolerance=1e-6, n_beliefs=50)
    assert pb.converged
    assert solvers.pomdp_bellman_residual(cm, pb, pb.beliefs) <= 1e-6
    probe = solvers.sample_beliefs(2, n_random=200)
    # both solutions approach V* from below; the exact one is within
    # residual * gamma / (1 - gamma) of it
    slack = 1e-6 * 0.95 / 0.05
    assert np.all(pb.values(probe) <= exact.values(probe) + slack)
    np.testing.assert_allclose(pb.values(pb.beliefs), exact.values(pb.beliefs), atol=1e-3)


def test_reachable_beliefs_are_distributions():
    cm = flat(tiger(), "pomdp")
    b = solvers.reachable_beliefs(cm, n=20)
    assert np.allclose(b.sum(axis=1), 1.0) and np.all(b >= 0)
    assert len(b) <= 20


def test_vector_budget_raises():
    cm = flat(tiger(), "pomdp")
    with pytest.raises(solvers.TooLargeError):
        solvers.solve_pomdp_exact(cm, max_vectors=2)


def test_cluster_cap_raises():
    m = random_mdp(np.random.default_rng(0), 6, 2, n_obs=2, duplicate=False)
    with pytest.raises(solvers.TooLargeError):
        solvers.solve_pomdp_exact(flat(m, "pomdp"), max_clusters=4)
