import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_mdp
from polca import solvers
from polca.abstraction import (ClusterMap, cluster_report, init_clusters, is_stable, minimize,
                               partition_is_stable, project_model, split_cluster)
from polca.model import FeatureSpace, ModelError, belief_update, make_model


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def stable_by_definition(model, clusters, pomdp=False):
    """Direct check: equal rewards and equal block sums inside every cluster."""
    z = np.zeros(model.n_states, dtype=int)
    for i, c in enumerate(clusters):
        z[c] = i
    ind = np.eye(len(clusters))[z]
    for c in clusters:
        for a in range(model.n_actions):
            if np.ptp(model.rewards[c, a]) > 1e-9:
                return False
            mats = model.observation_joint(a) if pomdp else [model.transitions[a]]
            for m in mats:
                sums = (m @ ind)[c]
                if np.any(np.ptp(sums, axis=0) > 1e-9):
                    return False
    return True


def coarsest_by_enumeration(model, pomdp=False):
    best = None
    for part in set_partitions(list(range(model.n_states))):
        if stable_by_definition(model, part, pomdp) and (best is None or len(part) < len(best)):
            best = part
    return ClusterMap.from_clusters(best, model.n_states)


def chain_with_twins():
    space = FeatureSpace.from_features([("s", 3)])
    t = np.zeros((1, 3, 3))
    t[0, :, 2] = 1.0
    r = np.array([[1.0], [1.0], [0.0]])
    return make_model(space, ["go"], t, r, 0.9)


def test_cluster_map_is_canonical():
    a = ClusterMap(np.array([5, 5, 2, 7]))
    assert a.assignment.tolist() == [0, 0, 1, 2]
    assert a == ClusterMap.from_clusters([[3], [0, 1], [2]])
    assert a.members(0).tolist() == [0, 1]
    np.testing.assert_allclose(a.project(np.array([0.1, 0.2, 0.3, 0.4])), [0.3, 0.3, 0.4])


def test_from_clusters_rejects_bad_covers():
    with pytest.raises(ValueError):
        ClusterMap.from_clusters([[0, 1], [1, 2]])
    with pytest.raises(ValueError):
        ClusterMap.from_clusters([[0]], 2)


def test_refines():
    fine = ClusterMap(np.array([0, 1, 2, 2]))
    coarse = ClusterMap(np.array([0, 0, 1, 1]))
    assert fine.refines(coarse) and not coarse.refines(fine)
    assert coarse.refines(coarse)


def test_twins_merge():
    m = chain_with_twins()
    cmap = minimize(m)
    assert cmap == ClusterMap.from_clusters([[0, 1], [2]])
    cm = project_model(m, cmap)
    assert cm.transitions[0].toarray().tolist() == [[0.0, 1.0], [0.0, 1.0]]
    assert cm.rewards[:, 0].tolist() == [1.0, 0.0]


def test_initial_partition_groups_by_reward():
    m = chain_with_twins()
    assert init_clusters(m) == ClusterMap.from_clusters([[0, 1], [2]])


def test_stability_witness_and_split():
    space = FeatureSpace.from_features([("s", 3)])
    t = np.zeros((1, 3, 3))
    t[0, 0, 0] = t[0, 1, 2] = t[0, 2, 2] = 1.0
    m = make_model(space, ["go"], t, np.zeros((3, 1)), 0.9)
    cmap = ClusterMap.from_clusters([[0, 1], [2]])
    res = is_stable(m, cmap, 0)
    assert not res
    assert res.witness[:2] == (0, 1)
    split = split_cluster(m, cmap, 0)
    assert split.split and split.cluster_map.n_clusters == 3
    again = split_cluster(m, split.cluster_map, 0)
    assert not again.split


def test_projection_rejects_unstable_partitions():
    m = chain_with_twins()
    with pytest.raises(ModelError):
        project_model(m, ClusterMap.single(3))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.integers(3, 6), st.integers(1, 3))
def test_minimize_matches_exhaustive_coarsest_partition(seed, n, n_actions):
    m = random_mdp(np.random.default_rng(seed), n, n_actions)
    assert minimize(m) == coarsest_by_enumeration(m)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 100_000), st.integers(3, 5))
def test_pomdp_minimize_matches_exhaustive_coarsest_partition(seed, n):
    m = random_mdp(np.random.default_rng(seed), n, 2, n_obs=2)
    assert minimize(m, mode="pomdp") == coarsest_by_enumeration(m, pomdp=True)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(4, 20), st.integers(1, 4))
def test_minimized_partition_is_stable_and_coarser_than_prototypes(seed, n, n_actions):
    m, kind = random_mdp(np.random.default_rng(seed), n, n_actions, with_kinds=True)
    cmap = minimize(m)
    assert partition_is_stable(m, cmap)
    # copies of one prototype are bisimilar, so they always share a cluster
    assert ClusterMap(kind).refines(cmap)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(4, 20), st.integers(1, 4))
def test_planning_over_clusters_is_exact(seed, n, n_actions):
    m = random_mdp(np.random.default_rng(seed), n, n_actions)
    cmap = minimize(m)
    flat = solvers.value_iterate(project_model(m, ClusterMap.singletons(n)), tolerance=1e-10)
    clustered = solvers.value_iterate(project_model(m, cmap), tolerance=1e-10)
    np.testing.assert_allclose(flat.values, clustered.values[cmap.assignment], atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000), st.integers(3, 12))
def test_clustered_belief_tracks_projected_flat_belief(seed, n):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, n, 2, n_obs=3)
    cmap = minimize(m, mode="pomdp")
    cm = project_model(m, cmap, mode="pomdp")
    b = rng.dirichlet(np.ones(n))
    bc = cmap.project(b)
    for _ in range(6):
        a = int(rng.integers(2))
        probs = np.array([(m.obs_model[a, :, o] * (m.transitions[a].T @ b)).sum() for o in range(3)])
        o = int(rng.choice(3, p=probs / probs.sum()))
        b = belief_update(m, b, a, o)
        bc = cm.belief_update(bc, a, o)
        np.testing.assert_allclose(cmap.project(b), bc, atol=1e-8)


def test_cluster_report_counts_parameters():
    m = chain_with_twins()
    rep = cluster_report(project_model(m, minimize(m)))
    # 2 clusters x 1 action rewards + 2 nonzero projected transitions
    assert rep["summary"] == {"n_states": 3, "n_clusters": 2, "n_params": 4}
    assert rep["clusters"] == [[0, 1], [2]]
