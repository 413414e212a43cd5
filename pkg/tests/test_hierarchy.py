import numpy as np
import pytest

from polca import baselines
from polca.hierarchy import (HierarchyError, PlanningError, PlanOptions, RewardEntry, Subtask,
                             TaskGraph, UnsolvableSubtaskError, bottom_up_order, check_task_graph,
                             condition_mask, effective_local_reward, parameterize_subtask, polca_plan,
                             policy_agnostic_partition, validate_task_graph)
from polca.model import ModelError


def test_conditions_combine(get_domain):
    space = get_domain("taxi").model.space
    a = condition_mask(space, {"X": "0", "Y": ["0", "1"]})
    assert a.sum() == 2 * 5 * 4
    assert condition_mask(space, {"not": {"X": "0"}}).sum() == 400
    either = condition_mask(space, {"any": [{"X": "0"}, {"X": "1"}]})
    assert either.sum() == 200
    assert condition_mask(space, None).sum() == 0 and condition_mask(space, True).all()
    with pytest.raises(HierarchyError):
        condition_mask(space, {"any": [], "not": {}})


def test_micro_is_solved_bottom_up(get_domain):
    d = get_domain("micro")
    assert bottom_up_order(d.graph) == ["h_1", "h_0"]


def test_micro_abstract_action_rows_follow_the_child_policy(get_domain, get_plan):
    d = get_domain("micro")
    policy = get_plan("micro", "mdp")
    child = policy.subtasks["h_1"]
    assert [child.actions[k] for k in child.choice] == ["right", "right", "right", "left"]
    root = parameterize_subtask(d.model, d.graph, "h_0", policy.subtasks)
    k = root.actions.index("h_1")
    for s in range(4):
        prim = d.model.actions.index(["right", "right", "right", "left"][s])
        assert root.primitive_of[k, s] == prim
        np.testing.assert_array_equal(root.transitions[k][s].toarray(),
                                      d.model.transitions[prim][s].toarray())
        assert root.rewards[s, k] == d.model.rewards[s, prim]


def test_micro_root_value_equals_flat_value_iteration(get_domain, get_plan):
    d = get_domain("micro")
    policy = get_plan("micro", "mdp")
    root = policy.root
    flat = baselines.plan_flat(d.model)
    np.testing.assert_allclose(root.value.values[root.cluster_map.assignment], flat.values, atol=1e-8)
    assert [d.model.actions[a] for a in policy.resolved_policy()] == ["right", "right", "right", "stay"]


def test_micro_flat_values_by_hand(get_domain):
    g = 0.95
    v3 = 10 / (1 - g)
    v2 = 5 + g * v3
    v1 = -1 + g * v2
    v0 = -1 + g * v1
    np.testing.assert_allclose(baselines.plan_flat(get_domain("micro").model).values,
                               [v0, v1, v2, v3], atol=1e-8)


def test_taxi_subtasks_cluster_below_their_state_counts(get_plan):
    policy = get_plan("taxi", "mdp")
    for s in policy.subtasks.values():
        assert s.cluster_map.n_clusters < s.cluster_map.n_states
        assert s.residual() <= 1e-8


def test_navigation_subtasks_ignore_passenger_and_destination(get_plan):
    nav = get_plan("taxi", "mdp").subtasks["Navigate_R"]
    # one cluster per cell, plus reward-distinct splits of the target cell
    assert nav.cluster_map.n_clusters <= 27


def test_policy_contingent_partition_is_coarser_than_agnostic(get_domain, get_plan):
    for name in ("micro", "taxi", "nursebot-small"):
        d = get_domain(name)
        policy = get_plan(name, "mdp")
        for h in policy.order:
            agnostic = policy_agnostic_partition(d.model, d.graph, h)
            assert agnostic.refines(policy.subtasks[h].cluster_map), (name, h)


def test_pseudo_reward_adds_to_local_reward(get_domain):
    d = get_domain("taxi")
    r = effective_local_reward(d.model, d.graph, "Navigate_R")
    at_r = condition_mask(d.model.space, {"X": "0", "Y": "0"})
    np.testing.assert_array_equal(r, d.model.rewards[:, :4] + at_r[:, None])


def micro_graph(*subtasks, root="h_0"):
    return TaskGraph.build(root, list(subtasks))


def test_validation_reports_cycles(get_domain):
    m = get_domain("micro").model
    g = micro_graph(Subtask("h_0", ("stay", "h_1")), Subtask("h_1", ("right", "left", "h_0")))
    report = validate_task_graph(g, m)
    assert any(v.startswith("cycle") for v in report)
    with pytest.raises(HierarchyError, match="cycle"):
        check_task_graph(g, m)


def test_validation_reports_unknown_children_and_missing_primitives(get_domain):
    m = get_domain("micro").model
    report = validate_task_graph(micro_graph(Subtask("h_0", ("stay", "jump"))), m)
    assert "h_0: unknown child 'jump'" in report
    assert "primitive action 'right' unreachable from root" in report


def test_validation_requires_pseudo_reward_for_uniform_subtasks(get_domain):
    m = get_domain("micro").model
    g = micro_graph(Subtask("h_0", ("stay", "h_1")), Subtask("h_1", ("left",)), Subtask("h_2", ("right",)),)
    report = validate_task_graph(g, m)
    assert "h_1: local reward is uniform; a pseudo-reward is required" in report
    assert "subtask 'h_2' unreachable from root" in report


def test_pseudo_reward_makes_a_uniform_subtask_solvable(get_domain):
    m = get_domain("micro").model
    g = micro_graph(
        Subtask("h_0", ("stay", "h_1", "right")),
        Subtask("h_1", ("left",), pseudo_rewards=(RewardEntry({"pos": "s0"}, 1.0),)),
    )
    assert validate_task_graph(g, m) == []
    with pytest.raises(UnsolvableSubtaskError):
        effective_local_reward(m, micro_graph(Subtask("h_1", ("left",)), root="h_1"), "h_1")


def test_planning_wraps_errors_with_the_subtask(get_domain):
    d = get_domain("nursebot-small")
    with pytest.raises(PlanningError) as info:
        polca_plan(d.model, d.graph, "pomdp", PlanOptions(max_clusters=1, fallback="none"))
    assert info.value.subtask == "Inform"


def test_pomdp_mode_needs_observations(get_domain):
    d = get_domain("taxi")
    with pytest.raises(ModelError):
        polca_plan(d.model, d.graph, "pomdp")


def test_graph_json_roundtrip(get_domain):
    g = get_domain("taxi").graph
    assert TaskGraph.from_json(g.to_json()) == g
    assert g.depth() == 3


def test_terminal_states_absorb_in_subtask_models(get_domain):
    d = get_domain("taxi")
    p = parameterize_subtask(d.model, d.graph, "Navigate_R", {})
    s = int(np.flatnonzero(p.terminal)[0])
    for t in p.transitions:
        assert t[s, s] == 1.0
    assert np.all(p.continuation[p.terminal] == 0)
