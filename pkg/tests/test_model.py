import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from polca.model import (FeatureSpace, ImpossibleObservation, ModelError, belief_update,
                         check_model, is_belief, make_model, next_state_distribution,
                         point_belief, predict_belief, validate_model)


def two_state(discount=0.9, **kw):
    space = FeatureSpace.from_features([("door", ["open", "shut"])])
    t = np.array([[[0.7, 0.3], [0.2, 0.8]], [[1.0, 0.0], [0.0, 1.0]]])
    r = np.array([[1.0, 0.0], [-1.0, 2.0]])
    obs = np.array([[[0.9, 0.1], [0.3, 0.7]], [[0.5, 0.5], [0.5, 0.5]]])
    args = dict(observations=["o-open", "o-shut"], obs_model=obs)
    args.update(kw)
    return make_model(space, ["drift", "wait"], t, r, discount, **args)


def test_mixed_radix_first_feature_most_significant():
    space = FeatureSpace.from_features([("a", 3), ("b", ["x", "y"])])
    assert space.n_states == 6
    assert space.encode({"a": 2, "b": "x"}) == 4
    assert space.encode([1, 1]) == 3
    assert space.decode(5) == (2, 1)
    assert space.describe(3) == {"a": "1", "b": "y"}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.data())
def test_encode_decode_roundtrip(cards, data):
    space = FeatureSpace.from_features([(f"f{i}", c) for i, c in enumerate(cards)])
    s = data.draw(st.integers(0, space.n_states - 1))
    assert space.encode(space.decode(s)) == s
    assert space.encode(space.describe(s)) == s


def test_feature_space_rejects_bad_input():
    with pytest.raises(ModelError):
        FeatureSpace(("a", "a"), (2, 2))
    space = FeatureSpace.from_features([("a", 2)])
    with pytest.raises(ModelError):
        space.encode({"a": "nope"})
    with pytest.raises(ModelError):
        space.decode(2)
    with pytest.raises(ModelError):
        space.encode({})


def test_valid_model_has_no_violations():
    m = two_state()
    assert validate_model(m) == []
    assert check_model(m) is m
    assert m.kind == "pomdp" and m.n_observations == 2


def test_validation_names_offending_entries():
    space = FeatureSpace.from_features([("s", 2)])
    t = np.array([[[0.5, 0.4], [0.0, 1.0]]])
    m = make_model(space, ["a"], t, np.zeros((2, 1)), 1.5)
    kinds = {(v.kind, v.where) for v in validate_model(m)}
    assert ("transition-sum", (0, 0)) in kinds
    assert ("discount", ()) in kinds
    with pytest.raises(ModelError, match="transition-sum"):
        check_model(m)


def test_negative_probabilities_and_bad_observations_are_reported():
    space = FeatureSpace.from_features([("s", 2)])
    t = [sparse.csr_matrix(np.array([[1.2, -0.2], [0.0, 1.0]]))]
    obs = np.array([[[0.6, 0.6], [1.0, 0.0]]])
    m = make_model(space, ["a"], t, np.zeros((2, 1)), 0.9, ["x", "y"], obs)
    kinds = [v.kind for v in validate_model(m)]
    assert "negative-transition" in kinds
    assert "observation-sum" in kinds


def test_shape_errors_raise_immediately():
    space = FeatureSpace.from_features([("s", 2)])
    with pytest.raises(ModelError):
        make_model(space, ["a"], np.ones((1, 3, 3)) / 3, np.zeros((2, 1)))
    with pytest.raises(ModelError):
        make_model(space, ["a", "a"], np.stack([np.eye(2)] * 2), np.zeros((2, 2)))


def test_belief_update_matches_hand_computation():
    m = two_state()
    b = np.array([0.5, 0.5])
    # predicted: [0.5*0.7 + 0.5*0.2, 0.5*0.3 + 0.5*0.8] = [0.45, 0.55]
    np.testing.assert_allclose(predict_belief(m, b, "drift"), [0.45, 0.55])
    # after "o-open": [0.45*0.9, 0.55*0.3] normalized
    expected = np.array([0.405, 0.165]) / 0.57
    np.testing.assert_allclose(belief_update(m, b, "drift", "o-open"), expected)


def test_impossible_observation_is_an_error():
    space = FeatureSpace.from_features([("s", 2)])
    obs = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    m = make_model(space, ["a"], np.eye(2)[None], np.zeros((2, 1)), 0.9, ["x", "y"], obs)
    with pytest.raises(ImpossibleObservation):
        belief_update(m, np.array([0.5, 0.5]), 0, "y")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_belief_update_keeps_a_distribution(seed):
    rng = np.random.default_rng(seed)
    m = two_state()
    b = rng.dirichlet(np.ones(2))
    for _ in range(5):
        a = int(rng.integers(2))
        o = int(rng.integers(2))
        b = belief_update(m, b, a, o)
        assert is_belief(b, 2)


def test_next_state_distribution_and_point_belief():
    m = two_state()
    np.testing.assert_allclose(next_state_distribution(m, 1, "drift"), [0.2, 0.8])
    assert is_belief(point_belief(3, 1), 3)
    assert not is_belief(np.array([0.5, 0.6]))
    with pytest.raises(ModelError):
        m.action_index("fly")


def test_with_discount_copies_everything_else():
    m = two_state()
    m2 = m.with_discount(0.5)
    assert m2.discount == 0.5 and m2.actions == m.actions
    assert np.array_equal(m2.rewards, m.rewards)
