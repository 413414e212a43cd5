import numpy as np
import pytest

from polca.domains import BUILDERS, build
from polca.domains.nursebot import CLARIFICATIONS, build_nursebot
from polca.domains.taxi import LANDMARKS, cell_label
from polca.hierarchy import validate_task_graph
from polca.model import validate_model


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_every_domain_validates(get_domain, name):
    d = get_domain(name)
    assert validate_model(d.model) == []
    assert validate_task_graph(d.graph, d.model) == []
    if d.initial is not None:
        assert d.initial.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("name,count", [("taxi", 500), ("taxi2", 2600), ("nursebot", 576), ("micro", 4)])
def test_state_counts(get_domain, name, count):
    assert get_domain(name).model.n_states == count


def test_small_nursebot_stays_small(get_domain):
    m = get_domain("nursebot-small").model
    assert m.n_states <= 100
    assert {"Root", "Assist", "Inform"} == set(get_domain("nursebot-small").graph.nodes)


def test_taxi_actions_and_rewards(get_domain):
    m = get_domain("taxi").model
    assert m.actions == ("North", "South", "East", "West", "Pickup", "Putdown")
    s = m.space.encode({"X": "0", "Y": "0", "Passenger": "taxi", "Destination": "R"})
    assert m.rewards[s, 5] == 20.0
    assert m.rewards[s, 4] == -10.0
    assert m.rewards[s, 0] == -1.0


def test_taxi_walls_block_moves(get_domain):
    m = get_domain("taxi").model
    s = m.space.encode({"X": "1", "Y": "0", "Passenger": "R", "Destination": "G"})
    east = m.actions.index("East")
    assert m.transitions[east][s, s] == 1.0


def test_taxi2_restricted_to_landmarks_reproduces_taxi(get_domain):
    small, big = get_domain("taxi").model, get_domain("taxi2").model

    def lift(s):
        st = small.space.describe(s)
        p = st["Passenger"]
        st["Passenger"] = p if p == "taxi" else cell_label(*LANDMARKS[p])
        return big.space.encode(st)

    idx = np.array([lift(s) for s in range(small.n_states)])
    np.testing.assert_array_equal(big.rewards[idx], small.rewards)
    for a in range(small.n_actions):
        lifted = big.transitions[a][idx][:, idx].toarray()
        np.testing.assert_array_equal(lifted, small.transitions[a].toarray())


def nursebot_state(m, **kw):
    st = {"robot": "room", "person": "room", "attention": "attentive", "battery": "high",
          "motion": "none", "reminder": "none", "request": "none"}
    st.update(kw)
    return m.space.encode(st)


def test_nursebot_rewards(get_domain):
    m = get_domain("nursebot").model
    pending = nursebot_state(m, reminder="physio")
    assert m.rewards[pending, m.actions.index("RemindPhysioAppt")] == 50.0
    assert m.rewards[nursebot_state(m), m.actions.index("RemindPhysioAppt")] == -50.0
    assert np.all(m.rewards[:, m.actions.index("DoNothing")] == -1.0)
    asked = nursebot_state(m, request="time")
    assert m.rewards[asked, m.actions.index("TellTime")] == 50.0
    assert m.rewards[asked, m.actions.index("TellWeather")] == -50.0


def test_speech_noise_is_possible_in_every_attention_state(get_domain):
    m = get_domain("nursebot").model
    noise = m.observations.index("noise")
    spoken = [m.actions.index(a) for a in ("DoNothing", *CLARIFICATIONS) if a in m.actions]
    for att in ("attentive", "distracted"):
        states = [s for s in range(m.n_states) if m.space.describe(s)["attention"] == att]
        for a in spoken:
            assert np.all(m.obs_model[a, states, noise] > 0)


def test_distraction_makes_speech_noisier(get_domain):
    m = get_domain("nursebot").model
    a = m.actions.index("VerifyInfoRequest")
    noise = m.observations.index("noise")
    calm = nursebot_state(m, request="menu")
    busy = nursebot_state(m, request="menu", attention="distracted")
    assert m.obs_model[a, busy, noise] > m.obs_model[a, calm, noise]


def test_nursebot_hierarchy_shape(get_domain):
    g = get_domain("nursebot").graph
    assert set(g.nodes["Root"].children) == {"DoNothing", "Remind", "Guide", "Assist", "Rest"}
    assert "Inform" in g.nodes["Assist"].children
    assert g.depth() == 3


def test_micro_hierarchy_shape(get_domain):
    g = get_domain("micro").graph
    assert g.root == "h_0"
    assert g.nodes["h_0"].children == ("stay", "h_1")
    assert g.nodes["h_1"].children == ("right", "left")


def test_parameter_overrides_reach_the_model():
    m = build_nursebot("small", noise_attentive=0.5).model
    s = nursebot_state(m, request="weather")
    a = m.actions.index("VerifyInfoRequest")
    assert m.obs_model[a, s, m.observations.index("noise")] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        build_nursebot("huge")


def test_unknown_domain():
    with pytest.raises(KeyError, match="unknown domain"):
        build("chess")
