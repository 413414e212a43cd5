"""A Nursebot-style dialogue and escort POMDP.

Seven features: robot location, person location, attention, battery,
motion goal, reminder goal and user-initiated request. ``scale="full"``
uses 3*3*2*2*2*2*4 = 576 states and the full hierarchy. ``scale="small"``
keeps the dialogue (Root -> Assist -> Inform) with drifting attention and
battery features that the dialogue does not depend on (12 states), so
every subtask, root included, is solved exactly.

Speech is the noisy channel: passive listening only reveals that the user
is trying to say something, the request type has to be asked for
(VerifyInfoRequest) or confirmed (ConfirmWant*), and every recognized
word may be lost to "noise" (0.2 when the user is attentive, 0.4 when
distracted). Laser, IR and battery readings are 0.95 accurate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ..hierarchy import Subtask, TaskGraph
from ..model import FeatureSpace, make_model
from . import DomainSpec

SCALES = {
    "full": {
        "robot": ("home", "room", "physio"),
        "person": ("room", "physio", "away"),
        "attention": ("attentive", "distracted"),
        "battery": ("high", "low"),
        "motion": ("none", "physio"),
        "reminder": ("none", "physio"),
        "request": ("none", "weather", "time", "menu"),
    },
    "small": {
        "robot": ("room",),
        "person": ("room",),
        "attention": ("attentive", "distracted"),
        "battery": ("high", "low"),
        "motion": ("none",),
        "reminder": ("none",),
        "request": ("none", "weather", "time"),
    },
}

# subtasks below the root, per scale
SCALE_SUBTASKS = {
    "full": ("Remind", "Guide", "Assist", "Rest"),
    "small": ("Assist",),
}

# per-scale parameter defaults; explicit overrides win
SCALE_PARAMS = {
    "full": {},
    # Distraction does not degrade the channel here. Attention and battery
    # still drift but no longer matter to the dialogue, so the abstraction
    # should drop them; this also keeps every exact value function small.
    "small": {"noise_distracted": 0.2},
}

TELL_REWARD = {"weather": "TellWeather", "time": "TellTime", "menu": "TellMenu"}
CONFIRM = {"weather": "ConfirmWantWeather", "time": "ConfirmWantTime", "menu": "ConfirmWantMenu"}

CLARIFICATIONS = ("ConfirmGuideToPhysio", "ConfirmDone", "VerifyInfoRequest",
                  "ConfirmWantWeather", "ConfirmWantTime", "ConfirmWantMenu")
COMMITMENTS = ("RemindPhysioAppt", "GuideToPhysio", "TerminateGuidance",
               "TellWeather", "TellTime", "TellMenu")


@dataclass(frozen=True)
class NursebotParams:
    noise_attentive: float = 0.2
    noise_distracted: float = 0.4
    sensor_accuracy: float = 0.95
    word_accuracy: float = 1.0  # correct word given a word was recognized
    answer_accuracy: float = 0.9  # yes/no correct given recognized
    request_rate: float = 0.1
    reminder_rate: float = 0.03
    battery_drain: float = 0.02
    attention_flip: float = 0.1
    move_success: float = 0.95
    follow_prob: float = 0.8
    late_follow: float = 0.5
    wander: float = 0.02
    wander_back: float = 0.2
    goal_reward: float = 50.0
    wrong_reward: float = -50.0
    motion_reward: float = 5.0
    recharge_reward: float = 20.0
    cheap_cost: float = -1.0
    check_cost: float = -5.0


SUBTASK_PRIMITIVES = {
    "Remind": ("gotoPatientRoom", "RingBell", "RemindPhysioAppt"),
    "Guide": ("ConfirmGuideToPhysio", "GuideToPhysio", "CheckUserPresent", "TerminateGuidance"),
    "Assist": ("ConfirmDone",),
    "Rest": ("CheckBattery", "GoHome", "RechargeBattery"),
}

TABLE_ORDER = ("DoNothing", "gotoPatientRoom", "RingBell", "RemindPhysioAppt", "ConfirmGuideToPhysio",
               "CheckBattery", "GuideToPhysio", "CheckUserPresent", "TerminateGuidance", "ConfirmDone",
               "VerifyInfoRequest", "ConfirmWantWeather", "TellWeather", "GoHome", "RechargeBattery")


def _inform_actions(requests) -> list[str]:
    out = ["VerifyInfoRequest"]
    for r in requests:
        if r != "none":
            out += [CONFIRM[r], TELL_REWARD[r]]
    return out


def _actions(requests, subtasks) -> tuple[str, ...]:
    used = {"DoNothing", *_inform_actions(requests)}
    for h in subtasks:
        used.update(SUBTASK_PRIMITIVES.get(h, ()))
    base = [a for a in TABLE_ORDER if a in used]
    return tuple(base + [a for a in _inform_actions(requests) if a not in base])


def _observations(f) -> tuple[str, ...]:
    obs = ["null", "yes", "no", "noise"]
    obs += [r for r in f["request"] if r != "none"]
    if "physio" in f["motion"]:
        obs.append("physio")
    if "physio" in f["reminder"]:
        obs.append("physio_message")
    obs += [f"laser_{r}" for r in f["robot"]]
    obs += ["ir_user", "ir_nouser", "battery_high", "battery_low"]
    return tuple(obs)


class _Builder:
    def __init__(self, features, subtasks, p: NursebotParams):
        self.f = features
        self.p = p
        self.names = list(features)
        self.space = FeatureSpace.from_features(list(features.items()))
        self.actions = _actions(features["request"], subtasks)
        self.obs = _observations(features)
        self.requests = [r for r in features["request"] if r != "none"]

    # -- helpers over labelled state dicts
    def encode(self, st):
        return self.space.encode(st)

    def reward(self, st, a):
        p = self.p
        together = st["robot"] == st["person"]
        if a == "DoNothing":
            return p.cheap_cost
        if a == "gotoPatientRoom":
            return p.motion_reward if st["robot"] != "room" and st["reminder"] != "none" else p.check_cost
        if a == "RingBell":
            ok = st["reminder"] != "none" and together and st["attention"] == "distracted"
            return p.motion_reward if ok else p.cheap_cost
        if a == "RemindPhysioAppt":
            ok = st["reminder"] != "none" and together and st["attention"] == "attentive"
            return p.goal_reward if ok else p.wrong_reward
        if a in ("ConfirmGuideToPhysio", "CheckBattery"):
            return p.check_cost
        if a == "GuideToPhysio":
            ok = st["motion"] != "none" and together and st["robot"] != "physio"
            return p.goal_reward if ok else p.wrong_reward
        if a == "CheckUserPresent":
            return p.check_cost if together else p.cheap_cost
        if a == "TerminateGuidance":
            ok = st["motion"] != "none" and st["robot"] == "physio" and st["person"] == "physio"
            return p.goal_reward if ok else p.wrong_reward
        if a in ("ConfirmDone", "VerifyInfoRequest") or a.startswith("ConfirmWant"):
            return p.cheap_cost
        if a.startswith("Tell"):
            want = next(r for r, name in TELL_REWARD.items() if name == a)
            return p.goal_reward if st["request"] == want else p.wrong_reward
        if a == "GoHome":
            return p.motion_reward if st["battery"] == "low" and st["robot"] != "home" else p.check_cost
        if a == "RechargeBattery":
            ok = st["battery"] == "low" and st["robot"] == "home"
            return p.recharge_reward if ok else p.check_cost
        raise ValueError(a)

    def effect(self, st, a):
        """Distribution over post-action states (before exogenous change)."""
        p = self.p
        out = [(1.0, dict(st))]

        def branch(prob, **changes):
            stay = dict(st)
            moved = dict(st, **changes)
            return [(prob, moved), (1.0 - prob, stay)] if prob < 1.0 else [(1.0, moved)]

        together = st["robot"] == st["person"]
        if a == "gotoPatientRoom" and "room" in self.f["robot"]:
            out = branch(p.move_success, robot="room")
        elif a == "GoHome":
            out = branch(p.move_success, robot="home")
        elif a == "RingBell" and together:
            out = branch(0.9, attention="attentive")
        elif a == "RemindPhysioAppt" and self.reward(st, a) > 0:
            if "physio" in self.f["motion"]:
                out = [(0.8, dict(st, reminder="none", motion="physio")), (0.2, dict(st, reminder="none"))]
            else:
                out = [(1.0, dict(st, reminder="none"))]
        elif a == "GuideToPhysio" and self.reward(st, a) > 0:
            out = [(p.follow_prob, dict(st, robot="physio", person="physio")),
                   (1 - p.follow_prob, dict(st, robot="physio"))]
        elif a == "TerminateGuidance" and self.reward(st, a) > 0:
            out = [(1.0, dict(st, motion="none"))]
        elif a == "RechargeBattery" and self.reward(st, a) > 0:
            out = [(1.0, dict(st, battery="high"))]
        elif a.startswith("Tell") and self.reward(st, a) > 0:
            out = [(1.0, dict(st, request="none"))]
        return out

    def exogenous(self, st):
        """Background events as ``[(prob, changes)]``. At most one event
        fires per step; the remaining mass leaves the state unchanged."""
        p, f = self.p, self.f
        events = []
        if len(f["attention"]) > 1:
            other = "distracted" if st["attention"] == "attentive" else "attentive"
            events.append((p.attention_flip, {"attention": other}))
        if len(f["battery"]) > 1 and st["battery"] == "high":
            events.append((p.battery_drain, {"battery": "low"}))
        if st["request"] == "none" and self.requests:
            each = p.request_rate / len(self.requests)
            events += [(each, {"request": r}) for r in self.requests]
        if st["reminder"] == "none" and "physio" in f["reminder"]:
            events.append((p.reminder_rate, {"reminder": "physio"}))
        if len(f["person"]) > 1:
            if st["motion"] != "none" and st["robot"] == "physio" and st["person"] != "physio":
                events.append((p.late_follow, {"person": "physio"}))
            elif st["person"] == "room" and st["motion"] == "none" and "away" in f["person"]:
                events.append((p.wander, {"person": "away"}))
            elif st["person"] == "away":
                events.append((p.wander_back, {"person": "room"}))
        return events

    def successors(self, st, a):
        out = {}
        for prob, mid in self.effect(st, a):
            events = self.exogenous(mid)
            quiet = 1.0 - sum(q for q, _ in events)
            for q, changes in [(quiet, {}), *events]:
                if q > 0:
                    s2 = self.encode({**mid, **changes})
                    out[s2] = out.get(s2, 0.0) + prob * q
        return out

    # -- observations
    def noise(self, st):
        return self.p.noise_attentive if st["attention"] == "attentive" else self.p.noise_distracted

    def answer(self, st, truth: bool):
        n = self.noise(st)
        acc = self.p.answer_accuracy
        yes = (1 - n) * (acc if truth else 1 - acc)
        return {"yes": yes, "no": (1 - n) - yes, "noise": n}

    def passive(self, st):
        pending = st["request"] != "none" or st["motion"] != "none"
        speech = {"noise": 0.6, "null": 0.4} if pending else {"null": 0.95, "noise": 0.05}
        if st["reminder"] != "none":
            out = {"physio_message": 0.9}
            for k, v in speech.items():
                out[k] = out.get(k, 0.0) + 0.1 * v
            return out
        return speech

    def verify(self, st):
        n = self.noise(st)
        r = st["request"]
        if r != "none":
            others = [x for x in self.requests if x != r]
            acc = self.p.word_accuracy if others else 1.0
            out = {r: (1 - n) * acc, "noise": n}
            for x in others:
                out[x] = (1 - n) * (1 - acc) / len(others)
            return out
        if st["motion"] != "none":
            return {"physio": 1 - n, "noise": n}
        return {"no": 1 - n, "noise": n}

    def sensor(self, true_label, labels):
        acc = self.p.sensor_accuracy
        if len(labels) == 1:
            return {true_label: 1.0}
        rest = (1 - acc) / (len(labels) - 1)
        return {lab: (acc if lab == true_label else rest) for lab in labels}

    def observe(self, a, st):
        if a == "DoNothing":
            return self.passive(st)
        if a in ("RemindPhysioAppt", "TerminateGuidance") or a.startswith("Tell"):
            return {"null": 1.0}
        if a == "VerifyInfoRequest":
            return self.verify(st)
        if a.startswith("ConfirmWant"):
            want = next(r for r, name in CONFIRM.items() if name == a)
            return self.answer(st, st["request"] == want)
        if a == "ConfirmDone":
            return self.answer(st, st["request"] == "none" and st["motion"] == "none")
        if a == "ConfirmGuideToPhysio":
            return self.answer(st, st["motion"] != "none")
        if a == "RingBell":
            return self.answer(st, st["attention"] == "attentive")
        if a in ("gotoPatientRoom", "GoHome", "GuideToPhysio"):
            return self.sensor(f"laser_{st['robot']}", [f"laser_{r}" for r in self.f["robot"]])
        if a in ("CheckBattery", "RechargeBattery"):
            return self.sensor(f"battery_{st['battery']}", ["battery_high", "battery_low"])
        if a == "CheckUserPresent":
            return self.sensor("ir_user" if st["robot"] == st["person"] else "ir_nouser", ["ir_user", "ir_nouser"])
        raise ValueError(a)

    def build(self):
        n = self.space.n_states
        na, no = len(self.actions), len(self.obs)
        states = [self.space.describe(s) for s in range(n)]
        rewards = np.zeros((n, na))
        obs = np.zeros((na, n, no))
        trans = []
        for ai, a in enumerate(self.actions):
            rows, cols, vals = [], [], []
            for s, st in enumerate(states):
                rewards[s, ai] = self.reward(st, a)
                for s2, q in self.successors(st, a).items():
                    rows.append(s)
                    cols.append(s2)
                    vals.append(q)
                for o, q in self.observe(a, st).items():
                    if q > 0:
                        obs[ai, s, self.obs.index(o)] += q
            trans.append(sparse.csr_matrix((vals, (rows, cols)), shape=(n, n)))
        return trans, rewards, obs


# each subtask ends once its goal is met (or absent)
SUBTASK_TERMINAL = {
    "Remind": {"reminder": "none"},
    "Guide": {"motion": "none"},
    "Assist": {"request": "none"},
    "Inform": {"request": "none"},
    "Rest": {"battery": "high"},
}


def nursebot_graph(actions, subtasks=SCALE_SUBTASKS["full"]) -> TaskGraph:
    inform = [a for a in actions if a == "VerifyInfoRequest" or a.startswith(("ConfirmWant", "Tell"))]
    nodes = [Subtask("Root", ("DoNothing", *subtasks))]
    for h in subtasks:
        if h == "Assist":
            nodes += [Subtask("Assist", ("Inform", "ConfirmDone"), terminal=SUBTASK_TERMINAL["Assist"]),
                      Subtask("Inform", tuple(inform), terminal=SUBTASK_TERMINAL["Inform"])]
        else:
            nodes.append(Subtask(h, SUBTASK_PRIMITIVES[h], terminal=SUBTASK_TERMINAL[h]))
    return TaskGraph.build("Root", nodes)


def build_nursebot(scale: str = "small", discount: float = 0.95, **overrides) -> DomainSpec:
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {sorted(SCALES)}")
    params = NursebotParams(**{**SCALE_PARAMS[scale], **overrides})
    b = _Builder(SCALES[scale], SCALE_SUBTASKS[scale], params)
    trans, rewards, obs = b.build()
    model = make_model(b.space, b.actions, trans, rewards, discount, b.obs, obs)
    start = {"robot": "room", "person": "room", "attention": "attentive", "battery": "high",
             "motion": "none", "reminder": "none", "request": "none"}
    initial = np.zeros(model.n_states)
    initial[b.space.encode(start)] = 1.0
    name = "nursebot" if scale == "full" else "nursebot-small"
    return DomainSpec(name, model, nursebot_graph(b.actions, SCALE_SUBTASKS[scale]), initial,
                      {"scale": scale, **params.__dict__})
