"""Taxi and Taxi2 on the canonical 5x5 map.

Rewards: -1 per step, +20 for a successful putdown, -10 for an illegal
pickup/putdown (state unchanged). Delivered states (passenger dropped at
the destination) are absorbing with zero reward. Moves are deterministic;
a move into a wall or the border leaves the taxi in place.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from ..hierarchy import RewardEntry, Subtask, TaskGraph
from ..model import FeatureSpace, make_model
from . import DomainSpec

SIZE = 5
LANDMARKS = {"Y": (0, 4), "B": (3, 4), "R": (0, 0), "G": (4, 0)}  # (x, y), y grows southward
DESTINATIONS = ("Y", "B", "R", "G")
ACTIONS = ("North", "South", "East", "West", "Pickup", "Putdown")
# east-west walls: a wall on the east side of (x, y)
EAST_WALLS = {(1, 0), (1, 1), (0, 3), (2, 3), (0, 4), (2, 4)}

STEP, DELIVER, ILLEGAL = -1.0, 20.0, -10.0


def move(x: int, y: int, action: str) -> tuple[int, int]:
    if action == "North":
        return x, max(y - 1, 0)
    if action == "South":
        return x, min(y + 1, SIZE - 1)
    if action == "East":
        return (x, y) if (x, y) in EAST_WALLS or x == SIZE - 1 else (x + 1, y)
    if action == "West":
        return (x, y) if (x - 1, y) in EAST_WALLS or x == 0 else (x - 1, y)
    raise ValueError(action)


def cell_label(x: int, y: int) -> str:
    return f"x{x}y{y}"


def _build(name: str, passenger_cells: dict[str, tuple[int, int]], nav_source: bool,
           step=STEP, deliver=DELIVER, illegal=ILLEGAL, discount=0.95) -> DomainSpec:
    pass_vals = list(passenger_cells) + ["taxi"]
    space = FeatureSpace.from_features([
        ("X", [str(i) for i in range(SIZE)]),
        ("Y", [str(i) for i in range(SIZE)]),
        ("Passenger", pass_vals),
        ("Destination", list(DESTINATIONS)),
    ])
    cell_of_pass = {v: passenger_cells[v] for v in passenger_cells}
    # the passenger value standing for "at destination d"
    dest_value = {d: next(v for v, c in passenger_cells.items() if c == LANDMARKS[d]) for d in DESTINATIONS}
    n = space.n_states
    rows = [[] for _ in ACTIONS]
    rewards = np.zeros((n, len(ACTIONS)))
    taxi_p = pass_vals.index("taxi")
    for s in range(n):
        x, y, p, d = space.decode(s)
        pv, dv = pass_vals[p], DESTINATIONS[d]
        delivered = pv != "taxi" and cell_of_pass[pv] == LANDMARKS[dv]
        for a, act in enumerate(ACTIONS):
            if delivered:
                rows[a].append(s)
                continue
            if act in ("North", "South", "East", "West"):
                nx, ny = move(x, y, act)
                rows[a].append(space.encode((nx, ny, p, d)))
                rewards[s, a] = step
            elif act == "Pickup":
                if pv != "taxi" and cell_of_pass[pv] == (x, y):
                    rows[a].append(space.encode((x, y, taxi_p, d)))
                    rewards[s, a] = step
                else:
                    rows[a].append(s)
                    rewards[s, a] = illegal
            else:
                if pv == "taxi" and (x, y) == LANDMARKS[dv]:
                    rows[a].append(space.encode((x, y, pass_vals.index(dest_value[dv]), d)))
                    rewards[s, a] = deliver
                else:
                    rows[a].append(s)
                    rewards[s, a] = illegal
    trans = [sparse.csr_matrix((np.ones(n), (np.arange(n), np.array(r))), shape=(n, n)) for r in rows]
    model = make_model(space, ACTIONS, trans, rewards, discount)

    delivered_cond = {"any": [{"Passenger": dest_value[d], "Destination": d} for d in DESTINATIONS]}
    navs = []
    for t in ("R", "G", "Y", "B"):
        tx, ty = LANDMARKS[t]
        at = {"X": str(tx), "Y": str(ty)}
        navs.append(Subtask(f"Navigate_{t}", ACTIONS[:4], (RewardEntry(at, 1.0),), at, ("X", "Y")))
    landmark_navs = tuple(nv.id for nv in navs)
    if nav_source:
        at_passenger = {"any": [{"X": str(cx), "Y": str(cy), "Passenger": v}
                                for v, (cx, cy) in passenger_cells.items()]}
        navs.append(Subtask("Navigate_source", ACTIONS[:4], (RewardEntry(at_passenger, 1.0),),
                            at_passenger, ("X", "Y", "Passenger")))
        get_children = ("Navigate_source", "Pickup")
    else:
        get_children = landmark_navs + ("Pickup",)
    in_taxi = {"Passenger": "taxi"}
    graph = TaskGraph.build("Root", [
        Subtask("Root", ("Get", "Put"), terminal=delivered_cond),
        Subtask("Get", get_children, terminal=in_taxi),
        Subtask("Put", landmark_navs + ("Putdown",), terminal={"not": in_taxi}),
        *navs,
    ])
    params = {"step": step, "deliver": deliver, "illegal": illegal, "walls": sorted(EAST_WALLS)}
    return DomainSpec(name, model, graph, None, params)


def build_taxi(**kw) -> DomainSpec:
    """Passenger starts at one of the four landmarks: 25*5*4 = 500 states."""
    return _build("taxi", dict(LANDMARKS), nav_source=False, **kw)


def build_taxi2(**kw) -> DomainSpec:
    """Passenger may start in any cell: 25*26*4 = 2600 states.

    The pickup side navigates with a single subtask whose target is the
    passenger's current cell, since a fixed-target subtask per cell would
    add 25 navigation subtasks.
    """
    cells = {cell_label(x, y): (x, y) for y in range(SIZE) for x in range(SIZE)}
    return _build("taxi2", cells, nav_source=True, **kw)
