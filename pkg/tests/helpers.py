"""Random model generators and brute-force oracles shared by the tests."""

from __future__ import annotations

import numpy as np

from polca.model import FeatureSpace, make_model


def random_mdp(rng: np.random.Generator, n: int, n_actions: int, discount: float = 0.95,
               duplicate: bool = True, n_obs: int = 0, with_kinds: bool = False):
    """Random model, optionally with many behaviourally identical states.

    With ``duplicate`` the states are copies of a few prototypes with the
    outgoing mass split among each prototype's copies, so minimization has
    something to merge. ``with_kinds`` also returns each state's prototype.
    """
    protos = max(2, n // 3) if duplicate else n
    kind = rng.integers(protos, size=n)
    kind[:protos] = np.arange(protos)
    members = [np.flatnonzero(kind == k) for k in range(protos)]
    base_t = rng.dirichlet(np.ones(protos) * 0.5, size=(n_actions, protos))
    base_r = rng.integers(-3, 4, size=(protos, n_actions)).astype(float)
    t = np.zeros((n_actions, n, n))
    for a in range(n_actions):
        for s in range(n):
            for k in range(protos):
                share = rng.dirichlet(np.ones(len(members[k])))
                t[a, s, members[k]] = base_t[a, kind[s], k] * share
    r = base_r[kind]
    space = FeatureSpace.from_features([("s", n)])
    actions = [f"a{i}" for i in range(n_actions)]
    if not n_obs:
        m = make_model(space, actions, t, r, discount)
    else:
        base_o = rng.dirichlet(np.ones(n_obs), size=(n_actions, protos))
        m = make_model(space, actions, t, r, discount, [f"o{i}" for i in range(n_obs)],
                       base_o[:, kind, :])
    return (m, kind) if with_kinds else m


def belief_value(model, b: np.ndarray, horizon: int, gamma: float | None = None) -> float:
    """Optimal finite-horizon value at belief ``b`` by exhaustive recursion."""
    gamma = model.discount if gamma is None else gamma
    if horizon == 0:
        return 0.0
    best = -np.inf
    for a in range(model.n_actions):
        v = float(b @ model.rewards[:, a])
        pred = model.transitions[a].T @ b
        for o in range(model.n_observations):
            un = model.obs_model[a, :, o] * pred
            p = un.sum()
            if p > 1e-15:
                v += gamma * p * belief_value(model, un / p, horizon - 1, gamma)
        best = max(best, v)
    return best


def tiger(discount: float = 0.95, accuracy: float = 0.85):
    """The classic two-door tiger problem."""
    space = FeatureSpace.from_features([("tiger", ["left", "right"])])
    actions = ["listen", "open-left", "open-right"]
    t = np.zeros((3, 2, 2))
    t[0] = np.eye(2)
    t[1] = t[2] = 0.5
    r = np.array([[-1.0, -100.0, 10.0], [-1.0, 10.0, -100.0]])
    obs = np.full((3, 2, 2), 0.5)
    obs[0] = [[accuracy, 1 - accuracy], [1 - accuracy, accuracy]]
    return make_model(space, actions, t, r, discount, ["hear-left", "hear-right"], obs)
