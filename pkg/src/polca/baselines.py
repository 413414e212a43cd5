"""Unhierarchical reference planners: flat clustered value iteration and QMDP."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from . import abstraction, solvers
from .abstraction import ClusteredModel, ClusterMap
from .model import DecisionModel


@dataclass(eq=False)
class FlatPlanner:
    """Optimal MDP solution of the whole model, computed on its minimized
    quotient. Called with a state it acts optimally; called with a belief it
    acts at the most likely state (``qmdp=False``) or by belief-weighted
    Q-values (``qmdp=True``)."""

    model: DecisionModel
    cluster_map: ClusterMap
    clustered: ClusteredModel
    value: solvers.ValueFunction
    q_states: np.ndarray  # (S, A)
    policy: np.ndarray  # per state
    qmdp: bool = False
    seconds: float = 0.0

    def __call__(self, world) -> int:
        if np.isscalar(world) or np.ndim(world) == 0:
            return int(self.policy[int(world)])
        b = np.asarray(world, dtype=float)
        if self.qmdp:
            return int(solvers.greedy(b @ self.q_states)[0])
        return int(self.policy[int(np.argmax(b))])

    @property
    def values(self) -> np.ndarray:
        return self.value.values[self.cluster_map.assignment]

    def n_params(self) -> int:
        return self.clustered.n_params()


def plan_flat(model: DecisionModel, gamma: float | None = None, tolerance: float = 1e-10,
              max_iters: int = 100_000, qmdp: bool = False) -> FlatPlanner:
    t0 = time.perf_counter()
    gamma = model.discount if gamma is None else gamma
    cmap = abstraction.minimize(model, mode="mdp")
    cm = abstraction.project_model(model, cmap, mode="mdp")
    vf = solvers.value_iterate(cm, gamma, tolerance, max_iters)
    pol = solvers.extract_policy(cm, vf, gamma)
    q_states = vf.q[cmap.assignment]
    return FlatPlanner(model, cmap, cm, vf, q_states, pol[cmap.assignment], qmdp,
                       time.perf_counter() - t0)


def plan_qmdp(model: DecisionModel, **kw) -> FlatPlanner:
    if model.kind != "pomdp":
        raise ValueError("QMDP needs a model with observations")
    return plan_flat(model, qmdp=True, **kw)


def evaluate_state_policy(model: DecisionModel, policy: np.ndarray, gamma: float | None = None,
                          terminal: np.ndarray | None = None) -> np.ndarray:
    """Exact discounted value of a deterministic state policy on the flat
    model. States flagged ``terminal`` end the episode (value 0)."""
    gamma = model.discount if gamma is None else gamma
    n = model.n_states
    policy = np.asarray(policy, dtype=np.int64)
    rows = []
    for a in range(model.n_actions):
        sel = sparse.diags((policy == a).astype(float))
        rows.append(sel @ model.transitions[a])
    p = sum(rows[1:], rows[0]).tocsr()
    r = model.rewards[np.arange(n), policy].astype(float)
    if terminal is not None:
        keep = sparse.diags((~np.asarray(terminal, dtype=bool)).astype(float))
        p = (keep @ p).tocsr()
        r = np.where(terminal, 0.0, r)
    return np.asarray(spsolve((sparse.identity(n, format="csc") - gamma * p).tocsc(), r))
