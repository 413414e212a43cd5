"""Exact model minimization: reward-seeded partition refinement to a stable fixpoint.

Functions here accept any tabular problem exposing ``n_states``, ``actions``,
``transitions`` (one CSR matrix per action), ``rewards`` and, for the
observation-aware variant, ``n_observations`` / ``observation_joint(a)``.
Both :class:`~polca.model.DecisionModel` and the per-subtask problems built
by :mod:`polca.hierarchy` qualify.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .model import ModelError

EPS_STAB = 1e-9
MODES = ("mdp", "pomdp")


@dataclass(frozen=True, eq=False)
class ClusterMap:
    """State -> cluster assignment with dense, canonically ordered ids.

    Cluster ids are ordered by each cluster's smallest member state, so two
    equal partitions always compare equal as arrays.
    """

    assignment: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.assignment, dtype=np.int64)
        if z.ndim != 1 or z.size == 0:
            raise ValueError("assignment must be a non-empty 1-d array")
        _, first, inverse = np.unique(z, return_index=True, return_inverse=True)
        rank = np.empty(first.size, dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(first.size)
        canon = rank[inverse.ravel()]
        canon.flags.writeable = False
        object.__setattr__(self, "assignment", canon)

    @classmethod
    def from_clusters(cls, clusters: Sequence[Sequence[int]], n_states: int | None = None) -> ClusterMap:
        n = n_states if n_states is not None else sum(len(c) for c in clusters)
        z = np.full(n, -1, dtype=np.int64)
        for i, members in enumerate(clusters):
            members = np.asarray(members, dtype=np.int64)
            if members.size == 0:
                raise ValueError("empty cluster")
            if np.any(z[members] >= 0):
                raise ValueError("clusters overlap")
            z[members] = i
        if np.any(z < 0):
            raise ValueError("clusters do not cover the state space")
        return cls(z)

    @classmethod
    def singletons(cls, n_states: int) -> ClusterMap:
        return cls(np.arange(n_states))

    @classmethod
    def single(cls, n_states: int) -> ClusterMap:
        return cls(np.zeros(n_states, dtype=np.int64))

    @property
    def n_states(self) -> int:
        return self.assignment.size

    @property
    def n_clusters(self) -> int:
        return int(self.assignment.max()) + 1

    @property
    def clusters(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(np.bincount(self.assignment, minlength=self.n_clusters))[:-1]
        return np.split(order, bounds)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == c)

    def representatives(self) -> np.ndarray:
        reps = np.full(self.n_clusters, self.n_states, dtype=np.int64)
        np.minimum.at(reps, self.assignment, np.arange(self.n_states))
        return reps

    def indicator(self) -> sparse.csr_matrix:
        n, k = self.n_states, self.n_clusters
        return sparse.csr_matrix((np.ones(n), (np.arange(n), self.assignment)), shape=(n, k))

    def project(self, b: np.ndarray) -> np.ndarray:
        """Sum a per-state vector (e.g. a belief) into clusters."""
        return np.bincount(self.assignment, weights=np.asarray(b, dtype=float), minlength=self.n_clusters)

    def lift(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[self.assignment]

    def refines(self, other: ClusterMap) -> bool:
        """True if every cluster of ``self`` lies inside one cluster of ``other``."""
        if self.n_states != other.n_states:
            return False
        target = np.full(self.n_clusters, -1, dtype=np.int64)
        target[self.assignment] = other.assignment
        return bool(np.all(target[self.assignment] == other.assignment))

    def __eq__(self, other):
        return isinstance(other, ClusterMap) and np.array_equal(self.assignment, other.assignment)

    def __hash__(self):
        return hash(self.assignment.tobytes())

    def __repr__(self):
        return f"ClusterMap(n_states={self.n_states}, n_clusters={self.n_clusters})"

    def to_json(self) -> dict:
        return {"clusters": [c.tolist() for c in self.clusters]}


def _check_mode(problem, mode: str):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "pomdp" and not getattr(problem, "n_observations", 0):
        raise ModelError("observation-aware stability needs a model with observations")


def _quantize(x: np.ndarray, eps: float = EPS_STAB) -> np.ndarray:
    return np.rint(np.asarray(x, dtype=float) / eps).astype(np.int64)


def _action_ids(problem, action_set) -> list[int]:
    if action_set is None:
        return list(range(len(problem.actions)))
    ids = []
    for a in action_set:
        if isinstance(a, (int, np.integer)):
            ids.append(int(a))
        else:
            ids.append(list(problem.actions).index(a))
    if not ids:
        raise ValueError("action_set must be non-empty")
    return ids


def _group(keys: Sequence) -> np.ndarray:
    """Dense group ids by first appearance of each key."""
    seen: dict = {}
    return np.fromiter((seen.setdefault(k, len(seen)) for k in keys), dtype=np.int64, count=len(keys))


def init_clusters(problem, action_set=None, local_reward: np.ndarray | None = None,
                  labels: np.ndarray | None = None, eps: float = EPS_STAB) -> ClusterMap:
    """Group states whose local rewards agree on every action in ``action_set``.

    ``local_reward`` is indexed ``[s, k]`` for the k-th action of
    ``action_set`` (defaults to ``problem.rewards`` restricted to it).
    ``labels`` optionally adds extra per-state keys that must also agree
    (used for subtask-terminal flags and feature pre-grouping).
    """
    ids = _action_ids(problem, action_set)
    if local_reward is None:
        local_reward = np.asarray(problem.rewards)[:, ids]
    q = _quantize(local_reward)
    if labels is not None:
        q = np.column_stack([q, np.asarray(labels, dtype=np.int64).reshape(q.shape[0], -1)])
    return ClusterMap(_group([row.tobytes() for row in q]))


def _blocks(problem, ids: list[int], mode: str) -> list[tuple[tuple, sparse.csr_matrix]]:
    """Matrices whose (s, C_j) block sums define stability, tagged by (a[, o])."""
    out = []
    for a in ids:
        if mode == "mdp":
            out.append(((a,), problem.transitions[a]))
        else:
            for o, joint in enumerate(problem.observation_joint(a)):
                out.append(((a, o), joint))
    return out


def _signature_matrix(blocks, cmap: ClusterMap) -> sparse.csr_matrix:
    z = cmap.indicator()
    m = sparse.hstack([mat @ z for _, mat in blocks], format="csr")
    m.data = _quantize(m.data).astype(float)
    m.eliminate_zeros()
    m.sort_indices()
    return m


def _row_keys(m: sparse.csr_matrix, rows=None) -> list:
    rows = range(m.shape[0]) if rows is None else rows
    ip, ind, dat = m.indptr, m.indices, m.data
    return [(ind[ip[r]:ip[r + 1]].tobytes(), dat[ip[r]:ip[r + 1]].tobytes()) for r in rows]


@dataclass(frozen=True)
class Stability:
    stable: bool
    witness: tuple | None = None  # (s_i, s_j, C_j, a) or (s_i, s_j, C_j, a, o)

    def __bool__(self):
        return self.stable


def is_stable(problem, cmap: ClusterMap, ci: int, action_set=None, mode: str = "mdp") -> Stability:
    """Check whether every state of cluster ``ci`` has the same block sums.

    The witness is the first violating tuple under ascending iteration over
    states, then (action[, observation]), then target cluster.
    """
    _check_mode(problem, mode)
    ids = _action_ids(problem, action_set)
    members = cmap.members(ci)
    if members.size < 2:
        return Stability(True)
    z = cmap.indicator()
    s0 = int(members[0])
    for tag, mat in _blocks(problem, ids, mode):
        sums = (mat[members] @ z).toarray()
        q = _quantize(sums)
        diff = np.any(q != q[0], axis=1)
        if diff.any():
            k = int(np.argmax(diff))
            cj = int(np.argmax(q[k] != q[0]))
            return Stability(False, (s0, int(members[k]), cj, *tag))
    return Stability(True)


@dataclass(frozen=True)
class SplitResult:
    cluster_map: ClusterMap
    split: bool


def split_cluster(problem, cmap: ClusterMap, ci: int, action_set=None, mode: str = "mdp") -> SplitResult:
    """Replace cluster ``ci`` by sub-clusters of identical block-sum signature.

    Calling this on a stable cluster is a flagged no-op.
    """
    _check_mode(problem, mode)
    ids = _action_ids(problem, action_set)
    members = cmap.members(ci)
    sig = _signature_matrix(_blocks(problem, ids, mode), cmap)
    groups = _group(_row_keys(sig, members))
    if groups.max() == 0:
        return SplitResult(cmap, False)
    z = cmap.assignment.copy()
    z[members[groups > 0]] = cmap.n_clusters + groups[groups > 0] - 1
    return SplitResult(ClusterMap(z), True)


def refine_once(problem, cmap: ClusterMap, action_set=None, mode: str = "mdp") -> ClusterMap:
    """Split every unstable cluster simultaneously (one Step II/III round)."""
    ids = _action_ids(problem, action_set)
    sig = _signature_matrix(_blocks(problem, ids, mode), cmap)
    keys = _row_keys(sig)
    return ClusterMap(_group(list(zip(cmap.assignment.tolist(), keys))))


def minimize(problem, action_set=None, local_reward: np.ndarray | None = None, mode: str = "mdp",
             labels: np.ndarray | None = None, init: ClusterMap | None = None) -> ClusterMap:
    """Coarsest stable refinement of the reward-seeded partition.

    Each round splits all unstable clusters at once, so the cluster count
    strictly increases until the fixpoint and the loop runs at most
    ``n_states - |C_0|`` rounds.
    """
    _check_mode(problem, mode)
    ids = _action_ids(problem, action_set)
    cmap = init if init is not None else init_clusters(problem, ids, local_reward, labels)
    blocks = _blocks(problem, ids, mode)
    while True:
        sig = _signature_matrix(blocks, cmap)
        refined = ClusterMap(_group(list(zip(cmap.assignment.tolist(), _row_keys(sig)))))
        if refined.n_clusters == cmap.n_clusters:
            return cmap
        cmap = refined


def partition_is_stable(problem, cmap: ClusterMap, action_set=None, mode: str = "mdp") -> bool:
    ids = _action_ids(problem, action_set)
    return refine_once(problem, cmap, ids, mode).n_clusters == cmap.n_clusters


@dataclass(frozen=True, eq=False)
class ClusteredModel:
    """A problem re-expressed over the clusters of a stable partition.

    ``obs_joint[a][o]`` holds ``P(C_j, o | C_i, a)``, the quantity the
    observation-aware stability test keeps constant within clusters; it is
    what exact belief tracking over clusters needs.
    """

    cluster_map: ClusterMap
    actions: tuple[str, ...]
    transitions: tuple[sparse.csr_matrix, ...]
    rewards: np.ndarray
    discount: float
    continuation: np.ndarray
    observations: tuple[str, ...] | None = None
    obs_joint: tuple[tuple[sparse.csr_matrix, ...], ...] | None = None

    @property
    def n_clusters(self) -> int:
        return self.cluster_map.n_clusters

    n_states = n_clusters

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return 0 if self.observations is None else len(self.observations)

    @property
    def kind(self) -> str:
        return "mdp" if self.obs_joint is None else "pomdp"

    def observation_joint(self, a: int) -> list[sparse.csr_matrix]:
        return list(self.obs_joint[a])

    def dense_transitions(self) -> np.ndarray:
        return np.stack([t.toarray() for t in self.transitions])

    def dense_obs_joint(self) -> np.ndarray:
        """Array ``[a, o, C_i, C_j]``."""
        return np.stack([np.stack([m.toarray() for m in row]) for row in self.obs_joint])

    def n_params(self) -> int:
        """|C|·|A| reward entries plus nonzero projected transition entries."""
        return self.n_clusters * self.n_actions + sum(int(t.nnz) for t in self.transitions)

    def n_q_values(self) -> int:
        return self.n_clusters * self.n_actions

    def belief_update(self, bc: np.ndarray, a: int, o: int) -> np.ndarray:
        unnorm = self.obs_joint[a][o].T @ np.asarray(bc, dtype=float)
        z = unnorm.sum()
        if not z > 0:
            raise ModelError("observation impossible under clustered belief")
        return unnorm / z


def project_model(problem, cmap: ClusterMap, action_set=None, local_reward: np.ndarray | None = None,
                  mode: str = "mdp", eps: float = EPS_STAB) -> ClusteredModel:
    """Re-express transitions and rewards over clusters.

    Each cluster uses its smallest state as representative; every member is
    checked against it, so an unstable partition is rejected.
    """
    _check_mode(problem, mode)
    ids = _action_ids(problem, action_set)
    if local_reward is None:
        local_reward = np.asarray(problem.rewards)[:, ids]
    local_reward = np.asarray(local_reward, dtype=float)
    reps = cmap.representatives()
    z = cmap.indicator()
    zs = cmap.assignment

    def project(mat):
        blocks = (mat @ z).tocsr()
        dense_gap = blocks - blocks[reps][zs]
        if dense_gap.nnz and np.max(np.abs(dense_gap.data)) > eps:
            raise ModelError("partition is not stable; cluster projection is ill-defined")
        out = sparse.csr_matrix(blocks[reps])
        out.eliminate_zeros()
        return out

    if np.max(np.abs(local_reward - local_reward[reps][zs]), initial=0.0) > eps:
        raise ModelError("rewards are not constant within clusters")
    trans = tuple(project(problem.transitions[a]) for a in ids)
    cont_states = getattr(problem, "continuation", None)
    if cont_states is None:
        cont = np.ones(cmap.n_clusters)
    else:
        cont_states = np.asarray(cont_states, dtype=float)
        if np.max(np.abs(cont_states - cont_states[reps][zs]), initial=0.0) > 0:
            raise ModelError("terminal flags are not constant within clusters")
        cont = cont_states[reps].copy()
    obs_names, joint = None, None
    if mode == "pomdp":
        obs_names = tuple(problem.observations)
        joint = tuple(tuple(project(m) for m in problem.observation_joint(a)) for a in ids)
    rewards = local_reward[reps].copy()
    rewards.flags.writeable = False
    cont.flags.writeable = False
    return ClusteredModel(cmap, tuple(problem.actions[a] for a in ids), trans, rewards,
                          float(problem.discount), cont, obs_names, joint)


def cluster_report(cm: ClusteredModel) -> dict:
    cmap = cm.cluster_map
    return {
        **cmap.to_json(),
        "summary": {"n_states": cmap.n_states, "n_clusters": cmap.n_clusters, "n_params": cm.n_params()},
    }
