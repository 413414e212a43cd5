"""Task graphs, subtask parameterization with policy-contingent abstract
actions, and the bottom-up plan/cluster/solve pipeline."""

from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import sparse

from . import abstraction, solvers
from .abstraction import EPS_STAB, ClusteredModel, ClusterMap
from .model import DecisionModel, FeatureSpace, ModelError

log = logging.getLogger(__name__)


class HierarchyError(ValueError):
    pass


class UnsolvableSubtaskError(HierarchyError):
    """A subtask's local reward is uniform and no pseudo-reward makes it otherwise."""


class OrderingError(HierarchyError):
    """A subtask was parameterized before one of its child subtasks was solved."""


class PlanningError(RuntimeError):
    def __init__(self, subtask: str, cause: Exception):
        super().__init__(f"subtask {subtask!r}: {cause}")
        self.subtask = subtask
        self.cause = cause


# --- conditions over features -------------------------------------------------

def condition_mask(space: FeatureSpace, cond) -> np.ndarray:
    """Boolean mask over states for a feature condition.

    A condition is ``True``/``False``, a mapping ``{feature: value-or-list}``
    (conjunction), or one of ``{"any": [...]}``, ``{"all": [...]}``,
    ``{"not": cond}``.
    """
    n = space.n_states
    if cond is None or cond is False:
        return np.zeros(n, dtype=bool)
    if cond is True:
        return np.ones(n, dtype=bool)
    if not isinstance(cond, Mapping):
        raise HierarchyError(f"bad condition {cond!r}")
    if "any" in cond or "all" in cond or "not" in cond:
        if len(cond) != 1:
            raise HierarchyError(f"combinator must be the only key: {cond!r}")
        (op, arg), = cond.items()
        if op == "not":
            return ~condition_mask(space, arg)
        masks = [condition_mask(space, c) for c in arg]
        if op == "any":
            return np.logical_or.reduce(masks) if masks else np.zeros(n, dtype=bool)
        return np.logical_and.reduce(masks) if masks else np.ones(n, dtype=bool)
    grid = space.feature_grid()
    mask = np.ones(n, dtype=bool)
    for feat, val in cond.items():
        f = space.index(feat)
        vals = val if isinstance(val, (list, tuple)) else [val]
        ok = [space.value_index(feat, v) for v in vals]
        mask &= np.isin(grid[:, f], ok)
    return mask


# --- task graph ----------------------------------------------------------------

@dataclass(frozen=True)
class RewardEntry:
    """A reward term applied at states matching ``condition`` for ``action``
    (a child name; ``None`` means every child)."""

    condition: object
    value: float = 1.0
    action: str | None = None

    def to_json(self):
        return {"condition": self.condition, "action": self.action, "value": self.value}

    @classmethod
    def from_json(cls, d):
        return cls(d["condition"], float(d.get("value", 1.0)), d.get("action"))


@dataclass(frozen=True)
class Subtask:
    id: str
    children: tuple[str, ...]
    pseudo_rewards: tuple[RewardEntry, ...] = ()
    terminal: object = None
    relevant_features: tuple[str, ...] | None = None
    reward_overrides: tuple[RewardEntry, ...] = ()

    def to_json(self):
        d = {"id": self.id, "children": list(self.children)}
        if self.pseudo_rewards:
            d["pseudo_rewards"] = [p.to_json() for p in self.pseudo_rewards]
        if self.reward_overrides:
            d["reward_overrides"] = [p.to_json() for p in self.reward_overrides]
        if self.terminal is not None:
            d["terminal"] = self.terminal
        if self.relevant_features is not None:
            d["relevant_features"] = list(self.relevant_features)
        return d

    @classmethod
    def from_json(cls, d):
        rel = d.get("relevant_features")
        return cls(
            d["id"], tuple(d["children"]),
            tuple(RewardEntry.from_json(p) for p in d.get("pseudo_rewards", ())),
            d.get("terminal"),
            None if rel is None else tuple(rel),
            tuple(RewardEntry.from_json(p) for p in d.get("reward_overrides", ())),
        )


@dataclass(frozen=True)
class TaskGraph:
    root: str
    nodes: Mapping[str, Subtask]

    @classmethod
    def build(cls, root: str, subtasks) -> TaskGraph:
        return cls(root, {s.id: s for s in subtasks})

    @classmethod
    def flat(cls, model: DecisionModel, root: str = "root") -> TaskGraph:
        """Degenerate hierarchy: a root whose children are all primitives."""
        return cls.build(root, [Subtask(root, model.actions)])

    def is_subtask(self, name: str) -> bool:
        return name in self.nodes

    def subtask_children(self, h: str) -> list[str]:
        return [c for c in self.nodes[h].children if c in self.nodes]

    def depth(self) -> int:
        """Longest root-to-primitive path, counted in subtasks."""
        memo: dict[str, int] = {}

        def d(h, stack=()):
            if h in stack:
                raise HierarchyError(f"cycle through {h!r}")
            if h not in memo:
                memo[h] = 1 + max([d(c, stack + (h,)) for c in self.subtask_children(h)], default=0)
            return memo[h]
        return d(self.root)

    def primitives_below(self, h: str) -> list[str]:
        seen, out, stack = set(), [], [h]
        while stack:
            node = stack.pop()
            for c in self.nodes[node].children:
                if c in self.nodes:
                    if c not in seen:
                        seen.add(c)
                        stack.append(c)
                elif c not in out:
                    out.append(c)
        return out

    def to_json(self) -> dict:
        return {"root": self.root, "nodes": [self.nodes[k].to_json() for k in self.nodes]}

    @classmethod
    def from_json(cls, d) -> TaskGraph:
        return cls.build(d["root"], [Subtask.from_json(n) for n in d["nodes"]])


def _reward_entry_violations(graph, model, h, entries, label) -> list[str]:
    out = []
    for e in entries:
        if e.action is not None and e.action not in graph.nodes[h].children:
            out.append(f"{h}: {label} names {e.action!r}, not a child")
        try:
            condition_mask(model.space, e.condition)
        except (HierarchyError, ModelError) as exc:
            out.append(f"{h}: bad {label} condition ({exc})")
    return out


def validate_task_graph(graph: TaskGraph, model: DecisionModel) -> list[str]:
    """Every structural violation of ``graph`` against ``model``; empty means valid."""
    out: list[str] = []
    actions = set(model.actions)
    if graph.root not in graph.nodes:
        return [f"root {graph.root!r} is not a subtask"]
    for h, node in graph.nodes.items():
        if h != node.id:
            out.append(f"node key {h!r} does not match id {node.id!r}")
        if h in actions:
            out.append(f"subtask id {h!r} collides with a primitive action")
        if not node.children:
            out.append(f"{h}: internal node has no children")
        if len(set(node.children)) != len(node.children):
            out.append(f"{h}: duplicate children")
        for c in node.children:
            if c not in graph.nodes and c not in actions:
                out.append(f"{h}: unknown child {c!r}")
        out += _reward_entry_violations(graph, model, h, node.pseudo_rewards, "pseudo-reward")
        out += _reward_entry_violations(graph, model, h, node.reward_overrides, "reward override")
        if node.terminal is not None:
            try:
                condition_mask(model.space, node.terminal)
            except (HierarchyError, ModelError) as exc:
                out.append(f"{h}: bad terminal condition ({exc})")
        if node.relevant_features is not None:
            for f in node.relevant_features:
                if f not in model.space.names:
                    out.append(f"{h}: unknown relevant feature {f!r}")
    # cycles
    color: dict[str, int] = {}

    def visit(h, path):
        color[h] = 1
        for c in graph.subtask_children(h):
            if color.get(c) == 1:
                out.append("cycle: " + " -> ".join(path + [h, c]))
            elif c not in color:
                visit(c, path + [h])
        color[h] = 2
    for h in sorted(graph.nodes):
        if h not in color:
            visit(h, [])
    if any(v.startswith("cycle") for v in out):
        return out
    reachable_subtasks = {graph.root}
    stack = [graph.root]
    while stack:
        for c in graph.subtask_children(stack.pop()):
            if c not in reachable_subtasks:
                reachable_subtasks.add(c)
                stack.append(c)
    for h in sorted(set(graph.nodes) - reachable_subtasks):
        out.append(f"subtask {h!r} unreachable from root")
    covered = set(graph.primitives_below(graph.root))
    for a in model.actions:
        if a not in covered:
            out.append(f"primitive action {a!r} unreachable from root")
    # non-uniform local reward (checked on the primitive level, before solving)
    for h, node in graph.nodes.items():
        if node.pseudo_rewards or node.reward_overrides:
            continue
        prims = [a for a in graph.primitives_below(h) if a in actions]
        if not prims:
            continue
        r = model.rewards[:, [model.action_index(a) for a in prims]]
        if np.ptp(r) <= EPS_STAB:
            out.append(f"{h}: local reward is uniform; a pseudo-reward is required")
    return out


def check_task_graph(graph: TaskGraph, model: DecisionModel) -> TaskGraph:
    report = validate_task_graph(graph, model)
    if report:
        raise HierarchyError("invalid task graph: " + "; ".join(report))
    return graph


def bottom_up_order(graph: TaskGraph) -> list[str]:
    """Children before parents; among ready subtasks the smallest id goes first."""
    pending = {h: set(graph.subtask_children(h)) for h in graph.nodes}
    parents: dict[str, set[str]] = {h: set() for h in graph.nodes}
    for h, kids in pending.items():
        for c in kids:
            parents[c].add(h)
    ready = [h for h, kids in pending.items() if not kids]
    heapq.heapify(ready)
    order = []
    while ready:
        h = heapq.heappop(ready)
        order.append(h)
        for p in parents[h]:
            pending[p].discard(h)
            if not pending[p]:
                heapq.heappush(ready, p)
    if len(order) != len(graph.nodes):
        raise HierarchyError("task graph has a cycle")
    return order


# --- subtask problems --------------------------------------------------------------

@dataclass(eq=False)
class SubtaskProblem:
    """One subtask's copy of the state space with its parameterized model.

    ``primitive_of[k, s]`` is the primitive executed when action ``k`` of
    this subtask is taken at ``s`` (constant for primitive children, the
    poll-resolved primitive of the child policy for abstract ones).
    Terminal states are absorbing with zero continuation value and emit
    no observations.
    """

    subtask: str
    space: FeatureSpace
    actions: tuple[str, ...]
    abstract: tuple[bool, ...]
    transitions: tuple[sparse.csr_matrix, ...]
    rewards: np.ndarray
    discount: float
    primitive_of: np.ndarray
    terminal: np.ndarray
    observations: tuple[str, ...] | None = None
    _obs_model: np.ndarray | None = field(default=None, repr=False)
    _joint_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_states(self) -> int:
        return self.space.n_states

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return 0 if self.observations is None else len(self.observations)

    @property
    def continuation(self) -> np.ndarray:
        return (~self.terminal).astype(float)

    def observation_joint(self, k: int) -> list[sparse.csr_matrix]:
        if self._obs_model is None:
            raise ModelError("subtask has no observation model")
        if k not in self._joint_cache:
            t = self.transitions[k]
            prim = self.primitive_of[k]
            coo = t.tocoo()
            # the subtask has ended at terminal states: they emit nothing
            live = ~self.terminal[coo.row]
            coo = sparse.coo_matrix((coo.data[live], (coo.row[live], coo.col[live])), shape=t.shape)
            out = []
            for o in range(self.n_observations):
                w = self._obs_model[prim[coo.row], coo.col, o]
                m = sparse.csr_matrix((coo.data * w, (coo.row, coo.col)), shape=t.shape)
                m.eliminate_zeros()
                out.append(m)
            self._joint_cache[k] = out
        return self._joint_cache[k]


def _primitive_reward_table(model: DecisionModel, node: Subtask) -> np.ndarray:
    """Local reward over (s, primitive): true reward with declared overrides."""
    r = np.array(model.rewards, dtype=float)
    for e in node.reward_overrides:
        mask = condition_mask(model.space, e.condition)
        cols = range(model.n_actions) if e.action is None else [model.action_index(e.action)]
        for a in cols:
            r[mask, a] = e.value
    return r


def _resolve_children(model, graph, h, solved) -> np.ndarray:
    node = graph.nodes[h]
    n = model.n_states
    prim = np.empty((len(node.children), n), dtype=np.int64)
    for k, c in enumerate(node.children):
        if graph.is_subtask(c):
            if c not in solved:
                raise OrderingError(f"{h}: child subtask {c!r} is not solved yet")
            prim[k] = solved[c].resolved
        else:
            prim[k] = model.action_index(c)
    return prim


def effective_local_reward(model: DecisionModel, graph: TaskGraph, h: str,
                           solved: Mapping | None = None) -> np.ndarray:
    """Local reward over ``(s, child)`` for subtask ``h``.

    Abstract children take the local reward of the primitive their solved
    policy selects at ``s``; pseudo-rewards add on top.
    """
    node = graph.nodes[h]
    prim = _resolve_children(model, graph, h, solved or {})
    base = _primitive_reward_table(model, node)
    n = model.n_states
    table = base[np.arange(n)[None, :], prim].T.copy()
    for e in node.pseudo_rewards:
        mask = condition_mask(model.space, e.condition)
        cols = range(len(node.children)) if e.action is None else [node.children.index(e.action)]
        for k in cols:
            table[mask, k] += e.value
    if np.ptp(table) <= EPS_STAB:
        raise UnsolvableSubtaskError(f"{h}: local reward is uniform; add a pseudo-reward")
    return table


def _select_rows(mats: tuple[sparse.csr_matrix, ...], choice: np.ndarray) -> sparse.csr_matrix:
    n = mats[0].shape[0]
    stacked = sparse.vstack(mats, format="csr")
    return stacked[choice * n + np.arange(n)]


def parameterize_subtask(model: DecisionModel, graph: TaskGraph, h: str,
                         solved: Mapping | None = None) -> SubtaskProblem:
    """Build subtask ``h``'s model: primitive children copy their rows;
    abstract children use the one-step row of the primitive their solved
    policy picks at each state."""
    solved = solved or {}
    node = graph.nodes[h]
    prim = _resolve_children(model, graph, h, solved)
    rewards = effective_local_reward(model, graph, h, solved)
    terminal = condition_mask(model.space, node.terminal)
    n = model.n_states
    eye = sparse.identity(n, format="csr")
    trans = []
    for k in range(len(node.children)):
        t = _select_rows(model.transitions, prim[k])
        if terminal.any():
            keep = sparse.diags((~terminal).astype(float))
            t = (keep @ t + sparse.diags(terminal.astype(float)) @ eye).tocsr()
        t.sort_indices()
        trans.append(t)
    rewards.flags.writeable = False
    return SubtaskProblem(
        h, model.space, tuple(node.children), tuple(graph.is_subtask(c) for c in node.children),
        tuple(trans), rewards, model.discount, prim, terminal,
        model.observations, model.obs_model,
    )


# --- plan -------------------------------------------------------------------------

@dataclass
class PlanOptions:
    gamma: float | None = None
    tolerance: float = 1e-8
    pomdp_tolerance: float = 1e-6
    max_iters: int = 100_000
    top_solver: str = "exact"  # exact | qmdp
    max_clusters: int = solvers.DEFAULT_MAX_CLUSTERS
    prune: str = "lp"
    horizon: int | None = None
    pre_group: bool = False
    max_vectors: int | None = solvers.DEFAULT_MAX_VECTORS
    fallback: str = "pbvi"  # pbvi | none: what to do when exact solving exceeds its budget
    pbvi_beliefs: int = 300


@dataclass(eq=False)
class SolvedSubtask:
    id: str
    problem: SubtaskProblem
    cluster_map: ClusterMap
    clustered: ClusteredModel
    solver: str  # vi | exact | pbvi | qmdp
    value: object
    policy: np.ndarray | None
    choice: np.ndarray  # chosen child index at each state's degenerate belief
    resolved: np.ndarray  # poll-resolved primitive at each state
    seconds: float = 0.0

    @property
    def actions(self) -> tuple[str, ...]:
        return self.problem.actions

    def choose_cluster(self, c: int) -> int:
        if self.solver == "vi":
            return int(self.policy[c])
        if self.solver == "qmdp":
            return int(solvers.greedy(self.value.q[c])[0])
        corner = np.zeros(self.cluster_map.n_clusters)
        corner[c] = 1.0
        return self.value.action(corner)

    def choose(self, world) -> int:
        """Child index chosen for a state (int) or a belief over states."""
        if np.isscalar(world) or np.ndim(world) == 0:
            return int(self.choice[int(world)])
        b = np.asarray(world, dtype=float)
        if self.solver == "vi":
            return int(self.choice[int(np.argmax(b))])
        bc = self.cluster_map.project(b)
        if self.solver == "qmdp":
            return solvers.qmdp_action(self.value, bc)
        return self.value.action(bc)

    def residual(self, beliefs: np.ndarray | None = None) -> float:
        """Bellman residual of the stored value on this subtask's clustered model."""
        if self.solver == "vi":
            return solvers.bellman_residual(self.clustered, self.value.values)
        if self.solver == "qmdp":
            return solvers.bellman_residual(self.clustered, self.value.values)
        if beliefs is None:
            beliefs = self.value.beliefs if self.solver == "pbvi" \
                else solvers.sample_beliefs(self.cluster_map.n_clusters)
        return solvers.pomdp_bellman_residual(self.clustered, self.value, beliefs)

    def stats(self) -> dict:
        it = getattr(self.value, "iterations", None)
        if it is None and isinstance(self.value, solvers.QTable):
            it = self.value.value_function.iterations
        return {
            "subtask": self.id, "states": self.cluster_map.n_states, "clusters": self.cluster_map.n_clusters,
            "actions": len(self.actions), "solver": self.solver, "iterations": it,
            "residual": self.residual(), "n_params": self.clustered.n_params(),
            "q_values": self.clustered.n_q_values(), "seconds": round(self.seconds, 4),
        }


@dataclass(eq=False)
class HierarchicalPolicy:
    graph: TaskGraph
    mode: str
    subtasks: dict[str, SolvedSubtask]
    order: list[str]
    discount: float

    @property
    def root(self) -> SolvedSubtask:
        return self.subtasks[self.graph.root]

    def n_params(self) -> int:
        return sum(s.clustered.n_params() for s in self.subtasks.values())

    def n_q_values(self) -> int:
        return sum(s.clustered.n_q_values() for s in self.subtasks.values())

    def resolved_policy(self) -> np.ndarray:
        """Primitive chosen by polling from the root at each (fully known) state."""
        return self.root.resolved

    def to_json(self) -> dict:
        subs = {}
        for h in self.order:
            s = self.subtasks[h]
            entry = {
                "actions": list(s.actions),
                "solver": s.solver,
                **s.cluster_map.to_json(),
                "greedy": [s.actions[s.choose_cluster(c)] for c in range(s.cluster_map.n_clusters)],
            }
            if s.solver == "vi":
                entry["values"] = s.value.values.tolist()
            elif s.solver == "qmdp":
                entry["q"] = s.value.q.tolist()
            else:
                entry["alpha_vectors"] = [
                    {"action": s.actions[a], "vector": v.tolist()}
                    for v, a in zip(s.value.vectors, s.value.actions)
                ]
            subs[h] = entry
        return {"mode": self.mode, "root": self.graph.root, "order": self.order,
                "discount": self.discount, "subtasks": subs}


def _labels(model, node: Subtask, terminal: np.ndarray, pre_group: bool) -> np.ndarray:
    cols = [terminal.astype(np.int64)]
    if pre_group and node.relevant_features:
        grid = model.space.feature_grid()
        cols += [grid[:, model.space.index(f)] for f in node.relevant_features]
    return np.column_stack(cols)


def solve_subtask(model: DecisionModel, graph: TaskGraph, h: str, solved: Mapping,
                  mode: str = "mdp", options: PlanOptions | None = None) -> SolvedSubtask:
    """Parameterize, cluster, project and solve one subtask."""
    opts = options or PlanOptions()
    t0 = time.perf_counter()
    problem = parameterize_subtask(model, graph, h, solved)
    labels = _labels(model, graph.nodes[h], problem.terminal, opts.pre_group)
    cmap = abstraction.minimize(problem, mode=mode, labels=labels)
    cm = abstraction.project_model(problem, cmap, mode=mode)
    gamma = opts.gamma if opts.gamma is not None else model.discount
    policy = None
    if mode == "mdp":
        value = solvers.value_iterate(cm, gamma, opts.tolerance, opts.max_iters)
        policy = solvers.extract_policy(cm, value, gamma)
        solver = "vi"
    elif h == graph.root and opts.top_solver == "qmdp":
        value = solvers.qmdp_solve(cm, gamma, opts.tolerance, opts.max_iters)
        solver = "qmdp"
    else:
        try:
            value = solvers.solve_pomdp_exact(cm, gamma, opts.pomdp_tolerance, opts.horizon,
                                              opts.max_clusters, opts.prune,
                                              max_vectors=opts.max_vectors)
            solver = "exact"
        except solvers.TooLargeError as exc:
            if opts.fallback != "pbvi":
                raise
            log.info("%s: %s; using point-based value iteration", h, exc)
            value = solvers.solve_pomdp_pbvi(cm, gamma, opts.pomdp_tolerance,
                                             n_beliefs=opts.pbvi_beliefs, max_iters=opts.max_iters)
            solver = "pbvi"
    sub = SolvedSubtask(h, problem, cmap, cm, solver, value, policy,
                        np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    per_cluster = np.array([sub.choose_cluster(c) for c in range(cmap.n_clusters)], dtype=np.int64)
    sub.choice = per_cluster[cmap.assignment]
    sub.resolved = problem.primitive_of[sub.choice, np.arange(model.n_states)]
    sub.seconds = time.perf_counter() - t0
    log.info("solved %s: %d states -> %d clusters (%s, %.2fs)",
             h, model.n_states, cmap.n_clusters, solver, sub.seconds)
    return sub


def polca_plan(model: DecisionModel, graph: TaskGraph, mode: str = "mdp",
               options: PlanOptions | None = None) -> HierarchicalPolicy:
    """Solve every subtask bottom-up; ``mode="pomdp"`` uses observation-aware
    clustering and alpha-vector solving."""
    if mode not in abstraction.MODES:
        raise ValueError(f"mode must be one of {abstraction.MODES}")
    if mode == "pomdp" and model.kind != "pomdp":
        raise ModelError("POMDP planning requires a model with observations")
    check_task_graph(graph, model)
    opts = options or PlanOptions()
    order = bottom_up_order(graph)
    solved: dict[str, SolvedSubtask] = {}
    for h in order:
        try:
            solved[h] = solve_subtask(model, graph, h, solved, mode, opts)
        except (HierarchyError, ModelError, solvers.TooLargeError) as exc:
            raise PlanningError(h, exc) from exc
    gamma = opts.gamma if opts.gamma is not None else model.discount
    return HierarchicalPolicy(graph, mode, solved, order, gamma)


def policy_agnostic_partition(model: DecisionModel, graph: TaskGraph, h: str,
                              mode: str = "mdp") -> ClusterMap:
    """Fixpoint partition of subtask ``h`` when every primitive below it is
    available directly (no child policy is assumed)."""
    node = graph.nodes[h]
    prims = graph.primitives_below(h)
    flat = Subtask(h, tuple(prims), tuple(p for p in node.pseudo_rewards if p.action is None),
                   node.terminal, node.relevant_features, node.reward_overrides)
    g = TaskGraph.build(h, [flat])
    problem = parameterize_subtask(model, g, h, {})
    return abstraction.minimize(problem, mode=mode, labels=problem.terminal.astype(np.int64))
