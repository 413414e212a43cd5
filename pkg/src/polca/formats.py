"""JSON reading and writing for models, hierarchies, policies and cluster maps.

Emitted files are deterministic: entries are sorted, floats use Python's
shortest round-trip repr, and every sparse entry sits on its own line, so
emit -> parse -> emit reproduces the same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import sparse

from . import abstraction, solvers
from .abstraction import ClusterMap
from .hierarchy import (HierarchicalPolicy, SolvedSubtask, TaskGraph, bottom_up_order,
                        parameterize_subtask)
from .model import DEFAULT_DISCOUNT, DecisionModel, FeatureSpace, ModelError

FORMAT_ERRORS = (ModelError, KeyError, TypeError, ValueError, IndexError)


# -- low-level writing

def _dumps(obj: dict, row_keys=()) -> str:
    """Top-level keys one per line; lists under ``row_keys`` one row per line."""
    parts = []
    for k, v in obj.items():
        key = json.dumps(k)
        if k in row_keys and isinstance(v, list) and v:
            rows = ",\n    ".join(json.dumps(r) for r in v)
            parts.append(f"  {key}: [\n    {rows}\n  ]")
        else:
            parts.append(f"  {key}: {json.dumps(v)}")
    return "{\n" + ",\n".join(parts) + "\n}\n"


def _num(x: float):
    """Integral floats stay floats so re-emission keeps the same text."""
    return float(x)


# -- models

def model_to_json(model: DecisionModel) -> dict:
    space = model.space
    d = {
        "features": [{"name": n, "cardinality": c, "values": list(v)}
                     for n, c, v in zip(space.names, space.cardinalities, space.labels)],
        "actions": list(model.actions),
        "discount": _num(model.discount),
    }
    trans = []
    for a, t in enumerate(model.transitions):
        coo = t.tocoo()
        for s, s2, p in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
            if p != 0.0:
                trans.append([s, a, s2, _num(p)])
    trans.sort()
    d["transitions"] = trans
    rs, ra = np.nonzero(model.rewards)
    d["rewards"] = [[int(s), int(a), _num(model.rewards[s, a])] for s, a in zip(rs, ra)]
    if model.observations is not None:
        d["observations"] = list(model.observations)
        ia, isp, io = np.nonzero(model.obs_model)
        d["obs_model"] = [[int(a), int(s), int(o), _num(model.obs_model[a, s, o])]
                          for a, s, o in zip(ia, isp, io)]
    return d


def dumps_model(model: DecisionModel) -> str:
    return _dumps(model_to_json(model), row_keys=("features", "transitions", "rewards", "obs_model"))


def _feature_space(features) -> FeatureSpace:
    spec = []
    for f in features:
        if "values" in f:
            vals = [str(v) for v in f["values"]]
            if "cardinality" in f and int(f["cardinality"]) != len(vals):
                raise ModelError(f"feature {f['name']!r}: cardinality does not match its values")
            spec.append((f["name"], vals))
        else:
            spec.append((f["name"], int(f["cardinality"])))
    return FeatureSpace.from_features(spec)


def _state(space: FeatureSpace, s) -> int:
    if isinstance(s, dict):
        return space.encode(s)
    if isinstance(s, bool) or not isinstance(s, int):
        raise ModelError(f"state must be an index or a feature assignment, got {s!r}")
    if not 0 <= s < space.n_states:
        raise ModelError(f"state {s} out of range")
    return s


def _index(names: list[str], x, what: str) -> int:
    if isinstance(x, str):
        if x not in names:
            raise ModelError(f"unknown {what} {x!r}")
        return names.index(x)
    if isinstance(x, bool) or not isinstance(x, int) or not 0 <= x < len(names):
        raise ModelError(f"{what} {x!r} out of range")
    return x


def model_from_json(d: dict) -> DecisionModel:
    """Parse the model format. States may be indices or feature assignments;
    actions and observations may be names or indices. ``transitions`` is a
    list of ``[s, a, s', p]`` or a per-action list of dense matrices."""
    space = _feature_space(d["features"])
    actions = [str(a) for a in d["actions"]]
    n, na = space.n_states, len(actions)
    raw = d["transitions"]
    if isinstance(raw, dict):
        raw = [raw[a] for a in actions]
    if raw and isinstance(raw[0], list) and raw[0] and isinstance(raw[0][0], list):
        dense = np.array(raw, dtype=float)
        if dense.shape != (na, n, n):
            raise ModelError(f"dense transitions have shape {dense.shape}, expected {(na, n, n)}")
        trans = [sparse.csr_matrix(t) for t in dense]
    else:
        rows = [([], [], []) for _ in actions]
        for entry in raw:
            s, a, s2, p = entry
            r = rows[_index(actions, a, "action")]
            r[0].append(_state(space, s))
            r[1].append(_state(space, s2))
            r[2].append(float(p))
        trans = [sparse.csr_matrix((v, (i, j)), shape=(n, n)) for i, j, v in rows]
    rewards = np.zeros((n, na))
    for s, a, r in d.get("rewards", []):
        rewards[_state(space, s), _index(actions, a, "action")] += float(r)
    observations = obs = None
    if "observations" in d or "obs_model" in d:
        observations = [str(o) for o in d.get("observations", [])]
        obs = np.zeros((na, n, len(observations)))
        for a, s2, o, p in d.get("obs_model", []):
            obs[_index(actions, a, "action"), _state(space, s2), _index(observations, o, "observation")] += float(p)
    return DecisionModel(space, tuple(actions), tuple(trans), rewards,
                         float(d.get("discount", DEFAULT_DISCOUNT)),
                         None if observations is None else tuple(observations), obs)


def loads_model(text: str) -> DecisionModel:
    return model_from_json(json.loads(text))


# -- hierarchies

def dumps_graph(graph: TaskGraph) -> str:
    return json.dumps(graph.to_json(), indent=2) + "\n"


def loads_graph(text: str) -> TaskGraph:
    return TaskGraph.from_json(json.loads(text))


# -- cluster maps

def dumps_cluster_report(report: dict) -> str:
    return _dumps(report, row_keys=("clusters",))


def cluster_map_from_json(d: dict, n_states: int | None = None) -> ClusterMap:
    return ClusterMap.from_clusters(d["clusters"], n_states)


# -- policies

def dumps_policy(policy: HierarchicalPolicy) -> str:
    return json.dumps(policy.to_json(), indent=1) + "\n"


def policy_from_json(d: dict, model: DecisionModel, graph: TaskGraph) -> HierarchicalPolicy:
    """Rebuild an executable policy from its saved tables.

    Each subtask is re-parameterized bottom-up (no solving), then its saved
    cluster map and value data are attached.
    """
    mode = d["mode"]
    order = bottom_up_order(graph)
    if set(order) != set(d["subtasks"]):
        raise ModelError("policy subtasks do not match the hierarchy")
    solved: dict[str, SolvedSubtask] = {}
    for h in order:
        entry = d["subtasks"][h]
        problem = parameterize_subtask(model, graph, h, solved)
        if list(problem.actions) != entry["actions"]:
            raise ModelError(f"{h}: saved actions differ from the hierarchy")
        cmap = ClusterMap.from_clusters(entry["clusters"], model.n_states)
        cm = abstraction.project_model(problem, cmap, mode=mode)
        solver = entry["solver"]
        policy = None
        if solver == "vi":
            policy = np.array([problem.actions.index(a) for a in entry["greedy"]], dtype=np.int64)
            values = np.array(entry["values"], dtype=float)
            q = solvers.bellman_q(cm, values, d["discount"])
            value = solvers.ValueFunction(values, q, 0, solvers.bellman_residual(cm, values, d["discount"]), True)
        elif solver == "qmdp":
            q = np.array(entry["q"], dtype=float)
            value = solvers.QTable(q)
        elif solver in ("exact", "pbvi"):
            vecs = np.array([v["vector"] for v in entry["alpha_vectors"]], dtype=float)
            acts = np.array([problem.actions.index(v["action"]) for v in entry["alpha_vectors"]], dtype=np.int64)
            value = solvers.AlphaVectorSet(vecs.reshape(len(acts), cmap.n_clusters), acts)
        else:
            raise ModelError(f"{h}: unknown solver {solver!r}")
        sub = SolvedSubtask(h, problem, cmap, cm, solver, value, policy,
                            np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
        per_cluster = np.array([sub.choose_cluster(c) for c in range(cmap.n_clusters)], dtype=np.int64)
        sub.choice = per_cluster[cmap.assignment]
        sub.resolved = problem.primitive_of[sub.choice, np.arange(model.n_states)]
        solved[h] = sub
    return HierarchicalPolicy(graph, mode, solved, order, float(d["discount"]))


def loads_policy(text: str, model: DecisionModel, graph: TaskGraph) -> HierarchicalPolicy:
    return policy_from_json(json.loads(text), model, graph)


# -- files

def read_text(path) -> str:
    return Path(path).read_text()


def write_text(path, text: str) -> None:
    Path(path).write_text(text)
