"""Top-down polling execution, episode simulation and evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .hierarchy import HierarchicalPolicy, condition_mask
from .model import DecisionModel, ImpossibleObservation, belief_update, is_belief

DEFAULT_MAX_STEPS = 200


class ExecutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PollResult:
    action: int
    path: tuple[str, ...]
    choices: tuple[str, ...]


def poll_action(policy: HierarchicalPolicy, world) -> PollResult:
    """Descend from the root, querying each subtask's policy, until a
    primitive comes back. ``world`` is a state index or a belief vector."""
    graph = policy.graph
    h = graph.root
    path, choices = [], []
    limit = len(graph.nodes) + 1
    while True:
        if h in path or len(path) >= limit:
            raise ExecutionError(f"cycle while polling at {h!r}")
        path.append(h)
        sub = policy.subtasks[h]
        k = sub.choose(world)
        child = sub.actions[k]
        choices.append(child)
        if not graph.is_subtask(child):
            return PollResult(int(sub.problem.primitive_of[k, 0]), tuple(path), tuple(choices))
        h = child


@dataclass
class Step:
    t: int
    observation: str | None
    action: str
    reward: float
    state: int
    belief: np.ndarray | None = None
    path: tuple[str, ...] = ()


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)
    discount: float = 0.95
    aborted: str | None = None

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps], dtype=float)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    @property
    def discounted_reward(self) -> float:
        r = self.rewards
        return float(np.sum(r * self.discount ** np.arange(r.size)))

    @property
    def actions(self) -> list[str]:
        return [s.action for s in self.steps]

    def to_jsonl(self) -> str:
        lines = [json.dumps({"step": s.t, "observation": s.observation, "action": s.action,
                             "reward": s.reward}) for s in self.steps]
        return "\n".join(lines) + ("\n" if lines else "")

    def transcript(self) -> str:
        rows = [("Observation", "Action", "Reward")]
        rows += [(s.observation or "(null)", s.action, f"{s.reward:g}") for s in self.steps]
        w0 = max(len(r[0]) for r in rows)
        w1 = max(len(r[1]) for r in rows)
        return "\n".join(f"{a:<{w0}}  {b:<{w1}}  {c}" for a, b, c in rows) + "\n"


def _sample(p: np.ndarray, u: float) -> int:
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), p.size - 1))


def episode_seeds(rng_seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(rng_seed).spawn(n)


class _Controller:
    """Adapter so flat state-policies and hierarchical policies run alike."""

    def __init__(self, policy):
        self.policy = policy

    def act(self, world):
        if isinstance(self.policy, HierarchicalPolicy):
            r = poll_action(self.policy, world)
            return r.action, r.path
        return int(self.policy(world)), ()


def run_episode(policy, model: DecisionModel, initial, max_steps: int = DEFAULT_MAX_STEPS,
                rng_seed=0, terminal=None, record_beliefs: bool = True,
                observation_source=None) -> Trajectory:
    """Simulate one episode.

    ``initial`` is a state index (fully observed run) or a belief (hidden
    state drawn from it). Uniform draws are consumed in a fixed pattern, so
    different policies on the same seed share random numbers.
    ``observation_source`` may replace sampling of observations (e.g. typed
    input); it receives ``(step, action_name)`` and returns an observation name.
    """
    rng = np.random.default_rng(rng_seed)
    ctrl = _Controller(policy)
    pomdp = not np.isscalar(initial) and np.ndim(initial) == 1
    if pomdp and model.obs_model is None:
        raise ExecutionError("belief-based episodes need a POMDP")
    if terminal is None and isinstance(policy, HierarchicalPolicy):
        terminal = policy.graph.nodes[policy.graph.root].terminal
    term_mask = condition_mask(model.space, terminal) if terminal is not None else None
    if pomdp:
        b = np.asarray(initial, dtype=float)
        s = _sample(b, rng.random())
    else:
        s, b = int(initial), None
    traj = Trajectory(discount=model.discount)
    last_obs = None
    for t in range(max_steps):
        if term_mask is not None and term_mask[s]:
            break
        a, path = ctrl.act(b if pomdp else s)
        r = float(model.rewards[s, a])
        u_trans, u_obs = rng.random(), rng.random()
        row = model.transitions[a].getrow(s)
        s_next = int(row.indices[_sample(row.data, u_trans)])
        traj.steps.append(Step(t, last_obs, model.actions[a], r, s,
                               b.copy() if (pomdp and record_beliefs) else None, path))
        if pomdp:
            if observation_source is not None:
                o = model.observation_index(observation_source(t, model.actions[a]))
            else:
                o = _sample(model.obs_model[a, s_next], u_obs)
            try:
                b = belief_update(model, b, a, o)
            except ImpossibleObservation as exc:
                traj.aborted = str(exc)
                break
            last_obs = model.observations[o]
        s = s_next
    return traj


@dataclass
class Metrics:
    mean_return: float
    mean_discounted_return: float
    returns: np.ndarray
    curve: np.ndarray
    action_histogram: dict[str, int]
    n_episodes: int

    def to_csv_rows(self, algo: str, domain: str, seed: int) -> list[str]:
        return [f"{t + 1},{v:.6f},{algo},{domain},{seed}" for t, v in enumerate(self.curve)]


def evaluate(policy, model: DecisionModel, n_episodes: int, max_steps: int = DEFAULT_MAX_STEPS,
             rng_seed: int = 0, initial=None, terminal=None, keep=None) -> Metrics:
    """Run ``n_episodes`` episodes with per-episode seeds derived from
    ``rng_seed``. ``initial`` is a belief (POMDP), a state, or a callable
    ``rng -> state``; default is uniform over states."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    seeds = episode_seeds(rng_seed, n_episodes)
    curves = np.zeros((n_episodes, max_steps))
    returns = np.zeros(n_episodes)
    disc = np.zeros(n_episodes)
    hist: dict[str, int] = {}
    for i, ss in enumerate(seeds):
        start_rng = np.random.default_rng(ss.spawn(1)[0])
        if callable(initial):
            init = initial(start_rng)
        elif initial is None:
            init = int(start_rng.integers(model.n_states)) if model.obs_model is None \
                else np.full(model.n_states, 1.0 / model.n_states)
        else:
            init = initial
        traj = run_episode(policy, model, init, max_steps, ss, terminal)
        if keep is not None:
            keep.append(traj)
        r = traj.rewards
        cum = np.cumsum(r)
        curves[i, :r.size] = cum
        curves[i, r.size:] = cum[-1] if r.size else 0.0
        returns[i] = traj.total_reward
        disc[i] = traj.discounted_reward
        for a in traj.actions:
            hist[a] = hist.get(a, 0) + 1
    return Metrics(float(returns.mean()), float(disc.mean()), returns, curves.mean(axis=0),
                   hist, n_episodes)


def beliefs_valid(traj: Trajectory, n_states: int) -> bool:
    return all(s.belief is None or is_belief(s.belief, n_states) for s in traj.steps)
