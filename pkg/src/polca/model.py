"""Factored MDP/POMDP models, validation and elementary probabilistic queries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

PROB_TOL = 1e-9
DEFAULT_DISCOUNT = 0.95


class ModelError(ValueError):
    """Raised when a model (or a query against it) is malformed."""


class ImpossibleObservation(ModelError):
    """The observation has zero probability under the predicted belief."""


@dataclass(frozen=True)
class FeatureSpace:
    """Ordered multi-valued features; states are mixed-radix encodings.

    The first declared feature is the most significant digit.
    """

    names: tuple[str, ...]
    cardinalities: tuple[int, ...]
    labels: tuple[tuple[str, ...], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))
        if len(self.names) != len(self.cardinalities):
            raise ModelError("feature names and cardinalities differ in length")
        if len(set(self.names)) != len(self.names):
            raise ModelError("feature names must be unique")
        if any(c < 1 for c in self.cardinalities):
            raise ModelError("feature cardinalities must be >= 1")
        if self.labels:
            labels = tuple(tuple(str(v) for v in vals) for vals in self.labels)
            if [len(v) for v in labels] != list(self.cardinalities):
                raise ModelError("feature value labels do not match cardinalities")
        else:
            labels = tuple(tuple(str(i) for i in range(c)) for c in self.cardinalities)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_features(cls, features: Sequence[tuple[str, Sequence[str] | int]]) -> FeatureSpace:
        """Build from ``(name, labels)`` or ``(name, cardinality)`` pairs."""
        names, cards, labels = [], [], []
        for name, vals in features:
            names.append(name)
            if isinstance(vals, (int, np.integer)):
                cards.append(int(vals))
                labels.append(tuple(str(i) for i in range(int(vals))))
            else:
                cards.append(len(vals))
                labels.append(tuple(vals))
        return cls(tuple(names), tuple(cards), tuple(labels))

    @property
    def n_states(self) -> int:
        return int(np.prod(self.cardinalities, dtype=np.int64))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ModelError(f"unknown feature {name!r}") from None

    def value_index(self, feature: str, value) -> int:
        f = self.index(feature)
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            if not 0 <= value < self.cardinalities[f]:
                raise ModelError(f"value {value} out of range for feature {feature!r}")
            return int(value)
        try:
            return self.labels[f].index(str(value))
        except ValueError:
            raise ModelError(f"unknown value {value!r} for feature {feature!r}") from None

    def encode(self, assignment: Mapping[str, object] | Sequence[int]) -> int:
        if isinstance(assignment, Mapping):
            missing = set(self.names) - set(assignment)
            if missing:
                raise ModelError(f"assignment missing features {sorted(missing)}")
            digits = [self.value_index(n, assignment[n]) for n in self.names]
        else:
            digits = [int(d) for d in assignment]
            if len(digits) != len(self.names):
                raise ModelError("assignment has the wrong number of features")
        return int(np.ravel_multi_index(tuple(digits), self.cardinalities))

    def decode(self, s: int) -> tuple[int, ...]:
        if not 0 <= s < self.n_states:
            raise ModelError(f"state {s} out of range")
        return tuple(int(d) for d in np.unravel_index(int(s), self.cardinalities))

    def describe(self, s: int) -> dict[str, str]:
        return {n: self.labels[i][d] for i, (n, d) in enumerate(zip(self.names, self.decode(s)))}

    def feature_grid(self) -> np.ndarray:
        """Integer array (n_states, n_features) of every state's feature values."""
        grids = np.indices(self.cardinalities).reshape(len(self.names), -1)
        return grids.T.copy()


def _freeze(arr):
    if arr is None:
        return None
    if sparse.issparse(arr):
        arr.data.flags.writeable = False
        return arr
    arr = np.asarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class DecisionModel:
    """A tabular MDP or POMDP over a factored state space.

    ``transitions[a]`` is a CSR matrix with rows ``s`` and columns ``s'``;
    ``rewards`` is ``(n_states, n_actions)``; ``obs_model`` is
    ``(n_actions, n_states, n_observations)`` indexed by the successor state.
    """

    space: FeatureSpace
    actions: tuple[str, ...]
    transitions: tuple[sparse.csr_matrix, ...]
    rewards: np.ndarray
    discount: float = DEFAULT_DISCOUNT
    observations: tuple[str, ...] | None = None
    obs_model: np.ndarray | None = None

    def __post_init__(self):
        n = self.space.n_states
        object.__setattr__(self, "actions", tuple(self.actions))
        trans = []
        for t in self.transitions:
            t = sparse.csr_matrix(t, dtype=float)
            t.sum_duplicates()
            t.sort_indices()
            if t.shape != (n, n):
                raise ModelError(f"transition matrix shape {t.shape} != {(n, n)}")
            trans.append(_freeze(t))
        if len(trans) != len(self.actions):
            raise ModelError("one transition matrix per action is required")
        object.__setattr__(self, "transitions", tuple(trans))
        rewards = np.array(self.rewards, dtype=float)
        if rewards.shape != (n, len(self.actions)):
            raise ModelError(f"reward table shape {rewards.shape} != {(n, len(self.actions))}")
        object.__setattr__(self, "rewards", _freeze(rewards))
        if (self.observations is None) != (self.obs_model is None):
            raise ModelError("observations and obs_model must be given together")
        if self.observations is not None:
            object.__setattr__(self, "observations", tuple(self.observations))
            obs = np.array(self.obs_model, dtype=float)
            if obs.shape != (len(self.actions), n, len(self.observations)):
                raise ModelError(f"observation model shape {obs.shape} is wrong")
            object.__setattr__(self, "obs_model", _freeze(obs))
        if len(set(self.actions)) != len(self.actions):
            raise ModelError("action names must be unique")

    @property
    def kind(self) -> str:
        return "pomdp" if self.obs_model is not None else "mdp"

    @property
    def n_states(self) -> int:
        return self.space.n_states

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return 0 if self.observations is None else len(self.observations)

    def action_index(self, a) -> int:
        if isinstance(a, (int, np.integer)):
            if not 0 <= a < self.n_actions:
                raise ModelError(f"action {a} out of range")
            return int(a)
        try:
            return self.actions.index(a)
        except ValueError:
            raise ModelError(f"unknown action {a!r}") from None

    def observation_index(self, o) -> int:
        if self.observations is None:
            raise ModelError("model has no observations")
        if isinstance(o, (int, np.integer)):
            if not 0 <= o < self.n_observations:
                raise ModelError(f"observation {o} out of range")
            return int(o)
        try:
            return self.observations.index(o)
        except ValueError:
            raise ModelError(f"unknown observation {o!r}") from None

    def observation_joint(self, a: int) -> list[sparse.csr_matrix]:
        """Per observation, the matrix ``T(s,a,s') * O(o,a,s')``."""
        t = self.transitions[a]
        return [sparse.csr_matrix(t.multiply(self.obs_model[a, :, o][None, :])) for o in range(self.n_observations)]

    def with_discount(self, discount: float) -> DecisionModel:
        return DecisionModel(self.space, self.actions, self.transitions, self.rewards,
                             discount, self.observations, self.obs_model)


def make_model(space: FeatureSpace, actions: Sequence[str], transitions, rewards,
               discount: float = DEFAULT_DISCOUNT, observations=None, obs_model=None) -> DecisionModel:
    """Convenience constructor accepting a dense ``(A, S, S)`` array or a list of matrices."""
    if isinstance(transitions, np.ndarray) and transitions.ndim == 3:
        transitions = [sparse.csr_matrix(t) for t in transitions]
    return DecisionModel(space, tuple(actions), tuple(transitions), rewards, discount,
                         None if observations is None else tuple(observations), obs_model)


@dataclass(frozen=True)
class Violation:
    kind: str
    where: tuple
    detail: str

    def __str__(self):
        return f"{self.kind} at {self.where}: {self.detail}"


def validate_model(model: DecisionModel) -> list[Violation]:
    """Every invariant violation of ``model``; an empty list means valid."""
    out: list[Violation] = []
    if not 0.0 < model.discount < 1.0:
        out.append(Violation("discount", (), f"discount {model.discount} not in (0, 1)"))
    for a, t in enumerate(model.transitions):
        coo = t.tocoo()
        for s, sp, p in zip(coo.row, coo.col, coo.data):
            if p < 0:
                out.append(Violation("negative-transition", (int(s), a, int(sp)), f"T = {p}"))
            elif not np.isfinite(p):
                out.append(Violation("nonfinite-transition", (int(s), a, int(sp)), f"T = {p}"))
        sums = np.asarray(t.sum(axis=1)).ravel()
        for s in np.flatnonzero(np.abs(sums - 1.0) > PROB_TOL):
            out.append(Violation("transition-sum", (int(s), a), f"row sums to {sums[s]!r}"))
    bad = np.argwhere(~np.isfinite(model.rewards))
    for s, a in bad:
        out.append(Violation("nonfinite-reward", (int(s), int(a)), "reward is not finite"))
    if model.obs_model is not None:
        obs = model.obs_model
        for a, sp, o in np.argwhere(obs < 0):
            out.append(Violation("negative-observation", (int(a), int(sp), int(o)), f"O = {obs[a, sp, o]}"))
        sums = obs.sum(axis=2)
        for a, sp in np.argwhere(np.abs(sums - 1.0) > PROB_TOL):
            out.append(Violation("observation-sum", (int(a), int(sp)), f"sums to {sums[a, sp]!r}"))
    return out


def check_model(model: DecisionModel) -> DecisionModel:
    """Raise ``ModelError`` listing violations, else return the model unchanged."""
    report = validate_model(model)
    if report:
        head = "; ".join(str(v) for v in report[:5])
        more = f" (+{len(report) - 5} more)" if len(report) > 5 else ""
        raise ModelError(f"invalid model: {head}{more}")
    return model


def next_state_distribution(model: DecisionModel, s: int, a) -> np.ndarray:
    if not 0 <= s < model.n_states:
        raise ModelError(f"state {s} out of range")
    a = model.action_index(a)
    return model.transitions[a].getrow(s).toarray().ravel()


def predict_belief(model: DecisionModel, b: np.ndarray, a) -> np.ndarray:
    a = model.action_index(a)
    return model.transitions[a].T @ np.asarray(b, dtype=float)


def belief_update(model: DecisionModel, b: np.ndarray, a, o) -> np.ndarray:
    """Bayes filter step: ``b'(s') ∝ O(o,a,s') Σ_s T(s,a,s') b(s)``."""
    if model.obs_model is None:
        raise ModelError("belief_update requires a POMDP")
    a = model.action_index(a)
    o = model.observation_index(o)
    unnorm = model.obs_model[a, :, o] * predict_belief(model, b, a)
    z = unnorm.sum()
    if not z > 0:
        raise ImpossibleObservation(
            f"observation {model.observations[o]!r} impossible after action {model.actions[a]!r}")
    return unnorm / z


def is_belief(b: np.ndarray, n_states: int | None = None, tol: float = PROB_TOL) -> bool:
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or (n_states is not None and b.size != n_states):
        return False
    return bool(np.all(b >= 0) and abs(b.sum() - 1.0) <= tol)


def point_belief(n_states: int, s: int) -> np.ndarray:
    b = np.zeros(n_states)
    b[s] = 1.0
    return b
