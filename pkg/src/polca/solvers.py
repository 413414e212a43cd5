"""Dynamic programming over clustered models: value iteration, greedy
policies, exact alpha-vector POMDP solving (incremental pruning) and QMDP."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .abstraction import ClusteredModel

log = logging.getLogger(__name__)

TIE_TOL = 1e-9
DEFAULT_MAX_CLUSTERS = 40
DEFAULT_MAX_VECTORS = 300


class TooLargeError(RuntimeError):
    """The clustered model is beyond the exact POMDP solver's configured cap."""


def greedy(q: np.ndarray, tie_tol: float = TIE_TOL) -> np.ndarray:
    """Row-wise argmax, breaking (near-)ties toward the lowest column."""
    q = np.atleast_2d(q)
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tie_tol, axis=1)


def bellman_q(cm: ClusteredModel, v: np.ndarray, gamma: float) -> np.ndarray:
    future = np.column_stack([t @ v for t in cm.transitions])
    return cm.rewards + gamma * cm.continuation[:, None] * future


def bellman_residual(cm: ClusteredModel, v: np.ndarray, gamma: float | None = None) -> float:
    gamma = cm.discount if gamma is None else gamma
    return float(np.max(np.abs(bellman_q(cm, v, gamma).max(axis=1) - v)))


@dataclass
class ValueFunction:
    values: np.ndarray
    q: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list, repr=False)


def value_iterate(cm: ClusteredModel, gamma: float | None = None, tolerance: float = 1e-8,
                  max_iters: int = 100_000, keep_history: bool = False) -> ValueFunction:
    """Iterate the cluster-level Bellman update until the sup-norm change is
    at most ``tolerance``.

    Returned values satisfy ``values == q.max(axis=1)`` exactly; ``residual``
    is the Bellman residual of ``values`` itself.
    """
    gamma = cm.discount if gamma is None else gamma
    if not 0 < gamma < 1:
        raise ValueError("discount must lie in (0, 1)")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    v = np.zeros(cm.n_clusters)
    history = [v.copy()] if keep_history else []
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        v_new = bellman_q(cm, v, gamma).max(axis=1)
        if keep_history:
            history.append(v_new.copy())
        delta = np.max(np.abs(v_new - v), initial=0.0)
        v = v_new
        if delta <= tolerance:
            converged = True
            break
    q = bellman_q(cm, v, gamma)
    values = q.max(axis=1)
    residual = bellman_residual(cm, values, gamma)
    if not converged:
        log.warning("value iteration stopped after %d iterations (residual %.3g)", it, residual)
    return ValueFunction(values, q, it, residual, converged, history)


def extract_policy(cm: ClusteredModel, vf: ValueFunction, gamma: float | None = None) -> np.ndarray:
    gamma = cm.discount if gamma is None else gamma
    return greedy(bellman_q(cm, vf.values, gamma))


def evaluate_policy(cm: ClusteredModel, policy: np.ndarray, gamma: float | None = None) -> np.ndarray:
    """Exact value of a deterministic cluster policy (linear solve)."""
    gamma = cm.discount if gamma is None else gamma
    n = cm.n_clusters
    p = np.zeros((n, n))
    for a in range(cm.n_actions):
        rows = np.flatnonzero(policy == a)
        if rows.size:
            p[rows] = cm.transitions[a][rows].toarray()
    p *= cm.continuation[:, None]
    r = cm.rewards[np.arange(n), policy]
    return np.linalg.solve(np.eye(n) - gamma * p, r)


# --- QMDP ------------------------------------------------------------------

@dataclass
class QTable:
    q: np.ndarray
    value_function: ValueFunction | None = None

    @property
    def values(self) -> np.ndarray:
        return self.q.max(axis=1)


def qmdp_solve(cm: ClusteredModel, gamma: float | None = None, tolerance: float = 1e-8,
               max_iters: int = 100_000) -> QTable:
    vf = value_iterate(cm, gamma, tolerance, max_iters)
    return QTable(vf.q, vf)


def qmdp_action(qt: QTable, b: np.ndarray) -> int:
    return int(greedy(np.asarray(b, dtype=float) @ qt.q)[0])


# --- alpha vectors ----------------------------------------------------------

@dataclass
class AlphaVectorSet:
    vectors: np.ndarray  # (n, n_clusters)
    actions: np.ndarray  # (n,)
    iterations: int = 0
    converged: bool = True
    delta: float = 0.0
    beliefs: np.ndarray | None = None  # point set for point-based solutions

    def __len__(self):
        return len(self.actions)

    def values(self, beliefs: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(beliefs) @ self.vectors.T).max(axis=1)

    def value(self, b: np.ndarray) -> float:
        return float(self.values(b)[0])

    def best(self, b: np.ndarray) -> int:
        """Index of the maximizing vector; near-ties go to the lowest action."""
        vals = self.vectors @ np.asarray(b, dtype=float)
        cand = np.flatnonzero(vals >= vals.max() - TIE_TOL)
        return int(cand[np.lexsort((cand, self.actions[cand]))[0]])

    def action(self, b: np.ndarray) -> int:
        return int(self.actions[self.best(b)])


def _lp_witness(alpha: np.ndarray, others: np.ndarray) -> tuple[float, np.ndarray]:
    """max over beliefs b of min_β (α - β)·b, with the maximizing belief."""
    n = alpha.size
    a_ub = np.hstack([others - alpha, np.ones((others.shape[0], 1))])
    res = linprog(
        c=np.r_[np.zeros(n), -1.0],
        A_ub=a_ub, b_ub=np.zeros(others.shape[0]),
        A_eq=np.r_[np.ones(n), 0.0][None, :], b_eq=[1.0],
        bounds=[(0, None)] * n + [(None, None)],
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"pruning LP failed: {res.message}")
    b = np.clip(res.x[:n], 0.0, None)
    return -float(res.fun), b / b.sum()


def _lp_witness_margin(alpha: np.ndarray, others: np.ndarray) -> float:
    return _lp_witness(alpha, others)[0]


def _dominated_by(cands: np.ndarray, pool: np.ndarray, tol: float, chunk: int = 2048) -> np.ndarray:
    """Flags candidates that some pool vector weakly dominates pointwise."""
    out = np.zeros(len(cands), dtype=bool)
    if len(pool) == 0:
        return out
    step = max(1, chunk * 64 // max(1, len(pool) * cands.shape[1]))
    for i in range(0, len(cands), step):
        c = cands[i:i + step]
        out[i:i + step] = np.all(pool[None, :, :] >= c[:, None, :] - tol, axis=2).any(axis=1)
    return out


def _best_at(vectors: np.ndarray, b: np.ndarray, tol: float) -> int:
    vals = vectors @ b
    return int(np.flatnonzero(vals >= vals.max() - tol)[0])


def _probe_beliefs(n: int, n_rand: int, rng) -> np.ndarray:
    """Corners, the centre, and random beliefs, half of them on random
    low-dimensional faces where reachable beliefs tend to live."""
    inner = rng.dirichlet(np.ones(n), size=n_rand - n_rand // 2)
    face = rng.dirichlet(np.ones(n), size=n_rand // 2)
    support = rng.random((len(face), n)) < rng.uniform(0.2, 0.8, size=(len(face), 1))
    support[np.arange(len(face)), rng.integers(n, size=len(face))] = True
    face = face * support
    face /= face.sum(axis=1, keepdims=True)
    return np.vstack([np.eye(n), np.full((1, n), 1.0 / n), inner, face])


def prune(vectors: np.ndarray, actions: np.ndarray | None = None, method: str = "lp",
          eps: float = 1e-7, n_samples: int = 10_000, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Remove alpha vectors that are nowhere strictly useful.

    ``method="lp"`` is exact (up to ``eps`` relative to the vector scale):
    vectors winning at sampled beliefs are kept outright, the rest are
    checked one at a time with a witness LP against the kept set, and each
    witness found adds its winner to that set.
    ``method="sample"`` keeps only vectors that win at some corner or at one
    of ``n_samples`` random beliefs; it can drop vectors that are best only
    on tiny regions.
    """
    if method not in ("lp", "sample"):
        raise ValueError(f"unknown pruning method {method!r}")
    vectors = np.asarray(vectors, dtype=float)
    if actions is None:
        actions = np.zeros(len(vectors), dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    if len(vectors) <= 1:
        return vectors, actions
    # stable order: by action then original position keeps lowest actions on ties
    order = np.lexsort((np.arange(len(actions)), actions))
    vectors, actions = vectors[order], actions[order]
    scale = max(1.0, float(np.max(np.abs(vectors))))
    tol = eps * scale

    # duplicates
    keys = np.rint(vectors / tol).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    idx = np.sort(first)
    if len(idx) <= 1:
        return vectors[idx], actions[idx]
    v = vectors[idx]
    n_states = vectors.shape[1]
    rng = np.random.default_rng(0) if rng is None else rng
    n_rand = n_samples if method == "sample" else min(n_samples, 2000)
    samples = _probe_beliefs(n_states, n_rand, rng)
    vals = samples @ v.T
    winner = np.argmax(vals, axis=1)
    if vals.shape[1] > 1:
        top2 = np.partition(vals, -2, axis=1)[:, -2:]
        clear = top2[:, 1] - top2[:, 0] > tol
    else:
        clear = np.ones(len(vals), dtype=bool)
    certain = np.zeros(len(idx), dtype=bool)
    certain[np.unique(winner[clear])] = True
    if method == "sample":
        return vectors[idx[certain]], actions[idx[certain]]

    rest = np.flatnonzero(~certain)
    rest = rest[~_dominated_by(v[rest], v[certain], tol)]
    kept = list(np.flatnonzero(certain))
    pending = set(rest.tolist())
    while pending:
        k = min(pending)
        if not kept:
            kept.append(k)
            pending.discard(k)
            continue
        margin, b = _lp_witness(v[k] / scale, v[kept] / scale)
        if margin <= eps:
            pending.discard(k)
            continue
        cand = np.array(sorted(pending))
        w = int(cand[_best_at(v[cand], b, tol)])
        kept.append(w)
        pending.discard(w)
        cand = cand[cand != w]
        gone = cand[np.all(v[w] >= v[cand] - tol, axis=1)]
        pending.difference_update(gone.tolist())
    kept = idx[np.sort(np.array(kept))]
    return vectors[kept], actions[kept]


def _cross_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, None, :] + b[None, :, :]).reshape(-1, a.shape[1])


def _pomdp_arrays(cm: ClusteredModel):
    if cm.obs_joint is None:
        raise ValueError("exact POMDP solving needs a clustered model with observations")
    joint = cm.dense_obs_joint() * cm.continuation[None, None, :, None]
    return joint, np.asarray(cm.rewards, dtype=float)


def merged_joints(joint: np.ndarray, tol: float = 1e-12) -> list[list[np.ndarray]]:
    """Per action, the nonzero observation matrices with proportional ones
    summed: such observations carry the same information, so merging them
    leaves the backup unchanged while shrinking the cross-sums."""
    out = []
    for a in range(joint.shape[0]):
        groups: list[tuple[np.ndarray, np.ndarray]] = []
        for jo in joint[a]:
            total = jo.sum()
            if total <= 0:
                continue
            shape = jo / total
            for i, (ref, acc) in enumerate(groups):
                if np.allclose(shape, ref, rtol=0.0, atol=tol):
                    groups[i] = (ref, acc + jo)
                    break
            else:
                groups.append((shape, jo.copy()))
        out.append([acc for _, acc in groups])
    return out


def pomdp_backup(cm: ClusteredModel, avs: AlphaVectorSet, gamma: float, method: str = "lp",
                 joint=None, max_vectors: int | None = None) -> AlphaVectorSet:
    """One exact dynamic-programming step with incremental pruning.

    Raises :class:`TooLargeError` as soon as an intermediate set outgrows
    ``max_vectors``.
    """
    if joint is None:
        joint, _ = _pomdp_arrays(cm)
    rewards = np.asarray(cm.rewards, dtype=float)
    n = cm.n_clusters
    all_vecs, all_acts = [], []
    for a, mats in enumerate(merged_joints(joint)):
        acc = None
        for jo in mats:
            g = gamma * (jo @ avs.vectors.T).T
            g, _ = prune(g, method=method)
            acc = g if acc is None else prune(_cross_sum(acc, g), method=method)[0]
            if max_vectors is not None and len(acc) > max_vectors:
                raise TooLargeError(f"exact backup needs more than {max_vectors} alpha vectors")
        if acc is None:
            acc = np.zeros((1, n))
        vecs = acc + rewards[:, a][None, :]
        all_vecs.append(vecs)
        all_acts.append(np.full(len(vecs), a))
    vecs, acts = prune(np.vstack(all_vecs), np.concatenate(all_acts), method=method)
    return AlphaVectorSet(vecs, acts)


def point_backup_values(cm: ClusteredModel, avs: AlphaVectorSet, beliefs: np.ndarray,
                        gamma: float | None = None) -> np.ndarray:
    """``(H V)(b)`` at each belief, computed without building the full set."""
    gamma = cm.discount if gamma is None else gamma
    joint, rewards = _pomdp_arrays(cm)
    beliefs = np.atleast_2d(beliefs)
    q = beliefs @ rewards
    for a in range(cm.n_actions):
        for o in range(cm.n_observations):
            # b^T J[a,o] α for every α, maximized
            proj = beliefs @ joint[a, o] @ avs.vectors.T
            q[:, a] += gamma * proj.max(axis=1)
    return q.max(axis=1)


def pomdp_bellman_residual(cm: ClusteredModel, avs: AlphaVectorSet, beliefs: np.ndarray,
                           gamma: float | None = None) -> float:
    return float(np.max(np.abs(point_backup_values(cm, avs, beliefs, gamma) - avs.values(beliefs))))


def sample_beliefs(n: int, n_random: int = 500, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.vstack([np.eye(n), np.full((1, n), 1.0 / n), rng.dirichlet(np.ones(n), size=n_random)])


def solve_pomdp_exact(cm: ClusteredModel, gamma: float | None = None, tolerance: float = 1e-6,
                      horizon: int | None = None, max_clusters: int = DEFAULT_MAX_CLUSTERS,
                      method: str = "lp", max_iters: int = 2000, seed: int = 0,
                      max_vectors: int | None = DEFAULT_MAX_VECTORS) -> AlphaVectorSet:
    """Exact value iteration over alpha vectors with incremental pruning.

    With ``horizon`` set, performs exactly that many backups from the zero
    function (the optimal finite-horizon value). Otherwise iterates until the
    Bellman residual at every test belief is below ``tolerance``.
    """
    gamma = cm.discount if gamma is None else gamma
    if cm.n_clusters > max_clusters:
        raise TooLargeError(
            f"{cm.n_clusters} clusters exceed the exact-solver cap of {max_clusters}; "
            "use the QMDP top-level solver or raise the cap")
    joint, _ = _pomdp_arrays(cm)
    avs = AlphaVectorSet(np.zeros((1, cm.n_clusters)), np.zeros(1, dtype=np.int64))
    beliefs = sample_beliefs(cm.n_clusters, seed=seed)
    prev = avs.values(beliefs)
    limit = horizon if horizon is not None else max_iters
    delta = np.inf
    it = 0
    for it in range(1, limit + 1):
        avs = pomdp_backup(cm, avs, gamma, method, joint, max_vectors)
        if max_vectors is not None and len(avs) > max_vectors:
            raise TooLargeError(f"exact value function needs more than {max_vectors} alpha vectors")
        cur = avs.values(beliefs)
        delta = float(np.max(np.abs(cur - prev)))
        prev = cur
        log.debug("IP iteration %d: %d vectors, delta %.3g", it, len(avs), delta)
        if horizon is None and delta < tolerance:
            # small changes are necessary but not sufficient; certify directly
            delta = pomdp_bellman_residual(cm, avs, beliefs, gamma)
            if delta < tolerance:
                break
            if delta < 1e3 * tolerance:
                # pruning's relative eps can hold the fixed point just above an
                # absolute tolerance; finish with additive point backups
                polished = solve_pomdp_pbvi(cm, gamma, tolerance, beliefs, max_iters=max_iters,
                                            init=avs)
                it += polished.iterations
                avs = AlphaVectorSet(polished.vectors, polished.actions)
                delta = pomdp_bellman_residual(cm, avs, beliefs, gamma)
                break
    avs.iterations = it
    avs.delta = delta
    avs.converged = horizon is not None or delta < tolerance
    if not avs.converged:
        log.warning("exact POMDP solve stopped after %d iterations (delta %.3g)", it, delta)
    return avs


def reachable_beliefs(cm: ClusteredModel, n: int = 300, seed: int = 0, min_gap: float = 1e-3,
                      max_tries: int | None = None) -> np.ndarray:
    """Corners, the centre, and beliefs reached by random action/observation
    walks in the clustered model, kept when at least ``min_gap`` (L1) away
    from every belief collected so far."""
    rng = np.random.default_rng(seed)
    c = cm.n_clusters
    joint, _ = _pomdp_arrays(cm)
    points = [row for row in np.eye(c)] + [np.full(c, 1.0 / c)]
    tries = 0
    max_tries = 50 * n if max_tries is None else max_tries
    while len(points) < n and tries < max_tries:
        tries += 1
        b = points[rng.integers(len(points))]
        a = rng.integers(cm.n_actions)
        probs = np.array([b @ joint[a, o].sum(axis=1) for o in range(cm.n_observations)])
        if probs.sum() <= 0:
            continue
        o = rng.choice(cm.n_observations, p=probs / probs.sum())
        nxt = b @ joint[a, o]
        if nxt.sum() <= 0:
            continue
        nxt = nxt / nxt.sum()
        if np.min(np.abs(np.asarray(points) - nxt).sum(axis=1)) >= min_gap:
            points.append(nxt)
    return np.asarray(points)


def solve_pomdp_pbvi(cm: ClusteredModel, gamma: float | None = None, tolerance: float = 1e-6,
                     beliefs: np.ndarray | None = None, n_beliefs: int = 300,
                     max_iters: int = 2000, seed: int = 0,
                     init: AlphaVectorSet | None = None) -> AlphaVectorSet:
    """Point-based value iteration over a fixed belief set.

    Starts from ``init`` or the constant lower bound min R / (1 - γ) and adds each
    round's point backups to the vector set instead of replacing it; only
    pointwise-dominated vectors are discarded. The value therefore never
    decreases anywhere and stays a lower bound, which rules out the cycling
    plain point-based backups can fall into, and the Bellman residual at the
    belief set equals the per-round change. Stops once that change is below
    ``tolerance / 2``.
    """
    gamma = cm.discount if gamma is None else gamma
    if beliefs is None:
        beliefs = reachable_beliefs(cm, n_beliefs, seed)
    joint, rewards = _pomdp_arrays(cm)
    mats = merged_joints(joint)
    floor = min(0.0, float(rewards.min())) / (1.0 - gamma)
    if init is None:
        vectors = np.full((1, cm.n_clusters), floor)
        actions = np.zeros(1, dtype=np.int64)
    else:
        vectors, actions = init.vectors.copy(), init.actions.copy()
    prev = (beliefs @ vectors.T).max(axis=1)
    idx = np.arange(len(beliefs))
    delta, it = np.inf, 0
    for it in range(1, max_iters + 1):
        cand = []
        for a, ms in enumerate(mats):
            alpha = np.tile(rewards[:, a], (len(beliefs), 1))
            for jo in ms:
                proj = gamma * (jo @ vectors.T)  # (C, K)
                best = np.argmax(beliefs @ proj, axis=1)
                alpha += proj[:, best].T
            cand.append(alpha)
        cand = np.stack(cand)  # (A, B, C)
        act = greedy(np.einsum("abc,bc->ab", cand, beliefs).T)
        new = cand[act, idx]
        _, first = np.unique(np.rint(new / 1e-10), axis=0, return_index=True)
        first = np.sort(first)
        new, act = new[first], act[first]
        fresh = ~_dominated_by(new, vectors, 1e-10)
        new, act = new[fresh], act[fresh]
        stale = _dominated_by(vectors, new, 1e-10)
        vectors = np.vstack([vectors[~stale], new])
        actions = np.concatenate([actions[~stale], act])
        cur = (beliefs @ vectors.T).max(axis=1)
        delta = float(np.max(cur - prev))
        prev = cur
        if delta < tolerance / 2:
            break
    log.debug("PBVI: %d beliefs, %d vectors, %d iterations, delta %.3g",
              len(beliefs), len(vectors), it, delta)
    return AlphaVectorSet(vectors, actions, it, delta < tolerance / 2, delta, beliefs)
