"""Exact dynamic-programming solvers and a brute-force enumeration oracle."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import InstanceTooLargeError, ValidationError
from .mdp import FiniteMdp, Policy, _label_to_json, evaluate_policy_exact

BRUTE_FORCE_LIMIT = 10**7


@dataclass
class SolveResult:
    """Values and policy returned by a solver.

    Finite horizon: ``values`` has shape (H+1, S) and ``policy`` (H, S).
    Infinite horizon: both are indexed by state only.
    """

    values: np.ndarray
    policy: np.ndarray
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)

    @property
    def finite_horizon(self) -> bool:
        return self.values.ndim == 2

    def as_policy(self) -> Policy:
        if self.finite_horizon:
            return Policy.markovian(self.policy)
        return Policy.stationary(self.policy)

    def to_dict(self, mdp: FiniteMdp | None = None) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "values": self.values.tolist(),
            "policy": self.policy.tolist(),
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "history": [float(h) for h in self.history],
        }
        if mdp is not None:
            doc["states"] = [_label_to_json(s) for s in mdp.states]
            doc["actions"] = [_label_to_json(a) for a in mdp.actions]
        return doc

    def to_json(self, path: str | Path, mdp: FiniteMdp | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(mdp), sort_keys=True) + "\n")


def greedy(q: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimizing admissible action per row; ties go to the lowest index."""
    masked = np.where(mask, q, np.inf)
    act = np.argmin(masked, axis=1)
    return act, masked[np.arange(q.shape[0]), act]


def _check_constraints(mdp: FiniteMdp) -> None:
    if not mdp.admissible_mask.any(axis=1).all():
        raise ValidationError("every state needs at least one admissible action")


def backward_induction(mdp: FiniteMdp) -> SolveResult:
    """Finite-horizon Bellman recursion from ``V_H = C``."""
    if mdp.horizon is None:
        raise ValidationError("backward induction needs a finite horizon")
    _check_constraints(mdp)
    H, n_s = mdp.horizon, mdp.n_states
    values = np.empty((H + 1, n_s))
    policy = np.empty((H, n_s), dtype=int)
    values[H] = mdp.terminal
    for t in range(H - 1, -1, -1):
        policy[t], values[t] = greedy(mdp.backup(values[t + 1], t), mdp.admissible_mask)
    return SolveResult(values, policy, H, bellman_residual(mdp, values))


def bellman_residual(mdp: FiniteMdp, values: np.ndarray, gamma: float = 1.0) -> float:
    """Largest violation of the Bellman optimality equation by ``values``."""
    if values.ndim == 2:
        worst = 0.0
        for t in range(values.shape[0] - 1):
            _, best = greedy(mdp.backup(values[t + 1], t), mdp.admissible_mask)
            worst = max(worst, float(np.max(np.abs(values[t] - best))))
        return worst
    _, best = greedy(mdp.backup(values, 0, gamma), mdp.admissible_mask)
    return float(np.max(np.abs(values - best)))


def _check_discount(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ValidationError("discount must lie in (0, 1)")


def value_iteration(
    mdp: FiniteMdp,
    gamma: float,
    eps: float,
    v0: np.ndarray | None = None,
    max_iter: int = 10**6,
) -> SolveResult:
    """Iterate the Bellman operator until the sup-norm change is at most ``eps(1-gamma)/gamma``."""
    _check_discount(gamma)
    if eps <= 0:
        raise ValidationError("eps must be positive")
    _check_constraints(mdp)
    V = np.zeros(mdp.n_states) if v0 is None else np.asarray(v0, dtype=float).copy()
    threshold = eps * (1.0 - gamma) / gamma
    deltas: list[float] = []
    for n in range(1, max_iter + 1):
        _, V_new = greedy(mdp.backup(V, 0, gamma), mdp.admissible_mask)
        delta = float(np.max(np.abs(V_new - V)))
        deltas.append(delta)
        V = V_new
        if delta <= threshold:
            break
    policy, _ = greedy(mdp.backup(V, 0, gamma), mdp.admissible_mask)
    return SolveResult(V, policy, n, deltas[-1], deltas)


def policy_iteration(
    mdp: FiniteMdp,
    gamma: float,
    pi0: np.ndarray | None = None,
    max_iter: int = 1000,
) -> SolveResult:
    """Exact evaluation plus greedy improvement until the policy is stable.

    The incumbent action is kept whenever it is already a minimizer, which
    rules out cycling between tied actions.
    """
    _check_discount(gamma)
    _check_constraints(mdp)
    mask = mdp.admissible_mask
    if pi0 is None:
        pi = np.argmax(mask, axis=1)
    else:
        pi = np.asarray(pi0, dtype=int).copy()
        if not mask[np.arange(mdp.n_states), pi].all():
            raise ValidationError("initial policy is not admissible")
    previous = None
    sums: list[float] = []
    for it in range(1, max_iter + 1):
        V = evaluate_policy_exact(mdp, Policy.stationary(pi), gamma)
        scale = 1e-12 * max(1.0, float(np.max(np.abs(V))))
        if previous is not None and np.any(V > previous + scale):
            raise RuntimeError("policy iteration values increased; evaluation is inaccurate")
        previous = V
        sums.append(float(V.sum()))
        Q = mdp.backup(V, 0, gamma)
        best_act, best = greedy(Q, mask)
        current = Q[np.arange(mdp.n_states), pi]
        tol = 1e-12 * np.maximum(1.0, np.abs(best))
        new = np.where(current > best + tol, best_act, pi)
        if np.array_equal(new, pi):
            return SolveResult(V, pi, it, float(np.max(np.abs(V - best))), sums)
        pi = new
    raise RuntimeError(f"policy iteration did not stabilize within {max_iter} iterations")


def _reachable_slots(mdp: FiniteMdp, s0: int) -> list[list[int]]:
    H = mdp.horizon
    layers = [[s0]]
    for t in range(H - 1):
        nxt: set[int] = set()
        for s in layers[-1]:
            for a in mdp.admissible_actions(s):
                idx, _ = mdp.successors(s, a, t)
                nxt.update(int(i) for i in idx)
        layers.append(sorted(nxt))
    return layers


def brute_force_optimal(
    mdp: FiniteMdp,
    s0: int,
    limit: int = BRUTE_FORCE_LIMIT,
    chunk: int = 1 << 15,
) -> float:
    """Minimum exact total cost from ``s0`` over all Markov deterministic policies.

    Policies that differ only at stage/state pairs unreachable from ``s0``
    have equal value, so the enumeration runs over reachable pairs only.
    Each policy is evaluated by forward propagation of the state
    distribution, independently of any Bellman recursion.
    """
    if mdp.horizon is None:
        raise ValidationError("brute force needs a finite horizon")
    _check_constraints(mdp)
    H, n_s, n_a = mdp.horizon, mdp.n_states, mdp.n_actions
    if H == 0:
        return float(mdp.terminal[s0])
    layers = _reachable_slots(mdp, s0)
    slots = [(t, s) for t, layer in enumerate(layers) for s in layer]
    options = [mdp.admissible_actions(s) for _, s in slots]
    sizes = np.array([len(o) for o in options], dtype=np.int64)
    total = math.prod(int(n) for n in sizes)
    if total > limit:
        raise InstanceTooLargeError(f"{total} policies exceed the enumeration limit {limit}")
    radix = np.concatenate(([1], np.cumprod(sizes[:-1]))).astype(np.int64)
    dense_p = []
    for t in range(H):
        mat = mdp.transition_matrix(t)
        arr = mat.toarray() if hasattr(mat, "toarray") else mat
        dense_p.append(arr.reshape(n_s, n_a, n_s))
    costs = [mdp.expected_cost(t) for t in range(H)]
    best = math.inf
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        n = idx.size
        dist = np.zeros((n, n_s))
        dist[:, s0] = 1.0
        value = np.zeros(n)
        k = 0
        for t, layer in enumerate(layers):
            nxt = np.zeros((n, n_s))
            for s in layer:
                choice = (idx // radix[k]) % sizes[k]
                act = options[k][choice]
                k += 1
                mass = dist[:, s]
                value += mass * costs[t][s, act]
                nxt += mass[:, None] * dense_p[t][s, act]
            dist = nxt
        value += dist @ mdp.terminal
        best = min(best, float(value.min()))
    return best
