"""Finite POMDPs, Bayesian belief updates and the reachable belief MDP."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Hashable, Sequence

import numpy as np
import scipy.sparse as sp

from .dp import backward_induction
from .errors import CapExceededError, ImpossibleEvidenceError, InadmissibleActionError, ValidationError
from .mdp import FiniteMdp, _label_to_json, _sample_index

BELIEF_TOL = 1e-12
DEFAULT_CAP = 10**6


class FinitePomdp:
    """A :class:`FiniteMdp` observed through ``O(s', a, omega)``.

    Discrete observations come as an array of shape ``(S, A, n_obs)`` (or
    ``(S, n_obs)`` when action-independent). Continuous observations are
    given by a ``density(s_next, a, omega)`` plus a ``sampler(s_next, a, rng)``.
    The initial belief is ``b0``; if only ``omega0`` is known the belief is
    the posterior of ``prior`` (uniform by default) under ``O(., 0, omega0)``.
    """

    def __init__(
        self,
        base: FiniteMdp,
        obs: Any = None,
        *,
        observations: Sequence[Hashable] | None = None,
        density: Callable[[int, int, Any], float] | None = None,
        sampler: Callable[[int, int, np.random.Generator], Any] | None = None,
        b0: Any = None,
        omega0: Any = None,
        prior: Any = None,
    ) -> None:
        self.base = base
        n_s, n_a = base.n_states, base.n_actions
        if (obs is None) == (density is None):
            raise ValidationError("give exactly one of an observation table or a density")
        if obs is not None:
            table = np.asarray(obs, dtype=float)
            if table.ndim == 2:
                table = np.repeat(table[:, None, :], n_a, axis=1)
            if table.ndim != 3 or table.shape[:2] != (n_s, n_a):
                raise ValidationError("observation table must have shape (S, A, n_obs)")
            if np.any(table < 0) or np.max(np.abs(table.sum(axis=2) - 1.0)) > BELIEF_TOL:
                raise ValidationError("observation rows must be probability vectors")
            self.obs = table
            self.n_obs = table.shape[2]
            self.observations = list(observations) if observations is not None else list(range(self.n_obs))
            if len(self.observations) != self.n_obs:
                raise ValidationError("observation labels do not match the table")
            self._obs_index = {lab: i for i, lab in enumerate(self.observations)}
            self._cum = np.cumsum(table, axis=2)
        else:
            if sampler is None:
                raise ValidationError("a continuous observation model needs a sampler")
            self.obs = None
            self.n_obs = None
            self.observations = None
        self.density = density
        self.sampler = sampler
        if b0 is not None:
            b = np.asarray(b0, dtype=float)
        elif omega0 is not None:
            pri = np.full(n_s, 1.0 / n_s) if prior is None else np.asarray(prior, dtype=float)
            b = self._posterior(pri, self.likelihood(0, omega0))
        else:
            raise ValidationError("an initial belief or an initial observation is required")
        self.b0 = check_belief(b, n_s)

    @property
    def continuous(self) -> bool:
        return self.obs is None

    def obs_index(self, label: Hashable) -> int:
        try:
            return self._obs_index[label]
        except (KeyError, AttributeError) as exc:
            raise ValidationError(f"unknown observation {label!r}") from exc

    def likelihood(self, a: int, omega: Any) -> np.ndarray:
        """``O(s', a, omega)`` as a vector over ``s'``."""
        if self.obs is not None:
            return self.obs[:, a, int(omega)]
        return np.array([self.density(s2, a, omega) for s2 in range(self.base.n_states)], dtype=float)

    def sample_obs(self, s_next: int, a: int, rng: np.random.Generator) -> Any:
        if self.obs is not None:
            return _sample_index(self.obs[s_next, a], rng.random())
        return self.sampler(s_next, a, rng)

    @staticmethod
    def _posterior(pred: np.ndarray, lik: np.ndarray) -> np.ndarray:
        post = pred * lik
        z = post.sum()
        if not z > 0:
            raise ImpossibleEvidenceError("observation has zero probability under the belief")
        return post / z


def check_belief(b: Any, n_states: int) -> np.ndarray:
    arr = np.asarray(b, dtype=float)
    if arr.shape != (n_states,) or np.any(arr < 0) or abs(arr.sum() - 1.0) > BELIEF_TOL:
        raise ValidationError("a belief is a probability vector over the states")
    return arr


def _action_block(mdp: FiniteMdp, a: int, t: int) -> Any:
    return mdp.transition_matrix(t)[a :: mdp.n_actions]


def predict(pomdp: FinitePomdp, b: np.ndarray, a: int, t: int = 0) -> np.ndarray:
    """One-step predicted state distribution ``sum_s b(s) P(.|s, a)``."""
    block = _action_block(pomdp.base, a, t)
    return np.asarray(block.T @ b).ravel() if sp.issparse(block) else b @ block


def belief_update(pomdp: FinitePomdp, b: np.ndarray, a: int, omega: Any, t: int = 0) -> np.ndarray:
    """Bayes posterior after acting ``a`` and observing ``omega``."""
    return pomdp._posterior(predict(pomdp, b, a, t), pomdp.likelihood(a, omega))


def belief_transition(
    pomdp: FinitePomdp, b: np.ndarray, a: int, t: int = 0
) -> list[tuple[float, int, np.ndarray]]:
    """Triples ``(Pr(omega | b, a), omega, b')`` for every observation of positive probability."""
    if pomdp.continuous:
        raise ValidationError("observation enumeration needs a finite observation set")
    pred = predict(pomdp, b, a, t)
    joint = pred[:, None] * pomdp.obs[:, a, :]
    p_obs = joint.sum(axis=0)
    out = []
    for w in np.flatnonzero(p_obs > 0):
        out.append((float(p_obs[w]), int(w), joint[:, w] / p_obs[w]))
    return out


def belief_cost(pomdp: FinitePomdp, b: np.ndarray, a: int, b_next: np.ndarray, t: int = 0) -> float:
    """``sum_s b(s) sum_{s'} b'(s') c(s, a, s')``."""
    mdp = pomdp.base
    kind, cost = mdp.cost_table(t)
    if kind == "sa":
        return float(b @ cost[:, a])
    block = cost[a :: mdp.n_actions]
    block = block.toarray() if sp.issparse(block) else block
    return float(b @ block @ b_next)


def expected_stage_cost(pomdp: FinitePomdp, b: np.ndarray, a: int, t: int = 0) -> float:
    """``E[c(S, a, S') | b, a]`` with ``S ~ b`` and ``S' ~ P(.|S, a)``."""
    return float(b @ pomdp.base.expected_cost(t)[:, a])


def belief_admissible(mdp: FiniteMdp, b: np.ndarray) -> np.ndarray:
    """Actions admissible in every state the belief supports."""
    support = np.flatnonzero(b > 0)
    return np.flatnonzero(mdp.admissible_mask[support].all(axis=0))


def belief_key(b: np.ndarray) -> bytes:
    q = np.round(b / BELIEF_TOL).astype(np.int64)
    return q.tobytes()


@dataclass
class BeliefMdp:
    """Reachable beliefs, stage by stage, wrapped as a finite MDP.

    Node ``i`` lives at stage ``stages[i]``; ``children[(i, a, omega)]`` is
    the successor node. Stage-``H`` nodes are absorbing with terminal cost
    ``b . C``.
    """

    mdp: FiniteMdp
    beliefs: list[np.ndarray]
    stages: list[int]
    histories: list[tuple]
    children: dict[tuple[int, int, int], int]
    horizon: int

    @property
    def n_nodes(self) -> int:
        return len(self.beliefs)

    def nodes_at(self, t: int) -> list[int]:
        return [i for i, s in enumerate(self.stages) if s == t]


def build_belief_mdp(pomdp: FinitePomdp, depth: int | None = None, cap: int = DEFAULT_CAP) -> BeliefMdp:
    """Breadth-first expansion of the beliefs reachable from ``b0``.

    Beliefs equal after rounding to 1e-12 share a node within a stage.
    """
    if pomdp.continuous:
        raise ValidationError("belief-MDP enumeration needs a finite observation set")
    base = pomdp.base
    H = base.horizon if depth is None else int(depth)
    if H is None:
        raise ValidationError("a finite depth is required")
    n_a = base.n_actions
    beliefs = [pomdp.b0]
    stages = [0]
    histories: list[tuple] = [()]
    children: dict[tuple[int, int, int], int] = {}
    rows, cols, probs = [], [], []
    cost = []
    layer = [0]
    for t in range(H):
        index: dict[bytes, int] = {}
        nxt = []
        for node in layer:
            b = beliefs[node]
            node_cost = np.zeros(n_a)
            acts = belief_admissible(base, b)
            if acts.size == 0:
                raise ValidationError(f"no action is admissible on the support of belief node {node}")
            ec = base.expected_cost(t)
            for a in acts:
                node_cost[a] = float(b @ ec[:, a])
                for p, w, b2 in belief_transition(pomdp, b, a, t):
                    key = belief_key(b2)
                    child = index.get(key)
                    if child is None:
                        child = len(beliefs)
                        if child >= cap:
                            raise CapExceededError(f"belief MDP exceeds {cap} nodes at stage {t + 1}")
                        index[key] = child
                        beliefs.append(b2)
                        stages.append(t + 1)
                        histories.append(histories[node] + ((int(a), int(w)),))
                        nxt.append(child)
                    children[(node, int(a), int(w))] = child
                    rows.append(node * n_a + a)
                    cols.append(child)
                    probs.append(p)
            cost.append(node_cost)
        layer = nxt
    n = len(beliefs)
    mask = np.zeros((n, n_a), dtype=bool)
    for node in range(n):
        mask[node, belief_admissible(base, beliefs[node])] = True
    for node in layer:
        for a in np.flatnonzero(mask[node]):
            rows.append(node * n_a + a)
            cols.append(node)
            probs.append(1.0)
        cost.append(np.zeros(n_a))
    P = sp.csr_array((probs, (rows, cols)), shape=(n * n_a, n))
    P.sum_duplicates()
    c = np.array(cost)
    terminal = np.array([float(b @ base.terminal) for b in beliefs])
    bmdp = FiniteMdp(P, c, terminal=terminal, horizon=H, admissible=mask)
    return BeliefMdp(bmdp, beliefs, stages, histories, children, H)


@dataclass
class BeliefPolicy:
    """Optimal action per belief node of a :class:`BeliefMdp`."""

    belief_mdp: BeliefMdp
    actions: dict[int, int]
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def action(self, node: int) -> int:
        return self.actions[node]

    def next_node(self, node: int, a: int, omega: int) -> int:
        try:
            return self.belief_mdp.children[(node, int(a), int(omega))]
        except KeyError as exc:
            raise ValidationError("history leaves the expanded belief tree") from exc

    def node_for_history(self, history: Sequence[tuple[int, int]]) -> int:
        node = 0
        for a, w in history:
            node = self.next_node(node, a, w)
        return node

    def __call__(self, t: int, b: np.ndarray, history: Sequence[tuple[int, int]]) -> int:
        return self.action(self.node_for_history(history))

    def to_dict(self, pomdp: FinitePomdp | None = None) -> dict[str, Any]:
        bm = self.belief_mdp
        labels = pomdp.observations if pomdp is not None else None
        acts = pomdp.base.actions if pomdp is not None else None
        entries = []
        for node in sorted(self.actions):
            hist = [
                [_label_to_json(acts[a] if acts else a), _label_to_json(labels[w] if labels else w)]
                for a, w in bm.histories[node]
            ]
            a = self.actions[node]
            entries.append(
                {
                    "stage": bm.stages[node],
                    "history": hist,
                    "action": _label_to_json(acts[a] if acts else a),
                    "value": float(self.values[node]) if self.values.size else None,
                }
            )
        return {"horizon": bm.horizon, "nodes": entries}

    def to_json(self, path: str | Path, pomdp: FinitePomdp | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(pomdp), sort_keys=True) + "\n")


def solve_pomdp(
    pomdp: FinitePomdp, depth: int | None = None, cap: int = DEFAULT_CAP
) -> tuple[float, BeliefPolicy]:
    """Backward induction on the reachable belief MDP; returns ``(V(b0), policy)``."""
    bm = build_belief_mdp(pomdp, depth, cap)
    res = backward_induction(bm.mdp)
    actions = {}
    values = np.empty(bm.n_nodes)
    for node, t in enumerate(bm.stages):
        values[node] = res.values[t, node]
        if t < bm.horizon:
            actions[node] = int(res.policy[t, node])
    return float(res.values[0, 0]), BeliefPolicy(bm, actions, values)


@dataclass
class PomdpEpisode:
    states: list[int]
    actions: list[int]
    observations: list[Any]
    costs: list[float]
    terminal_cost: float
    beliefs: list[np.ndarray]

    @property
    def total_cost(self) -> float:
        return math.fsum(self.costs) + self.terminal_cost


def pomdp_simulate(
    pomdp: FinitePomdp,
    policy: Callable[[int, np.ndarray, list], int],
    rng: np.random.Generator,
    s0: int | None = None,
    horizon: int | None = None,
    keep_beliefs: bool = True,
) -> PomdpEpisode:
    """Run the hidden chain under a belief-based policy.

    ``policy(t, b, history)`` receives the current belief and the list of
    ``(a, omega)`` pairs so far. A :class:`BeliefPolicy` is followed through
    its tree directly.
    """
    base = pomdp.base
    H = base.horizon if horizon is None else horizon
    if H is None:
        raise ValidationError("an explicit horizon is required")
    s = _sample_index(pomdp.b0, rng.random()) if s0 is None else int(s0)
    b = pomdp.b0
    node = 0
    tree = isinstance(policy, BeliefPolicy)
    states, actions, observations, costs, beliefs = [s], [], [], [], [b] if keep_beliefs else []
    history: list[tuple[int, Any]] = []
    for t in range(H):
        a = policy.action(node) if tree else int(policy(t, b, history))
        if not base.admissible_mask[s, a]:
            raise InadmissibleActionError(f"action {a} not admissible in hidden state {s}")
        idx, probs = base.successors(s, a, t)
        s2 = int(idx[_sample_index(probs, rng.random())])
        costs.append(base.stage_cost(s, a, s2, t))
        w = pomdp.sample_obs(s2, a, rng)
        b = belief_update(pomdp, b, a, w, t)
        if tree:
            node = policy.next_node(node, a, w)
        history.append((a, w))
        states.append(s2)
        actions.append(a)
        observations.append(w)
        if keep_beliefs:
            beliefs.append(b)
        s = s2
    terminal = float(base.terminal[s]) if base.horizon is not None else 0.0
    return PomdpEpisode(states, actions, observations, costs, terminal, beliefs)
