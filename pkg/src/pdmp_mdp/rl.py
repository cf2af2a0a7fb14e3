"""Sampling-based solvers that only need a generative model."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Sequence

import numpy as np

from .errors import InadmissibleActionError, ValidationError
from .mdp import FiniteMdp, _sample_index


def _identity(s: Any) -> Any:
    return s


def _zero(s: Any) -> float:
    return 0.0


def _never(s: Any) -> bool:
    return False


@dataclass
class GenerativeModel:
    """Simulator interface: ``step(s, a, rng) -> (s', cost)``.

    ``terminal_cost`` is charged when a finite-horizon episode ends;
    ``state_key`` maps states to hashable keys for tree and table lookup.
    """

    step: Callable[[Any, Any, np.random.Generator], tuple[Any, float]]
    admissible: Callable[[Any], Sequence[Any]]
    is_terminal: Callable[[Any], bool] = _never
    horizon: int | None = None
    discount: float = 1.0
    terminal_cost: Callable[[Any], float] = _zero
    initial: Callable[[np.random.Generator], Any] | None = None
    state_key: Callable[[Any], Hashable] = _identity

    @classmethod
    def from_mdp(cls, mdp: FiniteMdp, discount: float = 1.0) -> "GenerativeModel":
        """Finite-horizon MDPs yield stage-aware states ``(t, s)``; others use plain indices."""
        mask = mdp.admissible_mask
        acts = [[int(a) for a in np.flatnonzero(mask[s])] for s in range(mdp.n_states)]
        rows: dict[tuple[int, int, int], tuple[list[int], list[float]]] = {}
        stage_free = mdp.stationary

        def sample(s: int, a: int, t: int, rng: np.random.Generator) -> tuple[int, float]:
            if not mask[s, a]:
                raise InadmissibleActionError(f"action {a} not admissible in state {s}")
            key = (0 if stage_free else t, s, a)
            row = rows.get(key)
            if row is None:
                idx, probs = mdp.successors(s, a, t)
                row = rows[key] = ([int(i) for i in idx], np.cumsum(probs).tolist())
            idx, cum = row
            s2 = idx[min(bisect.bisect_right(cum, rng.random()), len(idx) - 1)]
            return s2, mdp.stage_cost(s, a, s2, t)

        if mdp.horizon is None:
            return cls(
                step=lambda s, a, rng: sample(s, a, 0, rng),
                admissible=lambda s: acts[s],
                discount=discount,
                initial=lambda rng: int(rng.integers(mdp.n_states)),
            )
        H = mdp.horizon

        def step(state: tuple[int, int], a: int, rng: np.random.Generator) -> tuple[tuple[int, int], float]:
            t, s = state
            s2, c = sample(s, a, t, rng)
            return (t + 1, s2), c

        return cls(
            step=step,
            admissible=lambda state: acts[state[1]],
            is_terminal=lambda state: state[0] >= H,
            horizon=H,
            discount=discount,
            terminal_cost=lambda state: float(mdp.terminal[state[1]]) if state[0] >= H else 0.0,
            initial=lambda rng: (0, int(rng.integers(mdp.n_states))),
        )


class QTable:
    """Action-value estimates for admissible pairs only."""

    def __init__(self, gen: GenerativeModel, default: float = 0.0) -> None:
        self.gen = gen
        self.default = float(default)
        self.values: dict[tuple[Hashable, Any], float] = {}

    def get(self, s: Any, a: Any) -> float:
        return self.values.get((self.gen.state_key(s), a), self.default)

    def set(self, s: Any, a: Any, value: float) -> None:
        self.values[(self.gen.state_key(s), a)] = value

    def greedy(self, s: Any) -> Any:
        acts = list(self.gen.admissible(s))
        vals = [self.get(s, a) for a in acts]
        return acts[int(np.argmin(vals))]

    def min_value(self, s: Any) -> float:
        return min(self.get(s, a) for a in self.gen.admissible(s))

    def as_array(self, n_states: int, n_actions: int) -> np.ndarray:
        out = np.full((n_states, n_actions), np.nan)
        for s in range(n_states):
            for a in self.gen.admissible(s):
                out[s, a] = self.get(s, a)
        return out


def q_learning(
    gen: GenerativeModel,
    gamma: float,
    alpha: float,
    eps: float,
    n_episodes: int,
    episode_len: int,
    rng: np.random.Generator,
    q0: float = 0.0,
    start: Any = None,
) -> QTable:
    """Tabular Q-learning with epsilon-greedy exploration on costs.

    With probability ``1 - eps`` the admissible action of lowest Q is taken,
    otherwise an admissible action is drawn uniformly.
    """
    if not 0.0 < gamma < 1.0 or not 0.0 < alpha <= 1.0 or not 0.0 <= eps <= 1.0:
        raise ValidationError("need gamma in (0,1), alpha in (0,1], eps in [0,1]")
    if start is None and gen.initial is None:
        raise ValidationError("a start state or an initial-state sampler is required")
    q = QTable(gen, q0)
    for _ in range(n_episodes):
        s = start if start is not None else gen.initial(rng)
        for _ in range(episode_len):
            if gen.is_terminal(s):
                break
            acts = list(gen.admissible(s))
            if rng.random() < eps:
                a = acts[int(rng.integers(len(acts)))]
            else:
                a = q.greedy(s)
            s2, c = gen.step(s, a, rng)
            future = gen.terminal_cost(s2) if gen.is_terminal(s2) else q.min_value(s2)
            old = q.get(s, a)
            q.set(s, a, old + alpha * (c + gamma * future - old))
            s = s2
    return q


# -- Monte-Carlo tree search --------------------------------------------------------


class SearchNode:
    """Tree node ``<s, a, nu, rho>`` plus the mean cost of its incoming edge."""

    __slots__ = ("s", "a", "nu", "rho", "cost", "q", "children", "parent", "depth", "ret_min", "ret_max", "ret_sum")

    def __init__(self, s: Any, a: Any, parent: "SearchNode | None", cost: float, depth: int) -> None:
        self.s = s
        self.a = a
        self.nu = 1
        self.rho = 0.0
        self.cost = cost
        self.q = cost
        self.children: dict[Any, dict[Hashable, SearchNode]] = {}
        self.parent = parent
        self.depth = depth
        self.ret_min = math.inf
        self.ret_max = -math.inf
        self.ret_sum = 0.0

    def iter_nodes(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            for group in node.children.values():
                stack.extend(group.values())


@dataclass
class ActionStats:
    nu: int
    q: float


def action_stats(node: SearchNode) -> dict[Any, ActionStats]:
    """Visit-weighted mean of ``c + gamma * rho`` over the children of each tried action."""
    out = {}
    for a, group in node.children.items():
        n = sum(c.nu for c in group.values())
        out[a] = ActionStats(n, sum(c.nu * c.q for c in group.values()) / n)
    return out


def uct_score(parent_visits: int, child: Any, c_uct: float, scale: float = 1.0) -> float:
    """Lower-confidence score on costs: normalized mean minus exploration bonus."""
    if child.nu < 1:
        raise ValidationError("child must have been visited")
    bonus = c_uct * math.sqrt(math.log(max(parent_visits, 1)) / child.nu)
    return child.q / scale - bonus


@dataclass
class SearchResult:
    action: Any
    root: SearchNode
    iterations: int
    stats: dict[Any, ActionStats] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        return {
            "action": self.action,
            "iterations": self.iterations,
            "root_visits": self.root.nu,
            "actions": [
                {"action": a, "visits": st.nu, "value": st.q} for a, st in sorted(self.stats.items(), key=lambda kv: repr(kv[0]))
            ],
        }


def default_depth(gen: GenerativeModel, gamma: float, eps_tail: float) -> int:
    if gen.horizon is not None:
        return gen.horizon
    if not 0.0 < gamma < 1.0:
        raise ValidationError("an infinite-horizon search needs a discount in (0, 1)")
    return max(1, math.ceil(math.log(eps_tail) / math.log(gamma)))


def mcts_search(
    gen: GenerativeModel,
    s0: Any,
    budget: int,
    rng: np.random.Generator,
    c_uct: float = math.sqrt(2.0),
    gamma: float | None = None,
    max_depth: int | None = None,
    backup: str = "bellman",
    eps_tail: float = 1e-6,
    root_sampler: Callable[[np.random.Generator], Any] | None = None,
) -> SearchResult:
    """UCT search returning the root action and the tree.

    ``backup="bellman"`` recomputes each ancestor's value as the minimum over
    actions of visit-weighted child averages; ``"average"`` keeps the mean
    of the sampled returns instead. With ``root_sampler`` every iteration
    starts from a freshly sampled state while children are keyed by
    ``gen.state_key`` of the sampled successors.
    """
    gamma = gen.discount if gamma is None else gamma
    depth_cap = default_depth(gen, gamma, eps_tail) if max_depth is None else max_depth
    root_actions = list(gen.admissible(s0))
    if budget < len(root_actions):
        raise ValidationError("budget must cover every root action at least once")
    if backup not in ("bellman", "average"):
        raise ValidationError("backup must be 'bellman' or 'average'")
    finite = gen.horizon is not None
    root = SearchNode(s0, None, None, 0.0, 0)
    scale = 0.0
    for _ in range(budget):
        state = root_sampler(rng) if root_sampler is not None else s0
        node = root
        root.nu += 1
        edge_costs: list[float] = []
        expanded = None
        while node.depth < depth_cap and not gen.is_terminal(state):
            acts = list(gen.admissible(state))
            untried = [a for a in acts if a not in node.children]
            if untried:
                a = untried[int(rng.integers(len(untried)))]
            else:
                stats = action_stats(node)
                sc = scale if scale > 0 else 1.0
                scores = [uct_score(node.nu, stats[a], c_uct, sc) for a in acts]
                a = acts[int(np.argmin(scores))]
            s2, c = gen.step(state, a, rng)
            key = gen.state_key(s2)
            group = node.children.setdefault(a, {})
            child = group.get(key)
            edge_costs.append(c)
            state = s2
            if child is None:
                child = SearchNode(s2, a, node, c, node.depth + 1)
                group[key] = child
                expanded = child
                node = child
                break
            child.nu += 1
            child.cost += (c - child.cost) / child.nu
            node = child
        # simulation with the uniform default policy
        ret, disc, depth = 0.0, 1.0, node.depth
        while depth < depth_cap and not gen.is_terminal(state):
            acts = list(gen.admissible(state))
            a = acts[int(rng.integers(len(acts)))]
            state, c = gen.step(state, a, rng)
            ret += disc * c
            disc *= gamma
            depth += 1
        if finite:
            ret += disc * gen.terminal_cost(state)
        if expanded is not None:
            expanded.rho = ret
        # backpropagation
        g = ret
        v = node
        while v is not None:
            v.ret_min = min(v.ret_min, g)
            v.ret_max = max(v.ret_max, g)
            v.ret_sum += g
            scale = max(scale, abs(g))
            if v is not expanded and v.children:
                if backup == "bellman":
                    v.rho = min(st.q for st in action_stats(v).values())
                else:
                    v.rho = v.ret_sum / v.nu if v.parent is not None else v.ret_sum / (v.nu - 1)
            if v.parent is not None:
                v.q = v.cost + gamma * v.rho
                g = edge_costs.pop() + gamma * g
            v = v.parent
    stats = action_stats(root)
    best = min(root_actions, key=lambda a: (stats[a].q if a in stats else math.inf))
    return SearchResult(best, root, budget, stats)


def mcts_plan(
    gen: GenerativeModel,
    s0: Any,
    budget: int,
    rng: np.random.Generator,
    c_uct: float = math.sqrt(2.0),
    gamma: float | None = None,
    max_depth: int | None = None,
    backup: str = "bellman",
) -> Any:
    """Root action chosen by :func:`mcts_search`."""
    return mcts_search(gen, s0, budget, rng, c_uct, gamma, max_depth, backup).action
