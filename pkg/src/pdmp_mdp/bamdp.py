"""Bayes-adaptive MDPs with Dirichlet counts, plus observation-count models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CapExceededError, InadmissibleActionError, ValidationError
from .mdp import FiniteMdp, _sample_index
from .rl import GenerativeModel

DEFAULT_CAP = 10**6

Counts = tuple[tuple[int, ...], ...]


class HyperState(NamedTuple):
    s: int
    theta: Counts


@dataclass(frozen=True)
class BayesAdaptiveModel:
    """Base MDP whose listed ``(s, a)`` rows are unknown.

    Row ``k`` has successor support ``supports[k]`` and Dirichlet counts
    ``theta0[k]`` aligned with that support.
    """

    base: FiniteMdp
    rows: tuple[tuple[int, int], ...]
    supports: tuple[tuple[int, ...], ...]
    theta0: Counts

    @classmethod
    def create(
        cls,
        base: FiniteMdp,
        rows: Sequence[tuple[int, int]],
        theta0: Sequence[Sequence[int]],
        supports: Sequence[Sequence[int]] | None = None,
    ) -> "BayesAdaptiveModel":
        if not base.stationary:
            raise ValidationError("Bayes-adaptive lifting needs a stationary base model")
        rows = tuple((int(s), int(a)) for s, a in rows)
        if len(set(rows)) != len(rows):
            raise ValidationError("unknown rows must be distinct")
        if supports is None:
            supports = [tuple(int(i) for i in base.successors(s, a)[0]) for s, a in rows]
        supports = tuple(tuple(int(i) for i in sup) for sup in supports)
        theta = tuple(tuple(int(x) for x in th) for th in theta0)
        if len(supports) != len(rows) or len(theta) != len(rows):
            raise ValidationError("one support and one count vector per unknown row")
        for sup, th in zip(supports, theta):
            if len(sup) != len(th) or min(th) < 0 or sum(th) <= 0:
                raise ValidationError("counts must be non-negative, match the support and have positive sum")
        return cls(base, rows, supports, theta)

    def row_index(self, s: int, a: int) -> int | None:
        try:
            return self.rows.index((s, a))
        except ValueError:
            return None

    def initial(self, s0: int) -> HyperState:
        return HyperState(int(s0), self.theta0)


def increment(theta: Counts, k: int, j: int) -> Counts:
    row = list(theta[k])
    row[j] += 1
    return theta[:k] + (tuple(row),) + theta[k + 1 :]


def predictive(theta_row: Sequence[int]) -> np.ndarray:
    counts = np.asarray(theta_row, dtype=float)
    total = counts.sum()
    if not total > 0:
        raise ValidationError("Dirichlet counts of an exercised row sum to zero")
    return counts / total


def bamdp_transition(model: BayesAdaptiveModel, hyper: HyperState, a: int) -> list[tuple[float, HyperState]]:
    """Successor hyperstates with their predictive probabilities."""
    s, theta = hyper
    if not model.base.admissible_mask[s, a]:
        raise InadmissibleActionError(f"action {a} not admissible in state {s}")
    k = model.row_index(s, a)
    if k is None:
        idx, probs = model.base.successors(s, a)
        return [(float(p), HyperState(int(i), theta)) for i, p in zip(idx, probs) if p > 0]
    probs = predictive(theta[k])
    return [
        (float(p), HyperState(s2, increment(theta, k, j)))
        for j, (s2, p) in enumerate(zip(model.supports[k], probs))
        if p > 0
    ]


@dataclass
class HyperMdp:
    mdp: FiniteMdp
    hyperstates: list[HyperState]
    root: int

    def index(self, hyper: HyperState) -> int:
        return self.mdp.state_index(hyper)


def build_bamdp(model: BayesAdaptiveModel, s0: int, horizon: int, cap: int = DEFAULT_CAP) -> HyperMdp:
    """Explicit finite MDP over the hyperstates reachable from ``(s0, theta0)`` in ``horizon`` steps.

    States first met at depth ``horizon`` are never acted upon before the
    horizon, so they receive self-loops instead of being expanded.
    """
    base = model.base
    n_a = base.n_actions
    root = model.initial(s0)
    index = {root: 0}
    states = [root]
    layer = [root]
    rows, cols, probs, costs = [], [], [], []
    for depth in range(horizon + 1):
        nxt = []
        for h in layer:
            i = index[h]
            for a in base.admissible_actions(h.s):
                r = i * n_a + int(a)
                if depth == horizon:
                    rows.append(r), cols.append(i), probs.append(1.0), costs.append(0.0)
                    continue
                for p, h2 in bamdp_transition(model, h, int(a)):
                    j = index.get(h2)
                    if j is None:
                        j = len(states)
                        if j >= cap:
                            raise CapExceededError(f"more than {cap} reachable hyperstates")
                        index[h2] = j
                        states.append(h2)
                        nxt.append(h2)
                    rows.append(r), cols.append(j), probs.append(p)
                    costs.append(base.stage_cost(h.s, int(a), h2.s))
        layer = nxt
    n = len(states)
    P = sp.csr_array((probs, (rows, cols)), shape=(n * n_a, n))
    C = sp.csr_array((costs, (rows, cols)), shape=(n * n_a, n))
    mask = np.array([base.admissible_mask[h.s] for h in states])
    terminal = np.array([base.terminal[h.s] for h in states])
    mdp = FiniteMdp(P, C, terminal=terminal, horizon=horizon, admissible=mask, states=states, actions=base.actions)
    return HyperMdp(mdp, states, 0)


def bamdp_generative(model: BayesAdaptiveModel, horizon: int | None = None, discount: float = 1.0) -> GenerativeModel:
    """Hyperstate simulator; finite horizons use stage-aware states ``(t, hyperstate)``."""
    base = model.base

    def sample(h: HyperState, a: int, rng: np.random.Generator) -> tuple[HyperState, float]:
        outcomes = bamdp_transition(model, h, a)
        p = np.array([o[0] for o in outcomes])
        h2 = outcomes[_sample_index(p, rng.random())][1]
        return h2, base.stage_cost(h.s, a, h2.s)

    def actions(h: HyperState) -> list[int]:
        return [int(a) for a in base.admissible_actions(h.s)]

    if horizon is None:
        return GenerativeModel(step=sample, admissible=actions, discount=discount)

    def step(state, a, rng):
        t, h = state
        h2, c = sample(h, a, rng)
        return (t + 1, h2), c

    return GenerativeModel(
        step=step,
        admissible=lambda state: actions(state[1]),
        is_terminal=lambda state: state[0] >= horizon,
        horizon=horizon,
        discount=discount,
        terminal_cost=lambda state: float(base.terminal[state[1].s]) if state[0] >= horizon else 0.0,
    )


def total_counts(theta: Counts) -> int:
    return sum(sum(row) for row in theta)


# -- observation counts -------------------------------------------------------------


class ObsCounts:
    """Count tensor ``psi[a, s', omega]`` of a Bayes-adaptive observation model."""

    def __init__(self, psi: Any) -> None:
        arr = np.array(psi, dtype=np.int64)
        if arr.ndim != 3 or np.any(arr < 0):
            raise ValidationError("observation counts are a non-negative (A, S, n_obs) integer tensor")
        arr.setflags(write=False)
        self.psi = arr

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ObsCounts) and np.array_equal(self.psi, other.psi)

    def __hash__(self) -> int:
        return hash(self.psi.tobytes())

    def total(self) -> int:
        return int(self.psi.sum())


def bapomdp_obs_prob(psi: ObsCounts, a: int, s_next: int, omega: int) -> float:
    """Predictive probability ``psi[a,s',omega] / sum_w psi[a,s',w]``."""
    row = psi.psi[a, s_next]
    total = int(row.sum())
    if total < 1:
        raise ValidationError(f"no observation counts for action {a} and state {s_next}")
    return float(row[omega]) / total


def bapomdp_count_update(psi: ObsCounts, a: int, s_next: int, omega: int) -> ObsCounts:
    arr = psi.psi.copy()
    arr[a, s_next, omega] += 1
    return ObsCounts(arr)


def obs_table_from_counts(psi: ObsCounts) -> np.ndarray:
    """Point-estimate observation table ``O[s', a, omega]`` for use in a POMDP."""
    arr = psi.psi.astype(float)
    totals = arr.sum(axis=2, keepdims=True)
    if np.any(totals < 1):
        raise ValidationError("every (a, s') needs at least one observation count")
    return np.transpose(arr / totals, (1, 0, 2))
