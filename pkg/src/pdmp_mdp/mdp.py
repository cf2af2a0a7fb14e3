"""Finite Markov decision processes.

A :class:`FiniteMdp` stores transition tables as 2-D matrices of shape
``(S*A, S)`` (row ``s*A + a``), either dense numpy arrays or scipy CSR
matrices. Costs may be given per ``(s, a)`` or per ``(s, a, s')``. Both
tables may be stage-indexed for non-stationary problems.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Hashable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InadmissibleActionError, ValidationError

ROW_TOL = 1e-12


def _as_matrix(table: Any, n_states: int | None) -> tuple[Any, int, int]:
    """Normalize one transition table to an ``(S*A, S)`` matrix."""
    if sp.issparse(table):
        mat = sp.csr_array(table, dtype=float)
        n_s = mat.shape[1]
        if mat.shape[0] % n_s:
            raise ValidationError("sparse transition table must have shape (S*A, S)")
        return mat, n_s, mat.shape[0] // n_s
    arr = np.asarray(table, dtype=float)
    if arr.ndim != 3 or arr.shape[0] != arr.shape[2]:
        raise ValidationError(f"transition table must have shape (S, A, S), got {arr.shape}")
    if n_states is not None and arr.shape[0] != n_states:
        raise ValidationError("inconsistent state count across stages")
    s, a, _ = arr.shape
    return np.ascontiguousarray(arr.reshape(s * a, s)), s, a


def _transition_stages(obj: Any) -> list:
    if sp.issparse(obj):
        return [obj]
    if isinstance(obj, (list, tuple)) and obj and sp.issparse(obj[0]):
        return list(obj)
    arr = np.asarray(obj, dtype=float)
    return list(arr) if arr.ndim == 4 else [arr]


def _cost_stages(obj: Any, n_s: int, n_a: int) -> list:
    if sp.issparse(obj):
        return [obj]
    if isinstance(obj, (list, tuple)) and obj and sp.issparse(obj[0]):
        return list(obj)
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 4 or (arr.ndim == 3 and arr.shape != (n_s, n_a, n_s) and arr.shape[1:] == (n_s, n_a)):
        return list(arr)
    return [arr]


class FiniteMdp:
    """Finite MDP ``<S, A, H, K, P, c, C>`` with optional stage-indexed tables."""

    def __init__(
        self,
        transitions: Any,
        costs: Any,
        *,
        terminal: Sequence[float] | None = None,
        horizon: int | None = None,
        admissible: Any = None,
        states: Sequence[Hashable] | None = None,
        actions: Sequence[Hashable] | None = None,
    ) -> None:
        stages = _transition_stages(transitions)
        mats = []
        n_s = n_a = None
        for table in stages:
            mat, s, a = _as_matrix(table, n_s)
            if n_s is not None and (s, a) != (n_s, n_a):
                raise ValidationError("inconsistent table shapes across stages")
            n_s, n_a = s, a
            mats.append(mat)
        self._P = mats
        self.n_states: int = n_s
        self.n_actions: int = n_a
        if horizon is not None:
            horizon = int(horizon)
            if horizon < 0:
                raise ValidationError("horizon must be non-negative")
        self.horizon: int | None = horizon
        if len(mats) > 1 and (horizon is None or len(mats) != horizon):
            raise ValidationError("stage-indexed transitions need exactly H stages")

        cost_stages = _cost_stages(costs, n_s, n_a)
        if len(cost_stages) > 1 and (horizon is None or len(cost_stages) != horizon):
            raise ValidationError("stage-indexed costs need exactly H stages")
        self._c = [self._normalize_cost(c) for c in cost_stages]
        self._expected = [None] * max(len(self._P), len(self._c))

        if terminal is None:
            self.terminal = np.zeros(n_s)
        else:
            self.terminal = np.asarray(terminal, dtype=float).reshape(-1)
            if self.terminal.shape != (n_s,):
                raise ValidationError("terminal cost must have one entry per state")
        if admissible is None:
            self.admissible_mask = np.ones((n_s, n_a), dtype=bool)
        else:
            mask = np.asarray(admissible, dtype=bool)
            if mask.shape != (n_s, n_a):
                raise ValidationError("admissible mask must have shape (S, A)")
            self.admissible_mask = mask.copy()
        self.states = list(states) if states is not None else list(range(n_s))
        self.actions = list(actions) if actions is not None else list(range(n_a))
        if len(self.states) != n_s or len(self.actions) != n_a:
            raise ValidationError("label lists do not match table dimensions")
        self._state_index = {lab: i for i, lab in enumerate(self.states)}

    # -- construction helpers -------------------------------------------------
    def _normalize_cost(self, cost: Any) -> tuple[str, Any]:
        n_s, n_a = self.n_states, self.n_actions
        if sp.issparse(cost):
            mat = sp.csr_array(cost, dtype=float)
            if mat.shape != (n_s * n_a, n_s):
                raise ValidationError("sparse cost table must have shape (S*A, S)")
            return "sas", mat
        arr = np.asarray(cost, dtype=float)
        if arr.shape == (n_s, n_a):
            return "sa", arr.copy()
        if arr.shape == (n_s, n_a, n_s):
            return "sas", arr.reshape(n_s * n_a, n_s).copy()
        raise ValidationError(f"cost table has unsupported shape {arr.shape}")

    # -- accessors ---------------------------------------------------------
    @property
    def finite_horizon(self) -> bool:
        return self.horizon is not None

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._P[0])

    @property
    def stationary(self) -> bool:
        return len(self._P) == 1 and len(self._c) == 1

    def state_index(self, label: Hashable) -> int:
        try:
            return self._state_index[label]
        except KeyError as exc:
            raise ValidationError(f"unknown state {label!r}") from exc

    def transition_matrix(self, t: int = 0) -> Any:
        return self._P[min(t, len(self._P) - 1)]

    def transition_row(self, s: int, a: int, t: int = 0) -> np.ndarray:
        mat = self.transition_matrix(t)
        row = mat[[s * self.n_actions + a]] if sp.issparse(mat) else mat[s * self.n_actions + a]
        return row.toarray().ravel() if sp.issparse(row) else np.asarray(row)

    def successors(self, s: int, a: int, t: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Indices and probabilities of the non-zero entries of ``P(.|s,a)``."""
        mat = self.transition_matrix(t)
        r = s * self.n_actions + a
        if sp.issparse(mat):
            lo, hi = mat.indptr[r], mat.indptr[r + 1]
            return mat.indices[lo:hi], mat.data[lo:hi]
        row = mat[r]
        idx = np.flatnonzero(row)
        return idx, row[idx]

    def expected_cost(self, t: int = 0) -> np.ndarray:
        """``sum_{s'} P(s'|s,a) c(s,a,s')`` as an ``(S, A)`` array."""
        k = min(t, len(self._expected) - 1)
        if self._expected[k] is None:
            kind, cost = self._c[min(k, len(self._c) - 1)]
            if kind == "sa":
                val = cost
            else:
                mat = self._P[min(k, len(self._P) - 1)]
                if sp.issparse(mat) or sp.issparse(cost):
                    prod = sp.csr_array(mat).multiply(cost)
                    val = np.asarray(prod.sum(axis=1)).ravel()
                else:
                    val = np.where(mat > 0, mat * cost, 0.0).sum(axis=1)
                val = val.reshape(self.n_states, self.n_actions)
            self._expected[k] = np.asarray(val, dtype=float)
        return self._expected[k]

    def stage_cost(self, s: int, a: int, s_next: int, t: int = 0) -> float:
        kind, cost = self._c[min(t, len(self._c) - 1)]
        if kind == "sa":
            return float(cost[s, a])
        r = s * self.n_actions + a
        return float(cost[r, s_next])

    def cost_table(self, t: int = 0) -> tuple[str, Any]:
        return self._c[min(t, len(self._c) - 1)]

    def admissible_actions(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.admissible_mask[s])

    def backup(self, values: np.ndarray, t: int = 0, discount: float = 1.0) -> np.ndarray:
        """Action values ``Q(s,a) = E[c + discount * V(s')]`` for the given ``V``."""
        cont = self.transition_matrix(t) @ np.asarray(values, dtype=float)
        return self.expected_cost(t) + discount * np.asarray(cont).reshape(self.n_states, self.n_actions)

    def max_abs_cost(self) -> float:
        out = 0.0
        for kind, cost in self._c:
            data = cost.data if sp.issparse(cost) else cost
            finite = np.abs(data[np.isfinite(data)]) if data.size else np.zeros(0)
            if finite.size:
                out = max(out, float(finite.max()))
        return out

    def n_stages(self) -> int:
        return max(len(self._P), len(self._c))

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        def dense_p(mat: Any) -> list:
            arr = mat.toarray() if sp.issparse(mat) else mat
            return arr.reshape(self.n_states, self.n_actions, self.n_states).tolist()

        def dense_c(entry: tuple[str, Any]) -> list:
            kind, cost = entry
            if kind == "sa":
                return cost.tolist()
            arr = cost.toarray() if sp.issparse(cost) else cost
            return arr.reshape(self.n_states, self.n_actions, self.n_states).tolist()

        P = [dense_p(m) for m in self._P]
        c = [dense_c(e) for e in self._c]
        return {
            "states": [_label_to_json(s) for s in self.states],
            "actions": [_label_to_json(a) for a in self.actions],
            "horizon": self.horizon,
            "constraints": self.admissible_mask.astype(int).tolist(),
            "transitions": P[0] if len(P) == 1 else P,
            "costs": c[0] if len(c) == 1 else c,
            "terminal": self.terminal.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "FiniteMdp":
        try:
            P = np.asarray(doc["transitions"], dtype=float)
            c = np.asarray(doc["costs"], dtype=float)
        except KeyError as exc:
            raise ValidationError(f"MDP document lacks field {exc}") from exc
        return cls(
            P,
            c,
            terminal=doc.get("terminal"),
            horizon=doc.get("horizon"),
            admissible=doc.get("constraints"),
            states=[_label_from_json(s) for s in doc["states"]] if "states" in doc else None,
            actions=[_label_from_json(a) for a in doc["actions"]] if "actions" in doc else None,
        )

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "FiniteMdp":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _label_to_json(label: Any) -> Any:
    if isinstance(label, tuple):
        return [_label_to_json(x) for x in label]
    if isinstance(label, np.integer):
        return int(label)
    return label


def _label_from_json(label: Any) -> Any:
    if isinstance(label, list):
        return tuple(_label_from_json(x) for x in label)
    return label


# -- validation -----------------------------------------------------------------


@dataclass
class MdpDiagnostics:
    row_violations: list[tuple[int, int, int, float]] = field(default_factory=list)
    negative_entries: list[tuple[int, int, int]] = field(default_factory=list)
    empty_constraints: list[int] = field(default_factory=list)
    unreachable: list[int] = field(default_factory=list)
    infinite_costs: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """True when no hard violation was found (warnings are tolerated)."""
        return not (self.row_violations or self.negative_entries or self.empty_constraints)

    def summary(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "row_violations": len(self.row_violations),
            "negative_entries": len(self.negative_entries),
            "empty_constraints": self.empty_constraints,
            "unreachable": self.unreachable,
            "infinite_cost_warnings": len(self.infinite_costs),
        }


def validate(mdp: FiniteMdp, initial: Sequence[int] | None = None) -> MdpDiagnostics:
    """Check stochasticity of admissible rows, constraint sets and reachability.

    Reachability is measured from ``initial`` (default: state 0) under all
    admissible actions of every stage.
    """
    diag = MdpDiagnostics()
    n_s, n_a = mdp.n_states, mdp.n_actions
    mask = mdp.admissible_mask.reshape(-1)
    for t in range(len(mdp._P)):
        mat = mdp._P[t]
        sums = np.asarray(mat.sum(axis=1)).ravel()
        mins = np.asarray(mat.min(axis=1).toarray()).ravel() if sp.issparse(mat) else mat.min(axis=1)
        for r in np.flatnonzero(mask):
            if abs(sums[r] - 1.0) > ROW_TOL:
                diag.row_violations.append((t, r // n_a, r % n_a, float(sums[r])))
            if mins[r] < 0:
                diag.negative_entries.append((t, r // n_a, r % n_a))
    diag.empty_constraints = [int(s) for s in np.flatnonzero(~mdp.admissible_mask.any(axis=1))]
    for t, (kind, cost) in enumerate(mdp._c):
        data = cost.toarray() if sp.issparse(cost) else cost
        if kind == "sa":
            for s, a in zip(*np.nonzero(np.isinf(data))):
                diag.infinite_costs.append((t, int(s), int(a)))
        else:
            for r, _ in zip(*np.nonzero(np.isinf(data))):
                diag.infinite_costs.append((t, int(r // n_a), int(r % n_a)))

    start = list(initial) if initial is not None else [0]
    seen = np.zeros(n_s, dtype=bool)
    seen[start] = True
    frontier = list(start)
    mats = [sp.csr_array(m) for m in mdp._P]
    while frontier:
        nxt = []
        for s in frontier:
            for a in mdp.admissible_actions(s):
                for mat in mats:
                    r = s * n_a + a
                    for s2 in mat.indices[mat.indptr[r]:mat.indptr[r + 1]]:
                        if not seen[s2]:
                            seen[s2] = True
                            nxt.append(int(s2))
        frontier = nxt
    diag.unreachable = [int(s) for s in np.flatnonzero(~seen)]
    return diag


# -- policies ---------------------------------------------------------------------


def _sample_index(probs: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


@dataclass(frozen=True)
class Policy:
    """Decision rule container.

    ``table`` layout by (kind, scope):
      deterministic/stationary: (S,) ints;  deterministic/markovian: (H, S) ints;
      stochastic/stationary: (S, A) probs;  stochastic/markovian: (H, S, A) probs;
      history: a callable ``(t, s, history) -> action or probability vector``.
    """

    table: Any
    kind: str = "deterministic"
    scope: str = "stationary"

    @classmethod
    def stationary(cls, actions: Sequence[int]) -> "Policy":
        return cls(np.asarray(actions, dtype=int), "deterministic", "stationary")

    @classmethod
    def markovian(cls, table: Any) -> "Policy":
        return cls(np.asarray(table, dtype=int), "deterministic", "markovian")

    @classmethod
    def stochastic(cls, probs: Any) -> "Policy":
        arr = np.asarray(probs, dtype=float)
        scope = "stationary" if arr.ndim == 2 else "markovian"
        return cls(arr, "stochastic", scope)

    @classmethod
    def history_dependent(cls, fn: Callable[[int, int, list], Any], kind: str = "deterministic") -> "Policy":
        return cls(fn, kind, "history")

    def _entry(self, t: int, s: int, history: list | None) -> Any:
        if self.scope == "history":
            return self.table(t, s, history if history is not None else [])
        if self.scope == "markovian":
            return self.table[t, s]
        return self.table[s]

    def distribution(self, t: int, s: int, n_actions: int, history: list | None = None) -> np.ndarray:
        entry = self._entry(t, s, history)
        if self.kind == "deterministic":
            out = np.zeros(n_actions)
            out[int(entry)] = 1.0
            return out
        return np.asarray(entry, dtype=float)

    def sample(self, t: int, s: int, rng: np.random.Generator, history: list | None = None) -> int:
        entry = self._entry(t, s, history)
        if self.kind == "deterministic":
            return int(entry)
        return _sample_index(np.asarray(entry, dtype=float), rng.random())

    def check_admissible(self, mdp: FiniteMdp) -> None:
        """Raise if a tabulated decision rule leaves K(s)."""
        if self.scope == "history":
            return
        mask = mdp.admissible_mask
        if self.kind == "deterministic":
            tab = np.atleast_2d(self.table)
            bad = ~mask[np.arange(mdp.n_states)[None, :], tab]
        else:
            tab = self.table if self.table.ndim == 3 else self.table[None]
            bad = ((tab > 0) & ~mask[None]).any(axis=2)
        if bad.any():
            t, s = np.argwhere(bad)[0]
            raise InadmissibleActionError(f"policy leaves K(s) at stage {t}, state {s}")


# -- trajectories -----------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    steps: list[tuple[int, int, int, float]]
    terminal_state: int
    terminal_cost: float

    @property
    def total_cost(self) -> float:
        return math.fsum(c for *_, c in self.steps) + self.terminal_cost

    def discounted_cost(self, gamma: float) -> float:
        total = math.fsum(gamma**t * c for t, _, _, c in self.steps)
        return total + gamma ** len(self.steps) * self.terminal_cost

    def write_csv(self, path: str | Path, mdp: FiniteMdp | None = None) -> None:
        def lab(seq: list | None, i: int) -> Any:
            return i if seq is None else seq[i]

        states = mdp.states if mdp is not None else None
        actions = mdp.actions if mdp is not None else None
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "state", "action", "cost"])
            for t, s, a, c in self.steps:
                w.writerow([t, lab(states, s), lab(actions, a), repr(float(c))])
            w.writerow([len(self.steps), lab(states, self.terminal_state), "", repr(float(self.terminal_cost))])


def _sample_next(mdp: FiniteMdp, s: int, a: int, t: int, rng: np.random.Generator) -> int:
    idx, probs = mdp.successors(s, a, t)
    return int(idx[_sample_index(probs, rng.random())])


def simulate_policy(
    mdp: FiniteMdp,
    policy: Policy,
    s0: int,
    rng: np.random.Generator,
    horizon: int | None = None,
) -> TrajectoryRecord:
    """Roll out ``policy`` for H steps, recording stage costs and the terminal cost."""
    H = mdp.horizon if mdp.horizon is not None else horizon
    if H is None:
        raise ValidationError("an explicit horizon is required for infinite-horizon MDPs")
    s = int(s0)
    steps: list[tuple[int, int, int, float]] = []
    history: list = []
    for t in range(H):
        a = policy.sample(t, s, rng, history)
        if not mdp.admissible_mask[s, a]:
            raise InadmissibleActionError(f"action {a} not admissible in state {s} at stage {t}")
        s2 = _sample_next(mdp, s, a, t, rng)
        c = mdp.stage_cost(s, a, s2, t)
        steps.append((t, s, a, c))
        history.append((s, a))
        s = s2
    terminal = float(mdp.terminal[s]) if mdp.horizon is not None else 0.0
    return TrajectoryRecord(steps, s, terminal)


def _batch_costs(
    mdp: FiniteMdp,
    policy: Policy,
    s0: int,
    n_sims: int,
    steps: int,
    rng: np.random.Generator,
    discount: float,
    terminal: bool,
) -> np.ndarray:
    """Per-episode accumulated costs, vectorized across episodes when possible."""
    if policy.scope == "history" or mdp.is_sparse:
        out = np.empty(n_sims)
        for i in range(n_sims):
            rec = simulate_policy(mdp, policy, s0, rng, horizon=steps)
            cost = math.fsum(discount**t * c for t, _, _, c in rec.steps)
            if terminal:
                cost += discount**steps * float(mdp.terminal[rec.terminal_state])
            out[i] = cost
        return out
    policy.check_admissible(mdp)
    n_a = mdp.n_actions
    s = np.full(n_sims, int(s0))
    totals = np.zeros(n_sims)
    for t in range(steps):
        if policy.kind == "deterministic":
            a = (policy.table[t] if policy.scope == "markovian" else policy.table)[s]
        else:
            probs = (policy.table[t] if policy.scope == "markovian" else policy.table)[s]
            u = rng.random(n_sims)
            a = np.minimum((np.cumsum(probs, axis=1) <= u[:, None]).sum(axis=1), n_a - 1)
        rows = mdp.transition_matrix(t)[s * n_a + a]
        u = rng.random(n_sims)
        s2 = np.minimum((np.cumsum(rows, axis=1) <= u[:, None]).sum(axis=1), mdp.n_states - 1)
        kind, cost = mdp.cost_table(t)
        step_cost = cost[s, a] if kind == "sa" else cost[s * n_a + a, s2]
        totals += discount**t * step_cost
        s = s2
    if terminal:
        totals += discount**steps * mdp.terminal[s]
    return totals


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    n = samples.size
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def evaluate_total_cost_mc(
    mdp: FiniteMdp, policy: Policy, s0: int, n_sims: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Monte-Carlo total cost over the finite horizon, terminal cost included."""
    if mdp.horizon is None:
        raise ValidationError("total-cost criterion needs a finite horizon")
    if n_sims < 1:
        raise ValidationError("n_sims must be at least 1")
    return _mean_se(_batch_costs(mdp, policy, s0, n_sims, mdp.horizon, rng, 1.0, True))


def discount_truncation(gamma: float, max_abs_cost: float, tol: float = 1e-6) -> int:
    """Smallest T with ``gamma**T * max_abs_cost <= tol``."""
    if max_abs_cost <= tol or gamma == 0.0:
        return 1
    return max(1, math.ceil(math.log(tol / max_abs_cost) / math.log(gamma)))


def evaluate_discounted_mc(
    mdp: FiniteMdp,
    policy: Policy,
    s0: int,
    gamma: float,
    n_sims: int,
    rng: np.random.Generator,
    truncation: int | None = None,
) -> tuple[float, float]:
    """Monte-Carlo discounted cost; infinite horizons are truncated at the tail bound."""
    if not 0.0 <= gamma < 1.0:
        raise ValidationError("discount must lie in [0, 1)")
    if n_sims < 1:
        raise ValidationError("n_sims must be at least 1")
    if mdp.horizon is not None:
        steps, terminal = mdp.horizon, True
    else:
        steps = truncation or discount_truncation(gamma, mdp.max_abs_cost())
        terminal = False
    return _mean_se(_batch_costs(mdp, policy, s0, n_sims, steps, rng, gamma, terminal))


def evaluate_average_mc(
    mdp: FiniteMdp,
    policy: Policy,
    s0: int,
    h_trunc: int,
    n_sims: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Truncated average cost ``(1/T) sum_{t<T} c_t``; no claim about the limit."""
    if h_trunc < 1 or n_sims < 1:
        raise ValidationError("h_trunc and n_sims must be at least 1")
    totals = _batch_costs(mdp, policy, s0, n_sims, h_trunc, rng, 1.0, False)
    return _mean_se(totals / h_trunc)


def _policy_matrices(mdp: FiniteMdp, policy: Policy) -> tuple[Any, np.ndarray]:
    if policy.scope != "stationary":
        raise ValidationError("exact evaluation needs a stationary policy")
    policy.check_admissible(mdp)
    n_s, n_a = mdp.n_states, mdp.n_actions
    if policy.kind == "deterministic":
        probs = np.zeros((n_s, n_a))
        probs[np.arange(n_s), policy.table] = 1.0
    else:
        probs = policy.table
    weights = sp.csr_array(
        (probs.reshape(-1), (np.repeat(np.arange(n_s), n_a), np.arange(n_s * n_a))),
        shape=(n_s, n_s * n_a),
    )
    P = mdp.transition_matrix()
    P_pi = weights @ P
    r_pi = (probs * mdp.expected_cost()).sum(axis=1)
    return P_pi, r_pi


def evaluate_policy_exact(mdp: FiniteMdp, policy: Policy, gamma: float) -> np.ndarray:
    """Solve ``(I - gamma P_pi) V = c_pi`` for a stationary policy."""
    if not 0.0 < gamma < 1.0:
        raise ValidationError("discount must lie in (0, 1)")
    P_pi, r_pi = _policy_matrices(mdp, policy)
    if sp.issparse(P_pi):
        import scipy.sparse.linalg as spla

        A = sp.identity(mdp.n_states, format="csc") - gamma * sp.csc_array(P_pi)
        V = spla.spsolve(A, r_pi)
        apply = lambda v: v - gamma * (P_pi @ v)  # noqa: E731
    else:
        A = np.eye(mdp.n_states) - gamma * P_pi
        V = np.linalg.solve(A, r_pi)
        apply = lambda v: A @ v  # noqa: E731
    for _ in range(3):
        resid = r_pi - apply(V)
        if np.max(np.abs(resid), initial=0.0) <= 1e-10:
            break
        V = V + (spla.spsolve(A, resid) if sp.issparse(P_pi) else np.linalg.solve(A, resid))
    return np.asarray(V, dtype=float)


def q_from_v(mdp: FiniteMdp, values: np.ndarray, gamma: float = 1.0, t: int = 0) -> np.ndarray:
    """Action values from a value vector (pass ``V_{t+1}`` with ``t`` for finite horizons)."""
    return mdp.backup(values, t, gamma)
