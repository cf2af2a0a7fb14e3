"""Controlled PDMPs with chosen regimes, embedded as generative (PO)MDPs.

A decision ``(regime, delay)`` switches the regime, lets the process run
for ``delay`` time units, and advances a clock; the artificial action
:data:`D_CHECK` sends the process to an absorbing cemetery so that every
decision sequence has exactly ``H`` slots.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    CapExceededError,
    ExplosionError,
    ImpossibleEvidenceError,
    InadmissibleActionError,
    ValidationError,
)
from .mdp import FiniteMdp, _sample_index
from .pdmp import HybridState, ModeDynamics, PdmpModel, simulate_ssa
from .rl import GenerativeModel, SearchResult, mcts_search

KEY_GRID = 1e-9
DEFAULT_CAP = 10**6


class ModeAugmentedPdmp:
    """PDMP whose mode is a pair ``(regime, natural mode)``.

    Patient states are :class:`HybridState` objects labelled by the natural
    mode only; the regime is attached for simulation and stripped after.
    ``project`` may canonicalize coordinates that never influence the
    future dynamics (for instance an elapsed time in modes without
    time-dependent intensity).
    """

    def __init__(
        self,
        regimes: Sequence[Hashable],
        natural_modes: Sequence[Hashable],
        dynamics: dict[tuple[Hashable, Hashable], ModeDynamics],
        *,
        time_augmented: bool = False,
        intensity_bound: float | None = None,
        project: Callable[[HybridState], HybridState] | None = None,
        max_jumps: int = 10**6,
    ) -> None:
        self.regimes = tuple(regimes)
        self.natural_modes = tuple(natural_modes)
        missing = [(l, m) for l in self.regimes for m in self.natural_modes if (l, m) not in dynamics]
        if missing:
            raise ValidationError(f"missing dynamics for {missing}")
        self.model = PdmpModel(
            dict(dynamics), time_augmented=time_augmented, intensity_bound=intensity_bound, max_jumps=max_jumps
        )
        self.project = project or (lambda x: x)

    def lift(self, x: HybridState, regime: Hashable) -> HybridState:
        return HybridState((regime, x.mode), x.euclid, x.elapsed)

    @staticmethod
    def strip(x: HybridState) -> HybridState:
        return HybridState(x.mode[1], x.euclid, x.elapsed)

    def check(self, x: HybridState) -> None:
        self.model.check_state(self.lift(x, self.regimes[0]))


def lifted_target(regime: Hashable, mode: Hashable, euclid: Sequence[float] | float | None = None):
    """Kernel target in a regime-augmented model that keeps the regime."""

    def target(x: HybridState) -> HybridState:
        coords = x.euclid if euclid is None else euclid
        return HybridState.make((regime, mode), coords, x.elapsed)

    return target


def _check_regime(regime: Hashable, post: HybridState) -> None:
    if post.mode[0] != regime:
        raise ValidationError(f"kernel changed the regime from {regime!r} to {post.mode[0]!r}")


def propagate(pdmp: ModeAugmentedPdmp, x: HybridState, regime: Hashable, r: float, rng: np.random.Generator) -> HybridState:
    """Sample ``x'`` from ``P^regime_r(.|x)`` by thinning."""
    traj = simulate_ssa(pdmp.model, pdmp.lift(x, regime), r, rng)
    for j in traj.jumps:
        _check_regime(regime, j.post)
    return pdmp.project(pdmp.strip(traj.final_state(pdmp.model)))


def enumerate_kernel(pdmp: ModeAugmentedPdmp, x: HybridState, regime: Hashable, r: float) -> dict[HybridState, float]:
    """Exact ``P^regime_r(.|x)`` when every jump along the way is a boundary jump.

    Requires zero intensity in every visited mode and finite kernels.
    """
    model = pdmp.model
    out: dict[HybridState, float] = {}
    stack = [(1.0, pdmp.lift(x, regime), float(r), 0)]
    while stack:
        p, y, remaining, depth = stack.pop()
        if depth > model.max_jumps:
            raise ExplosionError("too many boundary jumps in one interval")
        dyn = model.dynamics(y)
        if dyn.rate != 0.0:
            raise ValidationError(f"mode {y.mode!r} has random jumps; use Monte-Carlo estimation")
        tstar = model._tstar(y)
        if tstar > remaining:
            end = pdmp.project(pdmp.strip(model._flow(y, remaining)))
            out[end] = out.get(end, 0.0) + p
            continue
        pre = model._flow(y, tstar)
        for q, post in reversed(dyn.kernel.outcomes(pre)):
            post = model._finish_jump(pre, post)
            _check_regime(regime, post)
            stack.append((p * q, post, remaining - tstar, depth + 1))
    return out


@dataclass
class KernelEstimate:
    """Normalized counts of arrival cells."""

    counts: dict[Hashable, int]
    n_sims: int

    @property
    def probabilities(self) -> dict[Hashable, float]:
        return {k: c / self.n_sims for k, c in self.counts.items()}


def estimate_kernel(
    pdmp: ModeAugmentedPdmp,
    x: HybridState,
    regime: Hashable,
    r: float,
    n_sims: int,
    rng: np.random.Generator,
    partition: Callable[[HybridState], Hashable] | None = None,
) -> KernelEstimate:
    """Monte-Carlo frequencies of ``P^regime_r(.|x)`` over the cells of ``partition``."""
    if n_sims < 1:
        raise ValidationError("n_sims must be at least 1")
    cell = partition or state_key
    counts: dict[Hashable, int] = {}
    for _ in range(n_sims):
        k = cell(propagate(pdmp, x, regime, r, rng))
        counts[k] = counts.get(k, 0) + 1
    return KernelEstimate(dict(sorted(counts.items(), key=lambda kv: repr(kv[0]))), n_sims)


# -- decision-process wrapper ----------------------------------------------------------


@dataclass(frozen=True)
class BridgeAction:
    """``(regime, delay)``, or the artificial action when both are ``None``."""

    regime: Hashable = None
    delay: float | None = None

    @property
    def artificial(self) -> bool:
        return self.delay is None

    def __repr__(self) -> str:
        return "d_check" if self.artificial else f"({self.regime!r}, {self.delay!r})"


D_CHECK = BridgeAction()


@dataclass(frozen=True)
class BridgeState:
    x: HybridState
    clock: float


@dataclass(frozen=True)
class Cemetery:
    """Absorbing padding state; ``dead`` records whether death preceded it."""

    dead: bool = False


@dataclass
class BridgeCosts:
    """Cost hooks on ``(s, a, s')`` transitions between live states plus a terminal cost."""

    step: Callable[[BridgeState, BridgeAction, BridgeState], float]
    death: float = 0.0


def state_key(x: Any) -> Hashable:
    """Hashable key with coordinates quantized on a 1e-9 grid."""
    if isinstance(x, Cemetery):
        return ("cemetery", x.dead)
    if isinstance(x, BridgeState):
        return (state_key(x.x), round(x.clock / KEY_GRID))
    if isinstance(x, HybridState):
        el = None if x.elapsed is None else round(x.elapsed / KEY_GRID)
        return (x.mode, tuple(round(v / KEY_GRID) for v in x.euclid), el)
    return x


class BridgeProblem:
    """Finite-horizon decision process over decision dates ``0, delta, ..., H delta``."""

    def __init__(
        self,
        pdmp: ModeAugmentedPdmp,
        *,
        delta: float,
        horizon: int,
        delays: Sequence[float],
        costs: BridgeCosts,
        death_modes: Iterable[Hashable] = (),
        real_horizon: float | None = None,
    ) -> None:
        self.pdmp = pdmp
        self.delta = float(delta)
        self.horizon = int(horizon)
        self.delays = tuple(sorted(float(r) for r in delays))
        self.costs = costs
        self.death_modes = frozenset(death_modes)
        if self.horizon < 1 or self.delta <= 0:
            raise ValidationError("need a positive decision step and at least one decision")
        if self.delta not in self.delays:
            raise ValidationError("the decision step must be an admissible delay")
        for r in self.delays:
            k = r / self.delta
            if abs(k - round(k)) > 1e-12 or r > self.end_time:
                raise ValidationError(f"delay {r} is not a multiple of the step within the horizon")
        if real_horizon is not None and abs(real_horizon - self.end_time) > 1e-9:
            raise ValidationError("real-time horizon must equal H times the decision step")
        self.live_actions = [BridgeAction(l, r) for l in pdmp.regimes for r in self.delays]
        self.actions = self.live_actions + [D_CHECK]

    @property
    def end_time(self) -> float:
        return self.horizon * self.delta

    def initial(self, x0: HybridState) -> BridgeState:
        self.pdmp.check(x0)
        return BridgeState(x0, 0.0)

    def is_dead(self, s: Any) -> bool:
        if isinstance(s, Cemetery):
            return s.dead
        return s.x.mode in self.death_modes

    def admissible(self, s: Any) -> list[BridgeAction]:
        if isinstance(s, Cemetery) or s.x.mode in self.death_modes:
            return [D_CHECK]
        room = self.end_time - s.clock
        acts = [a for a in self.live_actions if a.delay <= room + 1e-9]
        return acts or [D_CHECK]

    def check_action(self, s: Any, a: BridgeAction) -> None:
        if a not in self.admissible(s):
            raise InadmissibleActionError(f"{a!r} not admissible in {s!r}")

    def terminal_cost(self, s: Any) -> float:
        return self.costs.death if self.is_dead(s) else 0.0

    def _after(self, s: Any, a: BridgeAction, x2: HybridState) -> tuple[BridgeState, float]:
        s2 = BridgeState(x2, s.clock + a.delay)
        return s2, float(self.costs.step(s, a, s2))

    def step(self, s: Any, a: BridgeAction, rng: np.random.Generator) -> tuple[Any, float]:
        self.check_action(s, a)
        if a.artificial:
            return (s if isinstance(s, Cemetery) else Cemetery(self.is_dead(s))), 0.0
        return self._after(s, a, propagate(self.pdmp, s.x, a.regime, a.delay, rng))

    def outcomes(
        self,
        s: Any,
        a: BridgeAction,
        method: str = "enumerate",
        n_sims: int = 1000,
        rng: np.random.Generator | None = None,
    ) -> list[tuple[float, Any, float]]:
        """Successor distribution as ``(probability, s', cost)`` triples."""
        self.check_action(s, a)
        if a.artificial:
            return [(1.0, s if isinstance(s, Cemetery) else Cemetery(self.is_dead(s)), 0.0)]
        if method == "enumerate":
            dist = enumerate_kernel(self.pdmp, s.x, a.regime, a.delay)
            items = list(dist.items())
        elif method == "mc":
            if rng is None:
                raise ValidationError("Monte-Carlo tabulation needs a generator")
            counts: dict[HybridState, int] = {}
            for _ in range(n_sims):
                x2 = propagate(self.pdmp, s.x, a.regime, a.delay, rng)
                counts[x2] = counts.get(x2, 0) + 1
            items = [(x2, c / n_sims) for x2, c in counts.items()]
        else:
            raise ValidationError("method must be 'enumerate' or 'mc'")
        out = []
        for x2, p in items:
            s2, c = self._after(s, a, x2)
            out.append((p, s2, c))
        return out


def bridge_step(problem: BridgeProblem, s: Any, a: BridgeAction, rng: np.random.Generator) -> tuple[Any, float]:
    return problem.step(s, a, rng)


def wrap_as_mdp(problem: BridgeProblem) -> GenerativeModel:
    """Generative MDP over bridge states with ``H`` decision slots."""
    return GenerativeModel(
        step=problem.step,
        admissible=problem.admissible,
        horizon=problem.horizon,
        terminal_cost=problem.terminal_cost,
        state_key=state_key,
    )


@dataclass
class Tabulation:
    mdp: FiniteMdp
    states: list[Any]
    root: int


def tabulate(
    problem: BridgeProblem,
    s0: Any,
    method: str = "enumerate",
    n_sims: int = 1000,
    rng: np.random.Generator | None = None,
    cap: int = DEFAULT_CAP,
) -> Tabulation:
    """Explicit finite MDP over the bridge states reachable from ``s0``."""
    acts = problem.actions
    n_a = len(acts)
    a_index = {a: i for i, a in enumerate(acts)}
    index = {s0: 0}
    states = [s0]
    rows, cols, probs, costs = [], [], [], []
    mask_rows = []
    i = 0
    while i < len(states):
        s = states[i]
        m = np.zeros(n_a, dtype=bool)
        for a in problem.admissible(s):
            k = a_index[a]
            m[k] = True
            for p, s2, c in problem.outcomes(s, a, method, n_sims, rng):
                j = index.get(s2)
                if j is None:
                    j = len(states)
                    if j >= cap:
                        raise CapExceededError(f"more than {cap} reachable bridge states")
                    index[s2] = j
                    states.append(s2)
                rows.append(i * n_a + k), cols.append(j), probs.append(p), costs.append(c)
        mask_rows.append(m)
        i += 1
    n = len(states)
    P = sp.csr_array((probs, (rows, cols)), shape=(n * n_a, n))
    C = sp.csr_array((costs, (rows, cols)), shape=(n * n_a, n))
    terminal = np.array([problem.terminal_cost(s) for s in states])
    mdp = FiniteMdp(
        P, C, terminal=terminal, horizon=problem.horizon, admissible=np.array(mask_rows), states=states, actions=acts
    )
    return Tabulation(mdp, states, 0)


# -- partial observation ---------------------------------------------------------------


@dataclass(frozen=True)
class Noise:
    """Additive observation noise ``y = F(x) + eps``.

    ``kind`` is ``none`` (exact, any value type), ``gaussian`` (``scale`` =
    standard deviation), ``uniform`` (continuous on ``[-scale, scale]``) or
    ``uniform_int`` (integers ``-scale..scale``).
    """

    kind: str = "none"
    scale: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "gaussian", "uniform", "uniform_int"):
            raise ValidationError(f"unknown noise family {self.kind!r}")
        if self.kind != "none" and not self.scale > 0:
            raise ValidationError("noise scale must be positive")

    def sample(self, value: Any, rng: np.random.Generator) -> Any:
        if self.kind == "none":
            return value
        if self.kind == "gaussian":
            return float(value) + self.scale * rng.standard_normal()
        if self.kind == "uniform":
            return float(value) + rng.uniform(-self.scale, self.scale)
        w = int(self.scale)
        return float(value) + float(rng.integers(-w, w + 1))

    def density(self, y: Any, value: Any) -> float:
        if self.kind == "none":
            return 1.0 if y == value else 0.0
        e = float(y) - float(value)
        if self.kind == "gaussian":
            return math.exp(-0.5 * (e / self.scale) ** 2) / (self.scale * math.sqrt(2 * math.pi))
        if self.kind == "uniform":
            return 1.0 / (2 * self.scale) if abs(e) <= self.scale else 0.0
        w = int(self.scale)
        return 1.0 / (2 * w + 1) if abs(e) <= w and e == round(e) else 0.0


CEMETERY_OBS = ("cemetery",)


class BridgePomdp:
    """Observations ``(y, clock, z)`` at decision dates: ``y = F(x') + eps`` and a
    perfectly observed indicator ``z`` of the declared modes.
    """

    def __init__(
        self,
        problem: BridgeProblem,
        link: Callable[[HybridState], Any],
        noise: Noise,
        observed_modes: Iterable[Hashable] = (),
    ) -> None:
        self.problem = problem
        self.link = link
        self.noise = noise
        self.observed_modes = frozenset(observed_modes)

    def _flag(self, x: HybridState) -> int:
        return int(x.mode in self.observed_modes)

    def observe(self, s: Any, rng: np.random.Generator) -> tuple:
        if isinstance(s, Cemetery):
            return CEMETERY_OBS
        return (self.noise.sample(self.link(s.x), rng), s.clock, self._flag(s.x))

    def likelihood(self, omega: tuple, s: Any) -> float:
        if isinstance(s, Cemetery):
            return 1.0 if omega == CEMETERY_OBS else 0.0
        if omega == CEMETERY_OBS:
            return 0.0
        y, clock, z = omega
        if abs(clock - s.clock) > 1e-9 or z != self._flag(s.x):
            return 0.0
        return self.noise.density(y, self.link(s.x))

    def observation_key(self, omega: tuple) -> Hashable:
        if omega == CEMETERY_OBS:
            return omega
        y, clock, z = omega
        yk = round(y / KEY_GRID) if isinstance(y, float) else y
        return (yk, round(clock / KEY_GRID), z)

    def generative(self) -> GenerativeModel:
        """Simulator over ``(hidden state, last observation)`` pairs keyed by the observation."""
        prob = self.problem

        def step(pair, a, rng):
            s, _ = pair
            s2, c = prob.step(s, a, rng)
            return (s2, self.observe(s2, rng)), c

        return GenerativeModel(
            step=step,
            admissible=lambda pair: prob.admissible(pair[0]),
            horizon=prob.horizon,
            terminal_cost=lambda pair: prob.terminal_cost(pair[0]),
            state_key=lambda pair: self.observation_key(pair[1]),
        )


def wrap_as_pomdp(
    problem: BridgeProblem,
    link: Callable[[HybridState], Any],
    noise: Noise,
    observed_modes: Iterable[Hashable] = (),
) -> BridgePomdp:
    return BridgePomdp(problem, link, noise, observed_modes)


# -- filtering -----------------------------------------------------------------------


@dataclass
class FilterState:
    """Weighted support over bridge states.

    ``kind="particle"`` holds samples (repeats allowed); ``kind="grid"``
    holds distinct states with exact weights.
    """

    kind: str
    states: list[Any]
    weights: np.ndarray
    resampled: bool = False

    @classmethod
    def dirac(cls, s: Any, kind: str = "grid", n_particles: int = 1) -> "FilterState":
        n = 1 if kind == "grid" else n_particles
        return cls(kind, [s] * n, np.full(n, 1.0 / n))

    def distribution(self) -> dict[Hashable, float]:
        out: dict[Hashable, float] = {}
        for s, w in zip(self.states, self.weights):
            k = state_key(s)
            out[k] = out.get(k, 0.0) + float(w)
        return out

    def sample(self, rng: np.random.Generator) -> Any:
        return self.states[_sample_index(self.weights, rng.random())]

    @property
    def ess(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(weights), positions, side="right")
    return np.minimum(idx, n - 1)


def filter_update(
    pomdp: BridgePomdp,
    theta: FilterState,
    a: BridgeAction,
    omega: tuple,
    rng: np.random.Generator | None = None,
    method: str = "enumerate",
    n_sims: int = 1000,
) -> FilterState:
    """Prediction through ``P^l_r`` followed by Bayes correction with the observation density."""
    prob = pomdp.problem
    if theta.kind == "particle":
        if rng is None:
            raise ValidationError("particle filtering needs a generator")
        # zero-weight particles may sit where the action is inadmissible; they stay put
        live = theta.weights > 0
        moved = [prob.step(s, a, rng)[0] if ok else s for s, ok in zip(theta.states, live)]
        lik = np.array([pomdp.likelihood(omega, s) if ok else 0.0 for s, ok in zip(moved, live)])
        w = theta.weights * lik
        z = w.sum()
        if not z > 0:
            raise ImpossibleEvidenceError("no particle is compatible with the observation")
        w = w / z
        out = FilterState("particle", moved, w)
        if out.ess < 0.5 * len(moved):
            idx = systematic_resample(w, rng)
            out = FilterState("particle", [moved[i] for i in idx], np.full(len(moved), 1.0 / len(moved)), True)
        return out
    if theta.kind != "grid":
        raise ValidationError("filter kind must be 'grid' or 'particle'")
    pred: dict[Any, float] = {}
    for s, w in zip(theta.states, theta.weights):
        for p, s2, _ in prob.outcomes(s, a, method, n_sims, rng):
            pred[s2] = pred.get(s2, 0.0) + w * p
    states, weights = [], []
    for s2, p in pred.items():
        v = p * pomdp.likelihood(omega, s2)
        if v > 0:
            states.append(s2)
            weights.append(v)
    total = math.fsum(weights)
    if not total > 0:
        raise ImpossibleEvidenceError("observation has zero probability under the filter")
    return FilterState("grid", states, np.array(weights) / total)


def plan_pomdp_search(
    pomdp: BridgePomdp,
    theta: FilterState,
    omega: tuple,
    budget: int,
    rng: np.random.Generator,
    c_uct: float = math.sqrt(2.0),
    max_depth: int | None = None,
    backup: str = "bellman",
) -> SearchResult:
    """Tree search whose iterations start from hidden states drawn from the filter."""
    gen = pomdp.generative()
    root = (theta.states[int(np.argmax(theta.weights))], omega)
    remaining = pomdp.problem.horizon if max_depth is None else max_depth
    return mcts_search(
        gen,
        root,
        budget,
        rng,
        c_uct=c_uct,
        max_depth=remaining,
        backup=backup,
        root_sampler=lambda g: (theta.sample(g), omega),
    )


def plan_pomdp_mcts(
    pomdp: BridgePomdp,
    theta: FilterState,
    omega: tuple,
    budget: int,
    rng: np.random.Generator,
    c_uct: float = math.sqrt(2.0),
    max_depth: int | None = None,
) -> BridgeAction:
    return plan_pomdp_search(pomdp, theta, omega, budget, rng, c_uct, max_depth).action


# -- episodes --------------------------------------------------------------------------


@dataclass
class EpisodeRow:
    n: int
    clock: float | None
    mode: Hashable
    zeta: float | None
    u: float | None
    regime: Hashable
    delay: float | None
    y: Any
    cost: float


@dataclass
class BridgeEpisode:
    rows: list[EpisodeRow] = field(default_factory=list)
    terminal_cost: float = 0.0
    final_state: Any = None

    @property
    def total_cost(self) -> float:
        return math.fsum(r.cost for r in self.rows) + self.terminal_cost

    def write_csv(self, path: str | Path) -> None:
        def fmt(v: Any) -> Any:
            if v is None:
                return ""
            return repr(float(v)) if isinstance(v, float) else v

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "t", "mode", "zeta", "u", "regime", "delay", "y", "cost"])
            for r in self.rows:
                w.writerow([r.n, fmt(r.clock), r.mode, fmt(r.zeta), fmt(r.u), fmt(r.regime), fmt(r.delay), fmt(r.y), fmt(r.cost)])
            w.writerow([len(self.rows), "", "", "", "", "", "", "", fmt(self.terminal_cost)])


def _describe(s: Any) -> tuple:
    if isinstance(s, Cemetery):
        return None, "cemetery", None, None
    return s.clock, s.x.mode, s.x.euclid[0], s.x.elapsed


def run_episode(
    problem: BridgeProblem,
    policy: Callable[[int, Any, Any], BridgeAction],
    s0: Any,
    rng: np.random.Generator,
    pomdp: BridgePomdp | None = None,
) -> BridgeEpisode:
    """Roll out exactly ``H`` decisions.

    Without ``pomdp`` the policy sees the state; with it, the policy sees
    the latest observation and the rows record the observed ``y``.
    """
    ep = BridgeEpisode()
    s = s0
    info: Any = s0 if pomdp is None else pomdp.observe(s0, rng)
    for n in range(problem.horizon):
        a = policy(n, info, s if pomdp is None else None)
        s2, c = problem.step(s, a, rng)
        clock, mode, zeta, u = _describe(s)
        y = None
        if pomdp is not None:
            info = pomdp.observe(s2, rng)
            y = info[0] if info != CEMETERY_OBS else None
        else:
            info = s2
        ep.rows.append(EpisodeRow(n, clock, mode, zeta, u, a.regime, a.delay, y, c))
        s = s2
    ep.terminal_cost = problem.terminal_cost(s)
    ep.final_state = s
    return ep
