"""Piecewise-deterministic Markov processes.

A model is a mapping from modes to :class:`ModeDynamics` (flow, jump
intensity, jump kernel and boundary hitting time). Trajectories are built
either by inverse-hazard sampling of sojourn times or by thinning a
dominating Poisson clock; impulse-controlled paths add interventions on
top of the natural dynamics.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Hashable, Iterable, Sequence

import numpy as np
from scipy import integrate

from .errors import (
    BoundaryOverrunError,
    ExplosionError,
    InvalidBoundError,
    NoJumpReachableError,
    ValidationError,
)

INF = math.inf
BISECT_TOL = 1e-10
MAX_ZERO_SOJOURNS = 1000


@dataclass(frozen=True)
class HybridState:
    mode: Hashable
    euclid: tuple[float, ...]
    elapsed: float | None = None

    @classmethod
    def make(cls, mode: Hashable, euclid: Iterable[float] | float, elapsed: float | None = None) -> "HybridState":
        if np.isscalar(euclid):
            coords = (float(euclid),)
        else:
            coords = tuple(float(v) for v in euclid)
        return cls(mode, coords, None if elapsed is None else float(elapsed))

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.euclid, dtype=float)

    def distance(self, other: "HybridState") -> float:
        """Sup-distance between two states of the same mode (inf otherwise)."""
        if self.mode != other.mode or (self.elapsed is None) != (other.elapsed is None):
            return INF
        d = max((abs(a - b) for a, b in zip(self.euclid, other.euclid)), default=0.0)
        if self.elapsed is not None:
            d = max(d, abs(self.elapsed - other.elapsed))
        return d


# -- kernels ------------------------------------------------------------------


class Kernel:
    """Jump kernel: maps a pre-jump state to a random post-jump state."""

    def sample(self, x: HybridState, rng: np.random.Generator) -> HybridState:
        raise NotImplementedError

    def outcomes(self, x: HybridState) -> list[tuple[float, HybridState]]:
        """Finite support of the kernel, when it has one."""
        raise NotImplementedError


class DeterministicKernel(Kernel):
    def __init__(self, target: Callable[[HybridState], HybridState]) -> None:
        self.target = target

    def sample(self, x: HybridState, rng: np.random.Generator) -> HybridState:
        return self.target(x)

    def outcomes(self, x: HybridState) -> list[tuple[float, HybridState]]:
        return [(1.0, self.target(x))]


class CategoricalKernel(Kernel):
    """Finite mixture of deterministic targets with (possibly state-dependent) weights."""

    def __init__(self, branches: Sequence[tuple[float | Callable[[HybridState], float], Callable[[HybridState], HybridState]]]) -> None:
        if not branches:
            raise ValidationError("a categorical kernel needs at least one branch")
        self.branches = list(branches)

    def _weights(self, x: HybridState) -> np.ndarray:
        w = np.array([b(x) if callable(b) else float(b) for b, _ in self.branches], dtype=float)
        total = w.sum()
        if not np.all(w >= 0) or total <= 0:
            raise ValidationError(f"kernel weights invalid at {x}")
        return w / total

    def sample(self, x: HybridState, rng: np.random.Generator) -> HybridState:
        w = self._weights(x)
        u = rng.random()
        k = min(int(np.searchsorted(np.cumsum(w), u, side="right")), len(w) - 1)
        return self.branches[k][1](x)

    def outcomes(self, x: HybridState) -> list[tuple[float, HybridState]]:
        w = self._weights(x)
        return [(float(p), tgt(x)) for p, (_, tgt) in zip(w, self.branches) if p > 0]


def to_state(mode: Hashable, euclid: Sequence[float] | float | None = None) -> Callable[[HybridState], HybridState]:
    """Kernel target that moves to ``mode`` at ``euclid`` (or keeps the pre-jump coordinates)."""

    def target(x: HybridState) -> HybridState:
        coords = x.euclid if euclid is None else euclid
        return HybridState.make(mode, coords, x.elapsed)

    return target


# -- flows ----------------------------------------------------------------------


class OdeFlow:
    """Flow given by an ODE right-hand side, integrated with fixed-step RK4.

    ``boundary_fn`` is optional; its sign change along the path marks the
    boundary of the mode's region. Searches stop at ``max_time``.
    """

    def __init__(self, rhs: Callable[[np.ndarray], np.ndarray], boundary_fn: Callable[[np.ndarray], float] | None = None, max_time: float = 100.0, scan_step: float = 0.01) -> None:
        self.rhs = rhs
        self.boundary_fn = boundary_fn
        self.max_time = max_time
        self.scan_step = scan_step

    def _rk4(self, x: np.ndarray, h: float) -> np.ndarray:
        f = self.rhs
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if t <= 0:
            return x.copy()
        n = max(100, math.ceil(t / 0.01))
        h = t / n
        for _ in range(n):
            x = self._rk4(x, h)
        return x

    def boundary_time(self, state: HybridState) -> float:
        if self.boundary_fn is None:
            return INF
        x = state.x
        g0 = self.boundary_fn(x)
        if g0 == 0:
            return 0.0
        t, h = 0.0, self.scan_step
        while t < self.max_time:
            y = self._rk4(x, h)
            g = self.boundary_fn(y)
            if g == 0 or (g > 0) != (g0 > 0):
                lo, hi = 0.0, h
                while hi - lo > 1e-9:
                    mid = 0.5 * (lo + hi)
                    gm = self.boundary_fn(self(x, mid))
                    if gm == 0 or (gm > 0) != (g0 > 0):
                        hi = mid
                    else:
                        lo = mid
                return t + hi
            x, t = y, t + h
        return INF


@dataclass
class ModeDynamics:
    """Local characteristics of one mode.

    ``flow(euclid, t)`` moves the Euclidean coordinates. ``intensity`` and
    ``boundary_time`` receive full hybrid states. ``hazard(x, t)`` and
    ``inverse_hazard(x, e)`` are optional closed forms; ``rate`` declares a
    constant intensity and enables the corresponding closed forms.
    """

    flow: Callable[[np.ndarray, float], np.ndarray]
    kernel: Kernel | None = None
    intensity: Callable[[HybridState], float] | None = None
    boundary_time: Callable[[HybridState], float] | None = None
    region: Callable[[HybridState], bool] | None = None
    hazard: Callable[[HybridState, float], float] | None = None
    inverse_hazard: Callable[[HybridState, float], float] | None = None
    rate: float | None = None

    def __post_init__(self) -> None:
        if self.rate is not None:
            if self.rate < 0:
                raise ValidationError("intensity must be non-negative")
            rate = float(self.rate)
            self.intensity = lambda x: rate
        if self.intensity is None:
            self.rate = 0.0
            self.intensity = lambda x: 0.0


class PdmpModel:
    """PDMP defined by per-mode local characteristics."""

    def __init__(
        self,
        modes: dict[Hashable, ModeDynamics],
        *,
        time_augmented: bool = False,
        intensity_bound: float | None = None,
        max_jumps: int = 10**6,
        max_time: float = 1e9,
    ) -> None:
        if not modes:
            raise ValidationError("a PDMP needs at least one mode")
        self.modes = dict(modes)
        self.time_augmented = time_augmented
        if intensity_bound is not None and intensity_bound <= 0:
            raise ValidationError("intensity bound must be positive")
        self.intensity_bound = intensity_bound
        self.max_jumps = max_jumps
        self.max_time = max_time

    def dynamics(self, x: HybridState) -> ModeDynamics:
        try:
            return self.modes[x.mode]
        except KeyError as exc:
            raise ValidationError(f"unknown mode {x.mode!r}") from exc

    def check_state(self, x: HybridState) -> None:
        dyn = self.dynamics(x)
        if self.time_augmented != (x.elapsed is not None):
            raise ValidationError("elapsed coordinate must be present iff the model is time-augmented")
        if x.elapsed is not None and x.elapsed < 0:
            raise ValidationError("elapsed time must be non-negative")
        if dyn.region is not None and not dyn.region(x):
            raise ValidationError(f"state {x} lies outside its mode's region")

    # raw (unchecked) primitives used by the simulators
    def _flow(self, x: HybridState, t: float) -> HybridState:
        if t == 0:
            return x
        dyn = self.dynamics(x)
        coords = tuple(float(v) for v in np.atleast_1d(dyn.flow(x.x, t)))
        elapsed = None if x.elapsed is None else x.elapsed + t
        return HybridState(x.mode, coords, elapsed)

    def _tstar(self, x: HybridState) -> float:
        dyn = self.dynamics(x)
        return INF if dyn.boundary_time is None else max(0.0, float(dyn.boundary_time(x)))

    def _intensity(self, x: HybridState) -> float:
        return float(self.dynamics(x).intensity(x))

    def _jump(self, pre: HybridState, rng: np.random.Generator) -> HybridState:
        dyn = self.dynamics(pre)
        if dyn.kernel is None:
            raise ValidationError(f"mode {pre.mode!r} has no jump kernel")
        post = dyn.kernel.sample(pre, rng)
        return self._finish_jump(pre, post)

    def _finish_jump(self, pre: HybridState, post: HybridState) -> HybridState:
        if self.time_augmented:
            post = replace(post, elapsed=0.0)
        if post == pre:
            raise ValidationError(f"kernel returned its input state {pre}")
        return post

    def _hazard(self, x: HybridState, t: float) -> float:
        dyn = self.dynamics(x)
        if t <= 0:
            return 0.0
        if dyn.hazard is not None:
            return float(dyn.hazard(x, t))
        if dyn.rate is not None:
            return dyn.rate * t
        val, _ = integrate.quad(lambda s: self._intensity(self._flow(x, s)), 0.0, t, limit=200, epsabs=1e-13, epsrel=1e-12)
        return float(val)

    def _inverse_hazard(self, x: HybridState, e: float, cap: float) -> float:
        """Smallest ``t <= cap`` with ``Lambda(x, t) = e``; ``inf`` when never reached."""
        dyn = self.dynamics(x)
        if dyn.inverse_hazard is not None:
            return float(dyn.inverse_hazard(x, e))
        if dyn.rate is not None:
            return INF if dyn.rate == 0 else e / dyn.rate
        if math.isfinite(cap):
            hi = cap
            if self._hazard(x, hi) < e:
                return INF
        else:
            hi = 1.0
            while self._hazard(x, hi) < e:
                hi *= 2.0
                if hi > self.max_time:
                    return INF
        lo = 0.0
        while hi - lo > BISECT_TOL * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if self._hazard(x, mid) < e:
                lo = mid
            else:
                hi = mid
        return hi

    def sojourn(self, x: HybridState, rng: np.random.Generator) -> tuple[float, str | None]:
        """Sample the next natural jump time and its kind (boundary, random or none)."""
        tstar = self._tstar(x)
        e = rng.exponential()
        tau = self._inverse_hazard(x, e, tstar)
        if tau >= tstar:
            return (tstar, "boundary") if math.isfinite(tstar) else (INF, None)
        return tau, "random"


# -- public primitives -------------------------------------------------------------


def _overrun(t: float, tstar: float) -> bool:
    return t > tstar + 1e-12 * max(1.0, tstar)


def flow_at(model: PdmpModel, x: HybridState, t: float) -> HybridState:
    """``Phi(x, t)``; the elapsed coordinate advances by ``t`` in time-augmented models."""
    if t < 0:
        raise ValidationError("flow time must be non-negative")
    tstar = model._tstar(x)
    if _overrun(t, tstar):
        raise BoundaryOverrunError(f"t={t} exceeds boundary time {tstar}")
    return model._flow(x, t)


def boundary_time(model: PdmpModel, x: HybridState) -> float:
    return model._tstar(x)


def cumulative_hazard(model: PdmpModel, x: HybridState, t: float) -> float:
    """``Lambda(x, t)``: integrated intensity along the flow."""
    if t < 0:
        raise ValidationError("time must be non-negative")
    tstar = model._tstar(x)
    if _overrun(t, tstar):
        raise BoundaryOverrunError(f"t={t} exceeds boundary time {tstar}")
    return model._hazard(x, t)


# -- trajectories -----------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    start_time: float
    start: HybridState
    duration: float


@dataclass(frozen=True)
class Jump:
    time: float
    pre: HybridState
    post: HybridState
    flag: str  # "boundary", "random" or "impulse"


@dataclass
class Trajectory:
    """Piecewise path: ``segments[k]`` starts at ``x0`` (k=0) or ``jumps[k-1].post``."""

    x0: HybridState
    segments: list[Segment] = field(default_factory=list)
    jumps: list[Jump] = field(default_factory=list)
    end_time: float = 0.0

    @property
    def jump_times(self) -> list[float]:
        return [j.time for j in self.jumps]

    def final_state(self, model: PdmpModel) -> HybridState:
        seg = self.segments[-1]
        if not math.isfinite(seg.duration):
            raise ValidationError("trajectory ends with an unbounded segment")
        return model._flow(seg.start, seg.duration)

    def state_at(self, model: PdmpModel, t: float) -> HybridState:
        if t < 0 or t > self.end_time + 1e-12:
            raise ValidationError(f"time {t} outside the simulated range [0, {self.end_time}]")
        starts = [s.start_time for s in self.segments]
        k = bisect.bisect_right(starts, t) - 1
        seg = self.segments[k]
        return model._flow(seg.start, min(t - seg.start_time, seg.duration))


def _close(segments: list[Segment], start_time: float, start: HybridState, end: float) -> None:
    segments.append(Segment(start_time, start, end - start_time))


def _guard(n_jumps: int, zero_run: int, model: PdmpModel) -> None:
    if n_jumps > model.max_jumps:
        raise ExplosionError(f"more than {model.max_jumps} jumps in one trajectory")
    if zero_run > MAX_ZERO_SOJOURNS:
        raise ExplosionError("jumps accumulate at a single time point")


def simulate_iterative(model: PdmpModel, x0: HybridState, n_jumps: int, rng: np.random.Generator) -> Trajectory:
    """Trajectory with exactly ``n_jumps`` jumps via inverse-hazard sojourn sampling."""
    if n_jumps < 0:
        raise ValidationError("n_jumps must be non-negative")
    if n_jumps > model.max_jumps:
        raise ExplosionError(f"{n_jumps} jumps requested, guard is {model.max_jumps}")
    model.check_state(x0)
    traj = Trajectory(x0)
    t, x, zero_run = 0.0, x0, 0
    for _ in range(n_jumps):
        s, kind = model.sojourn(x, rng)
        if kind is None:
            raise NoJumpReachableError(f"no jump can occur from {x}")
        zero_run = zero_run + 1 if s == 0 else 0
        _guard(len(traj.jumps), zero_run, model)
        pre = model._flow(x, s)
        post = model._jump(pre, rng)
        _close(traj.segments, t, x, t + s)
        t += s
        traj.jumps.append(Jump(t, pre, post, kind))
        x = post
    traj.segments.append(Segment(t, x, 0.0))
    traj.end_time = t
    return traj


def simulate_ssa(model: PdmpModel, x0: HybridState, horizon: float, rng: np.random.Generator) -> Trajectory:
    """Thinning simulation on ``[0, horizon]`` with dominating rate ``model.intensity_bound``."""
    if horizon < 0:
        raise ValidationError("horizon must be non-negative")
    model.check_state(x0)
    lam_bar = model.intensity_bound
    if horizon > 0 and lam_bar is None:
        raise ValidationError("thinning needs an intensity bound")
    traj = Trajectory(x0)
    t, x = 0.0, x0
    seg_t, seg_x = 0.0, x0
    zero_run = 0
    while t < horizon:
        s = rng.exponential(1.0 / lam_bar)
        tstar = model._tstar(x)
        if s >= tstar:
            if t + tstar > horizon:
                break
            pre = model._flow(x, tstar)
            post = model._jump(pre, rng)
            kind = "boundary"
            step = tstar
        else:
            if t + s > horizon:
                break
            y = model._flow(x, s)
            lam = model._intensity(y)
            if lam > lam_bar * (1 + 1e-12):
                raise InvalidBoundError(f"intensity {lam} exceeds bound {lam_bar} at {y}")
            if rng.random() <= lam / lam_bar:
                pre, post, kind, step = y, model._jump(y, rng), "random", s
            else:
                x, t = y, t + s
                continue
        zero_run = zero_run + 1 if step == 0 else 0
        _guard(len(traj.jumps) + 1, zero_run, model)
        t += step
        _close(traj.segments, seg_t, seg_x, t)
        traj.jumps.append(Jump(t, pre, post, kind))
        x = seg_x = post
        seg_t = t
    _close(traj.segments, seg_t, seg_x, horizon)
    traj.end_time = horizon
    return traj


def canonical_chain(traj: Trajectory) -> list[tuple[HybridState, float]]:
    """Post-jump locations with inter-jump times, starting with ``(x0, 0)``."""
    chain = [(traj.x0, 0.0)]
    prev = 0.0
    for j in traj.jumps:
        chain.append((j.post, j.time - prev))
        prev = j.time
    return chain


def reconstruct_trajectory(
    model: PdmpModel,
    chain: Sequence[tuple[HybridState, float]],
    t: float,
    end_time: float | None = None,
) -> HybridState:
    """State at time ``t`` from a canonical chain: ``Phi(Z_n, t - T_n)``."""
    if t < 0:
        raise ValidationError("time must be non-negative")
    if end_time is not None and t > end_time + 1e-12:
        raise ValidationError(f"time {t} beyond simulated range {end_time}")
    times = np.cumsum([s for _, s in chain]).tolist()
    n = bisect.bisect_right(times, t) - 1
    z = chain[n][0]
    dt = t - times[n]
    if n == len(chain) - 1 and end_time is None and _overrun(dt, model._tstar(z)):
        raise ValidationError(f"time {t} beyond the last segment's validity")
    return model._flow(z, dt)


def skeleton_sample(model: PdmpModel, x0: HybridState, grid: Sequence[float], rng: np.random.Generator) -> list[HybridState]:
    """States on a time grid from one thinning trajectory up to ``max(grid)``."""
    grid = [float(g) for g in grid]
    if not grid or grid[0] < 0 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("grid must be non-empty, non-negative and strictly increasing")
    traj = simulate_ssa(model, x0, grid[-1], rng)
    chain = canonical_chain(traj)
    return [reconstruct_trajectory(model, chain, g, traj.end_time) for g in grid]


def sample_generalized_exponential(inverse_hazard: Callable[[float], float], rng: np.random.Generator) -> float:
    """Time with survival ``exp(-Lambda(t))`` through ``Lambda^{-1}(E)``, ``E ~ Exp(1)``."""
    return float(inverse_hazard(rng.exponential()))


def sample_competing(inverse_hazards: Sequence[Callable[[float], float]], rng: np.random.Generator) -> tuple[float, int]:
    """First of independent generalized-exponential clocks and the index of the winner."""
    times = [sample_generalized_exponential(f, rng) for f in inverse_hazards]
    k = int(np.argmin(times))
    return times[k], k


# -- impulse control ---------------------------------------------------------------


class ImpulseStrategy:
    """Non-anticipative intervention rule.

    ``next_intervention`` is queried after every event with the current
    state and time, and returns the planned intervention time (``inf`` for
    none) with its restart state. The plan may be revised after each
    natural jump.
    """

    control_set: list[HybridState] | None = None

    def next_intervention(self, x: HybridState, time: float, traj: Trajectory) -> tuple[float, HybridState | None]:
        raise NotImplementedError


class NoImpulse(ImpulseStrategy):
    def next_intervention(self, x: HybridState, time: float, traj: Trajectory) -> tuple[float, HybridState | None]:
        return INF, None


class ScheduledImpulses(ImpulseStrategy):
    """Deterministic intervention dates; ``restarts`` of ``None`` keep the pre-intervention state."""

    def __init__(self, times: Sequence[float], restarts: Sequence[HybridState | None], control_set: list[HybridState] | None = None) -> None:
        if len(times) != len(restarts):
            raise ValidationError("one restart state per intervention time")
        self.times = [float(t) for t in times]
        self.restarts = list(restarts)
        self.control_set = control_set

    def next_intervention(self, x: HybridState, time: float, traj: Trajectory) -> tuple[float, HybridState | None]:
        done = sum(1 for j in traj.jumps if j.flag == "impulse")
        if done >= len(self.times):
            return INF, None
        return self.times[done], self.restarts[done]


class ThresholdStrategy(ImpulseStrategy):
    """Intervene as soon as coordinate ``coord`` reaches ``threshold`` in a watched mode."""

    def __init__(self, model: PdmpModel, threshold: float, restart: HybridState, modes: Iterable[Hashable] | None = None, coord: int = 0, hitting_time: Callable[[HybridState], float] | None = None) -> None:
        self.model = model
        self.threshold = float(threshold)
        self.restart = restart
        self.modes = None if modes is None else set(modes)
        self.coord = coord
        self.hitting_time = hitting_time
        self.control_set = [restart]

    def _hit(self, x: HybridState) -> float:
        if x.euclid[self.coord] >= self.threshold:
            return 0.0
        if self.hitting_time is not None:
            return self.hitting_time(x)
        limit = self.model._tstar(x)
        if not math.isfinite(limit):
            limit = self.model.max_time
        grid = np.linspace(0.0, limit, 201)
        prev = 0.0
        for g in grid[1:]:
            if self.model._flow(x, g).euclid[self.coord] >= self.threshold:
                lo, hi = prev, g
                while hi - lo > BISECT_TOL:
                    mid = 0.5 * (lo + hi)
                    if self.model._flow(x, mid).euclid[self.coord] >= self.threshold:
                        hi = mid
                    else:
                        lo = mid
                return hi
            prev = g
        return INF

    def next_intervention(self, x: HybridState, time: float, traj: Trajectory) -> tuple[float, HybridState | None]:
        if self.modes is not None and x.mode not in self.modes:
            return INF, None
        h = self._hit(x)
        return (time + h, self.restart) if math.isfinite(h) else (INF, None)


def simulate_controlled(
    model: PdmpModel,
    strategy: ImpulseStrategy,
    x0: HybridState,
    n_impulses: int,
    rng: np.random.Generator,
    horizon: float = INF,
) -> Trajectory:
    """Natural dynamics interleaved with interventions; stops after ``n_impulses`` or at ``horizon``.

    A natural jump strictly before the planned date wins; otherwise the
    process flows to the date and restarts at the chosen state. Only
    interventions strictly before ``horizon`` are executed.
    """
    model.check_state(x0)
    traj = Trajectory(x0)
    t, x = 0.0, x0
    last_tau = -INF
    impulses = zero_run = 0
    while impulses < n_impulses and t < horizon:
        tau, chi = strategy.next_intervention(x, t, traj)
        if tau < t - 1e-12:
            raise ValidationError(f"intervention time {tau} lies in the past (t={t})")
        s, kind = model.sojourn(x, rng)
        if t + s < tau:
            if t + s > horizon:
                break
            pre = model._flow(x, s)
            post = model._jump(pre, rng)
            step = s
        else:
            if not math.isfinite(tau) or tau >= horizon:
                break
            if tau <= last_tau:
                raise ValidationError("intervention times must be strictly increasing")
            pre = model._flow(x, tau - t)
            post = pre if chi is None else chi
            if strategy.control_set is not None and post not in strategy.control_set:
                raise ValidationError(f"restart state {post} not in the control set")
            kind, step, last_tau = "impulse", tau - t, tau
            impulses += 1
        zero_run = zero_run + 1 if step == 0 else 0
        _guard(len(traj.jumps) + 1, zero_run, model)
        _close(traj.segments, t, x, t + step)
        t += step
        traj.jumps.append(Jump(t, pre, post, kind))
        x = post
    end = horizon if math.isfinite(horizon) else t
    if not math.isfinite(horizon) and impulses < n_impulses:
        end = INF
    traj.segments.append(Segment(t, x, end - t))
    traj.end_time = end
    return traj


@dataclass
class CostSpec:
    running: Callable[[HybridState], float] = lambda x: 0.0
    impulse: Callable[[HybridState, HybridState], float] = lambda pre, post: 0.0
    terminal: Callable[[HybridState], float] = lambda x: 0.0
    discount: float = 0.0
    horizon: float = INF

    def __post_init__(self) -> None:
        if not 0.0 <= self.discount < 1.0:
            raise ValidationError("discount must lie in [0, 1)")
        if not math.isfinite(self.horizon) and self.discount <= 0.0:
            raise ValidationError("an infinite horizon needs a positive discount")
        if self.horizon <= 0:
            raise ValidationError("horizon must be positive")


def _segment_cost(model: PdmpModel, seg: Segment, costs: CostSpec, until: float) -> float:
    d = min(seg.duration, until - seg.start_time)
    if d <= 0:
        return 0.0
    g = costs.discount

    def f(s: float) -> float:
        return math.exp(-g * (seg.start_time + s)) * costs.running(model._flow(seg.start, s))

    val, _ = integrate.quad(f, 0.0, d, limit=200, epsabs=1e-12, epsrel=1e-10)
    return float(val)


def path_cost(model: PdmpModel, traj: Trajectory, costs: CostSpec, until: float) -> float:
    """Discounted running, intervention and (finite horizon) terminal cost of one path."""
    total = math.fsum(_segment_cost(model, seg, costs, until) for seg in traj.segments)
    g = costs.discount
    total += math.fsum(
        math.exp(-g * j.time) * costs.impulse(j.pre, j.post)
        for j in traj.jumps
        if j.flag == "impulse" and j.time < until
    )
    if math.isfinite(costs.horizon):
        total += math.exp(-g * costs.horizon) * costs.terminal(traj.state_at(model, costs.horizon))
    return total


def evaluate_strategy_cost(
    model: PdmpModel,
    strategy: ImpulseStrategy,
    costs: CostSpec,
    x0: HybridState,
    n_sims: int,
    rng: np.random.Generator,
    tail_tol: float = 1e-10,
) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of the strategy cost.

    Infinite horizons are truncated where ``exp(-gamma T) <= tail_tol``.
    """
    if n_sims < 1:
        raise ValidationError("n_sims must be at least 1")
    if math.isfinite(costs.horizon):
        until = costs.horizon
    else:
        until = -math.log(tail_tol) / costs.discount
    samples = np.empty(n_sims)
    for i in range(n_sims):
        traj = simulate_controlled(model, strategy, x0, model.max_jumps, rng, horizon=until)
        samples[i] = path_cost(model, traj, costs, until)
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(n_sims)) if n_sims > 1 else 0.0
    return mean, se


def evaluate_no_impulse_cost(
    model: PdmpModel, costs: CostSpec, x0: HybridState, n_sims: int, rng: np.random.Generator, tail_tol: float = 1e-10
) -> tuple[float, float]:
    return evaluate_strategy_cost(model, NoImpulse(), costs, x0, n_sims, rng, tail_tol)


# -- text formats ----------------------------------------------------------------


def write_trajectory_csv(traj: Trajectory, path: str | Path, model: PdmpModel | None = None) -> None:
    """Rows for the start, every jump (post-jump state) and, if positive length, the final point."""
    dim = len(traj.x0.euclid)
    header = ["t", "mode"] + [f"euclid_{i}" for i in range(dim)] + ["elapsed", "event_flag"]

    def row(t: float, x: HybridState, flag: str) -> list:
        el = "" if x.elapsed is None else repr(x.elapsed)
        return [repr(float(t)), x.mode] + [repr(v) for v in x.euclid] + [el, flag]

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerow(row(0.0, traj.x0, "start"))
        for j in traj.jumps:
            w.writerow(row(j.time, j.post, j.flag))
        last = traj.segments[-1]
        if model is not None and last.duration > 0 and math.isfinite(last.duration):
            w.writerow(row(traj.end_time, traj.final_state(model), "end"))


def _flow_family(spec: dict) -> tuple[Callable, str, np.ndarray]:
    kind = spec.get("type", "constant")
    if kind == "constant":
        return (lambda x, t: np.asarray(x, dtype=float)), kind, np.zeros(1)
    if kind == "exponential":
        rate = np.atleast_1d(np.asarray(spec["rate"], dtype=float))
        return (lambda x, t: np.asarray(x, dtype=float) * np.exp(rate * t)), kind, rate
    if kind == "linear":
        vel = np.atleast_1d(np.asarray(spec["velocity"], dtype=float))
        return (lambda x, t: np.asarray(x, dtype=float) + vel * t), kind, vel
    raise ValidationError(f"unknown flow family {kind!r}")


def _boundary_family(spec: dict | None, flow_kind: str, param: np.ndarray) -> Callable[[HybridState], float] | None:
    if not spec or spec.get("type", "none") == "none":
        return None
    kind = spec["type"]
    level = float(spec["level"])
    i = int(spec.get("coord", 0))
    p = float(param[i] if param.size > i else param[0])

    def hitting(x: HybridState) -> float:
        z = x.euclid[i]
        if (kind == "upper" and z >= level) or (kind == "lower" and z <= level):
            return 0.0
        if flow_kind == "exponential" and z > 0 and level > 0:
            t = math.log(level / z) / p if p != 0 else INF
        elif flow_kind == "linear":
            t = (level - z) / p if p != 0 else INF
        else:
            t = INF
        return t if t > 0 else INF

    if kind not in ("upper", "lower"):
        raise ValidationError(f"unknown boundary family {kind!r}")
    return hitting


def _intensity_kwargs(spec: dict | None) -> dict:
    if not spec or spec.get("type", "zero") == "zero":
        return {"rate": 0.0}
    kind = spec["type"]
    if kind == "constant":
        return {"rate": float(spec["rate"])}
    if kind == "weibull":
        return weibull_intensity(float(spec["beta"]), float(spec["alpha"]))
    raise ValidationError(f"unknown intensity family {kind!r}")


def weibull_intensity(beta: float, alpha: float) -> dict:
    """Intensity ``beta * u**alpha`` in the elapsed time ``u`` with closed-form hazard and inverse."""
    if beta < 0 or alpha < 0:
        raise ValidationError("Weibull parameters must be non-negative")
    k = alpha + 1.0

    def intensity(x: HybridState) -> float:
        return beta * x.elapsed**alpha

    def hazard(x: HybridState, t: float) -> float:
        u = x.elapsed
        return beta * ((u + t) ** k - u**k) / k

    def inverse(x: HybridState, e: float) -> float:
        if beta == 0:
            return INF
        u = x.elapsed
        return (u**k + e * k / beta) ** (1.0 / k) - u

    return {"intensity": intensity, "hazard": hazard, "inverse_hazard": inverse}


def _kernel_family(spec: dict | None, time_augmented: bool) -> Kernel | None:
    if not spec:
        return None
    branches = []
    for br in spec.get("branches", []):
        euclid = br.get("euclid")
        mode = _mode_key(br["mode"])
        branches.append((float(br.get("weight", 1.0)), to_state(mode, euclid)))
    return CategoricalKernel(branches)


def _mode_key(label: Any) -> Hashable:
    if isinstance(label, str):
        try:
            return int(label)
        except ValueError:
            return label
    return label


def model_from_config(doc: dict[str, Any]) -> PdmpModel:
    """Build a model from a JSON-style document naming built-in families."""
    aug = bool(doc.get("time_augmented", False))
    modes = {}
    for entry in doc["modes"]:
        flow, kind, param = _flow_family(entry.get("flow", {}))
        modes[_mode_key(entry["mode"])] = ModeDynamics(
            flow=flow,
            kernel=_kernel_family(entry.get("kernel"), aug),
            boundary_time=_boundary_family(entry.get("boundary"), kind, param),
            **_intensity_kwargs(entry.get("intensity")),
        )
    return PdmpModel(modes, time_augmented=aug, intensity_bound=doc.get("intensity_bound"), max_jumps=int(doc.get("max_jumps", 10**6)))


def load_model(path: str | Path) -> PdmpModel:
    return model_from_config(json.loads(Path(path).read_text()))
