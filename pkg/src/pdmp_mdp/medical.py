"""The cancer follow-up running example in all of its variants.

Continuous-marker PDMPs (basic, semi-Markov, surgery), the finite
82-state MDP and its partially observed and Bayes-adaptive versions, and
the treatment/visit-date controlled PDMP with its (PO)MDP wrappers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Sequence

import numpy as np

from .bamdp import BayesAdaptiveModel, ObsCounts
from .bridge import (
    BridgeAction,
    BridgeCosts,
    BridgePomdp,
    BridgeProblem,
    BridgeState,
    ModeAugmentedPdmp,
    Noise,
    lifted_target,
    wrap_as_pomdp,
)
from .errors import ValidationError
from .mdp import FiniteMdp
from .pomdp import FinitePomdp
from .pdmp import (
    CategoricalKernel,
    CostSpec,
    DeterministicKernel,
    HybridState,
    ModeDynamics,
    PdmpModel,
    ThresholdStrategy,
    to_state,
    weibull_intensity,
)

VARIANTS = (
    "pdmp_basic",
    "pdmp_semi_markov",
    "pdmp_surgery",
    "mdp_finite",
    "pomdp_discrete",
    "pomdp_continuous",
    "bamdp",
    "bridge_full",
    "bridge_pomdp",
)

# Values fixed by the example itself; configuration overrides must agree.
LOCKED = {
    "marker_max": 40,
    "horizon": 160,
    "treatment_cost": 2.0,
    "slow_relapse_cost": 2.0,
    "aggressive_relapse_cost": 3.0,
    "death_cost": 200.0,
    "noise_halfwidth": 2,
    "visit_delays": (15, 30, 60),
    "delta": 15,
}


@dataclass(frozen=True)
class MedicalConfig:
    # continuous-marker models (time unit: day)
    zeta0: float = 1.0
    death_level: float = 10.0
    v_treat: float = -0.05
    v_relapse: float = 0.02
    remission_rate: float = 0.01
    weibull_beta: float = 1e-4
    weibull_alpha: float = 1.0
    time_cap: float = 2400.0
    surgery_threshold: float = 3.0
    surgery_cost: float = 50.0
    # finite MDP
    marker_max: int = 40
    horizon: int = 160
    relapse_probs: tuple[float, float, float] = (0.9, 0.07, 0.03)
    treatment_cost: float = 2.0
    slow_relapse_cost: float = 2.0
    aggressive_relapse_cost: float = 3.0
    death_cost: float = 200.0
    noise_halfwidth: int = 2
    bamdp_prior: tuple[int, int, int] = (5, 1, 0)
    obs_noise_prior: tuple[int, ...] = (1, 1, 1, 1, 1)
    # controlled PDMP with visit dates
    visit_delays: tuple[int, ...] = (15, 30, 60)
    delta: int = 15
    bridge_decisions: int = 160
    growth_slow: float = 0.01
    growth_escape: float = 0.03
    decay_treated: float = 0.05
    growth_escape_treated: float = 0.015
    relapse_beta_slow: float = 4e-5
    relapse_beta_escape: float = 1e-5
    relapse_alpha: float = 1.0
    escape_rate_untreated: float = 0.002
    escape_rate_remission_treated: float = 0.0005
    escape_rate_treated: float = 0.002
    visit_cost: float = 1.0
    regime_costs: tuple[float, float] = (0.0, 5.0)
    bridge_death_cost: float = 1000.0
    marker_cost_form: str = "difference"
    obs_sigma: float = 0.1

    def __post_init__(self) -> None:
        if not self.death_level > self.zeta0 > 0:
            raise ValidationError("need death_level > zeta0 > 0")
        if self.v_treat >= 0 or self.v_relapse <= 0:
            raise ValidationError("need v_treat < 0 < v_relapse")
        for key, val in LOCKED.items():
            if getattr(self, key) != val:
                raise ValidationError(f"{key} is fixed by the example to {val!r}")
        p = np.asarray(self.relapse_probs, dtype=float)
        if p.shape != (3,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError("relapse_probs must be a probability vector of length 3")
        if sum(self.bamdp_prior) <= 0 or min(self.bamdp_prior) < 0:
            raise ValidationError("bamdp_prior needs non-negative counts with positive sum")
        if self.delta not in self.visit_delays:
            raise ValidationError("delta must be an admissible delay")
        if self.marker_cost_form not in ("difference", "area"):
            raise ValidationError("marker_cost_form must be 'difference' or 'area'")
        if self.surgery_threshold <= self.zeta0 or self.surgery_threshold >= self.death_level:
            raise ValidationError("surgery threshold must lie strictly between zeta0 and death_level")

    @classmethod
    def from_dict(cls, doc: dict[str, Any] | None) -> "MedicalConfig":
        doc = dict(doc or {})
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown configuration keys: {sorted(unknown)}")
        for key, val in list(doc.items()):
            if isinstance(val, list):
                doc[key] = tuple(val)
        return cls(**doc)

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def real_horizon(self) -> float:
        return float(self.bridge_decisions * self.delta)


# -- continuous-marker PDMPs ---------------------------------------------------------


def _exp_flow(rate: float):
    return lambda x, t: x * math.exp(rate * t)


def _exp_hitting(rate: float, level: float, coord: int = 0):
    """Time for ``z * exp(rate t)`` to reach ``level`` (0 if already past, inf if never)."""

    def hit(x: HybridState) -> float:
        z = x.euclid[coord]
        if (rate < 0 and z <= level) or (rate > 0 and z >= level):
            return 0.0
        if rate == 0:
            return math.inf
        return math.log(level / z) / rate

    return hit


def _const_flow(x, t):
    return x


def _medical_pdmp(cfg: MedicalConfig, *, semi_markov: bool, surgery: bool) -> PdmpModel:
    z0, D = cfg.zeta0, cfg.death_level
    if semi_markov:
        remission = ModeDynamics(_const_flow, DeterministicKernel(to_state(1, z0)), **weibull_intensity(cfg.weibull_beta, cfg.weibull_alpha))
        bound = max(cfg.weibull_beta * cfg.time_cap**cfg.weibull_alpha, 1e-12)
    else:
        remission = ModeDynamics(_const_flow, DeterministicKernel(to_state(1, z0)), rate=cfg.remission_rate)
        bound = max(cfg.remission_rate, 1e-12)
    upper = D if surgery else math.inf
    modes = {
        -1: ModeDynamics(
            _exp_flow(cfg.v_treat),
            DeterministicKernel(to_state(0, z0)),
            boundary_time=_exp_hitting(cfg.v_treat, z0),
            region=lambda x: z0 <= x.euclid[0] < upper,
        ),
        0: remission,
        1: ModeDynamics(
            _exp_flow(cfg.v_relapse),
            DeterministicKernel(to_state(2, D)) if surgery else None,
            boundary_time=_exp_hitting(cfg.v_relapse, D) if surgery else None,
            region=lambda x: z0 <= x.euclid[0] < upper,
        ),
    }
    modes[0].region = lambda x: x.euclid[0] == z0
    if surgery:
        modes[2] = ModeDynamics(_const_flow, region=lambda x: x.euclid[0] == D)
    return PdmpModel(modes, time_augmented=semi_markov or surgery, intensity_bound=bound)


def pdmp_basic(cfg: MedicalConfig | None = None) -> PdmpModel:
    return _medical_pdmp(cfg or MedicalConfig(), semi_markov=False, surgery=False)


def pdmp_semi_markov(cfg: MedicalConfig | None = None) -> PdmpModel:
    return _medical_pdmp(cfg or MedicalConfig(), semi_markov=True, surgery=False)


def pdmp_surgery(cfg: MedicalConfig | None = None) -> PdmpModel:
    return _medical_pdmp(cfg or MedicalConfig(), semi_markov=True, surgery=True)


def surgery_restart(cfg: MedicalConfig) -> HybridState:
    return HybridState.make(0, cfg.zeta0, 0.0)


def surgery_strategy(model: PdmpModel, cfg: MedicalConfig) -> ThresholdStrategy:
    """Operate as soon as the relapsing marker reaches the threshold."""
    return ThresholdStrategy(
        model,
        cfg.surgery_threshold,
        surgery_restart(cfg),
        modes=[1],
        hitting_time=_exp_hitting(cfg.v_relapse, cfg.surgery_threshold),
    )


def surgery_costs(cfg: MedicalConfig, discount: float = 0.0, horizon: float | None = None) -> CostSpec:
    """Area above the nominal marker level plus a fixed surgery cost."""
    z0 = cfg.zeta0
    return CostSpec(
        running=lambda x: x.euclid[0] - z0,
        impulse=lambda pre, post: cfg.surgery_cost,
        discount=discount,
        horizon=cfg.time_cap if horizon is None else horizon,
    )


# -- finite MDP ------------------------------------------------------------------------


def mdp_states(cfg: MedicalConfig) -> list[tuple[int, int]]:
    D = cfg.marker_max
    return [(0, 0)] + [(m, z) for m in (1, 2) for z in range(D)] + [(3, D)]


def _mdp_successor(state: tuple[int, int], action: int, D: int) -> tuple[int, int] | None:
    """Deterministic successor, or ``None`` for the random relapse row."""
    m, z = state
    if m == 3:
        return state
    if m == 0:
        return None if action == 0 else (0, 0)
    if action == 1:
        return (m, z - 1) if z > 1 else (0, 0)
    step = 1 if m == 1 else 2
    return (m, z + step) if z < D - step else (3, D)


def mdp_finite(cfg: MedicalConfig | None = None) -> FiniteMdp:
    """82-state treatment MDP over 160 visits."""
    cfg = cfg or MedicalConfig()
    D = cfg.marker_max
    states = mdp_states(cfg)
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    P = np.zeros((n, 2, n))
    c = np.zeros((n, 2))
    K = np.ones((n, 2), dtype=bool)
    for i, s in enumerate(states):
        m = s[0]
        for a in (0, 1):
            nxt = _mdp_successor(s, a, D)
            if nxt is None:
                for k, target in enumerate([(0, 0), (1, 0), (2, 0)]):
                    P[i, a, index[target]] += cfg.relapse_probs[k]
            else:
                P[i, a, index[nxt]] = 1.0
            c[i, a] = cfg.treatment_cost * a + cfg.slow_relapse_cost * (m == 1) + cfg.aggressive_relapse_cost * (m == 2)
        if m == 3:
            K[i, 1] = False
    terminal = np.array([cfg.death_cost * (s[0] == 3) for s in states])
    return FiniteMdp(P, c, terminal=terminal, horizon=cfg.horizon, admissible=K, states=states, actions=[0, 1])


def mdp_index(cfg: MedicalConfig) -> dict[tuple[int, int], int]:
    return {s: i for i, s in enumerate(mdp_states(cfg))}


# -- partially observed versions -----------------------------------------------------


def observation_labels(cfg: MedicalConfig) -> list[tuple[int, int]]:
    w, D = cfg.noise_halfwidth, cfg.marker_max
    return [(y, z) for y in range(-w, D + w + 1) for z in (0, 1)]


def pomdp_discrete(cfg: MedicalConfig | None = None) -> FinitePomdp:
    """Marker seen through uniform integer noise; death is seen exactly."""
    cfg = cfg or MedicalConfig()
    base = mdp_finite(cfg)
    labels = observation_labels(cfg)
    where = {lab: i for i, lab in enumerate(labels)}
    w = cfg.noise_halfwidth
    O = np.zeros((base.n_states, len(labels)))
    for i, (m, z) in enumerate(base.states):
        for e in range(-w, w + 1):
            O[i, where[(z + e, int(m == 3))]] = 1.0 / (2 * w + 1)
    b0 = np.zeros(base.n_states)
    b0[0] = 1.0
    return FinitePomdp(base, O, observations=labels, b0=b0)


def pomdp_continuous(cfg: MedicalConfig | None = None) -> FinitePomdp:
    """Marker seen through continuous uniform noise on ``[-w, w]``."""
    cfg = cfg or MedicalConfig()
    base = mdp_finite(cfg)
    w = float(cfg.noise_halfwidth)
    states = base.states

    def density(s2: int, a: int, omega: tuple[float, int]) -> float:
        m, z = states[s2]
        y, flag = omega
        return 1.0 / (2 * w) if flag == int(m == 3) and abs(y - z) <= w else 0.0

    def sampler(s2: int, a: int, rng: np.random.Generator) -> tuple[float, int]:
        m, z = states[s2]
        return (z + rng.uniform(-w, w), int(m == 3))

    b0 = np.zeros(base.n_states)
    b0[0] = 1.0
    return FinitePomdp(base, density=density, sampler=sampler, b0=b0)


# -- Bayes-adaptive versions ---------------------------------------------------------


def bamdp(cfg: MedicalConfig | None = None) -> BayesAdaptiveModel:
    """Unknown relapse row ``((0,0), a=0)`` with Dirichlet counts over its three outcomes."""
    cfg = cfg or MedicalConfig()
    base = mdp_finite(cfg)
    idx = mdp_index(cfg)
    support = [idx[(0, 0)], idx[(1, 0)], idx[(2, 0)]]
    return BayesAdaptiveModel.create(base, [(idx[(0, 0)], 0)], [cfg.bamdp_prior], [support])


def noise_index(cfg: MedicalConfig, zeta_next: int, y: int) -> int:
    """Position of ``eps = y - zeta'`` in the count vector ordered ``-w..w``."""
    e = y - zeta_next
    if abs(e) > cfg.noise_halfwidth:
        raise ValidationError(f"observation {y} is outside the noise window of {zeta_next}")
    return e + cfg.noise_halfwidth


def bapomdp_counts(cfg: MedicalConfig, noise_counts: Sequence[int] | None = None) -> ObsCounts:
    """Observation counts ``psi[a, s', (y, z)]`` shared across states through the noise counts."""
    w = cfg.noise_halfwidth
    counts = tuple(cfg.obs_noise_prior if noise_counts is None else noise_counts)
    if len(counts) != 2 * w + 1:
        raise ValidationError("one noise count per value of eps")
    states = mdp_states(cfg)
    labels = observation_labels(cfg)
    where = {lab: i for i, lab in enumerate(labels)}
    psi = np.zeros((2, len(states), len(labels)), dtype=np.int64)
    for i, (m, z) in enumerate(states):
        for e in range(-w, w + 1):
            psi[:, i, where[(z + e, int(m == 3))]] = counts[e + w]
    return ObsCounts(psi)


# -- controlled PDMP with visit dates ------------------------------------------------


def _lin_flow(slope: float):
    return lambda x, t: x + slope * t


def _lin_hitting(slope: float, level: float):
    def hit(x: HybridState) -> float:
        gap = level - x.euclid[0]
        if gap * slope <= 0:
            return 0.0 if gap == 0 or (gap > 0) != (slope > 0) else math.inf
        return gap / slope

    return hit


def _medical_cost(cfg: MedicalConfig, z0: float):
    def cost(s: BridgeState, a: BridgeAction, s2: BridgeState) -> float:
        zeta, zeta2 = s.x.euclid[0], s2.x.euclid[0]
        if cfg.marker_cost_form == "difference":
            running = (zeta - zeta2) * a.delay
        else:
            running = (0.5 * (zeta + zeta2) - z0) * a.delay
        return running + cfg.visit_cost + cfg.regime_costs[a.regime]

    return cost


def _keep_mode0_elapsed(x: HybridState) -> HybridState:
    return x if x.mode == 0 or x.elapsed == 0.0 else HybridState(x.mode, x.euclid, 0.0)


def bridge_full(cfg: MedicalConfig | None = None) -> BridgeProblem:
    """Treatment and visit-date decisions on the continuous-marker model."""
    cfg = cfg or MedicalConfig()
    z0, D = cfg.zeta0, cfg.death_level
    b1, b2, alpha = cfg.relapse_beta_slow, cfg.relapse_beta_escape, cfg.relapse_alpha
    alive = lambda x: z0 <= x.euclid[0] < D  # noqa: E731
    dyn = {}
    for l in (0, 1):
        death = DeterministicKernel(lifted_target(l, 3, D))
        dyn[(l, 3)] = ModeDynamics(_const_flow, region=lambda x: x.euclid[0] == D)
        dyn[(l, 2)] = ModeDynamics(
            _exp_flow(cfg.growth_escape if l == 0 else cfg.growth_escape_treated),
            death,
            boundary_time=_exp_hitting(cfg.growth_escape if l == 0 else cfg.growth_escape_treated, D),
            region=alive,
        )
    dyn[(0, 0)] = ModeDynamics(
        _const_flow,
        CategoricalKernel([(b1, lifted_target(0, 1, z0)), (b2, lifted_target(0, 2, z0))]),
        region=lambda x: x.euclid[0] == z0,
        **weibull_intensity(b1 + b2, alpha),
    )
    dyn[(0, 1)] = ModeDynamics(
        _exp_flow(cfg.growth_slow),
        CategoricalKernel(
            [
                (lambda x: float(x.euclid[0] >= D), lifted_target(0, 3, D)),
                (lambda x: float(x.euclid[0] < D), lifted_target(0, 2)),
            ]
        ),
        boundary_time=_exp_hitting(cfg.growth_slow, D),
        region=alive,
        rate=cfg.escape_rate_untreated,
    )
    dyn[(1, 0)] = ModeDynamics(
        _const_flow,
        DeterministicKernel(lifted_target(1, 2, z0)),
        region=lambda x: x.euclid[0] == z0,
        rate=cfg.escape_rate_remission_treated,
    )
    dyn[(1, 1)] = ModeDynamics(
        _exp_flow(-cfg.decay_treated),
        CategoricalKernel(
            [
                (lambda x: float(x.euclid[0] <= z0), lifted_target(1, 0, z0)),
                (lambda x: float(x.euclid[0] > z0), lifted_target(1, 2)),
            ]
        ),
        boundary_time=_exp_hitting(-cfg.decay_treated, z0),
        region=alive,
        rate=cfg.escape_rate_treated,
    )
    T = cfg.real_horizon
    bound = max(
        (b1 + b2) * T**alpha,
        cfg.escape_rate_untreated,
        cfg.escape_rate_remission_treated,
        cfg.escape_rate_treated,
    )
    pdmp = ModeAugmentedPdmp(
        (0, 1), (0, 1, 2, 3), dyn, time_augmented=True, intensity_bound=bound, project=_keep_mode0_elapsed
    )
    costs = BridgeCosts(_medical_cost(cfg, z0), cfg.bridge_death_cost)
    return BridgeProblem(
        pdmp,
        delta=cfg.delta,
        horizon=cfg.bridge_decisions,
        delays=cfg.visit_delays,
        costs=costs,
        death_modes=(3,),
        real_horizon=T,
    )


def bridge_initial(cfg: MedicalConfig | None = None) -> BridgeState:
    cfg = cfg or MedicalConfig()
    return BridgeState(HybridState.make(0, cfg.zeta0, 0.0), 0.0)


def _marker(x: HybridState) -> float:
    return x.euclid[0]


def bridge_pomdp(cfg: MedicalConfig | None = None) -> BridgePomdp:
    """Marker seen through Gaussian noise at visits; death is seen exactly."""
    cfg = cfg or MedicalConfig()
    return wrap_as_pomdp(bridge_full(cfg), _marker, Noise("gaussian", cfg.obs_sigma), observed_modes=(3,))


# -- discrete twin of the finite MDP ---------------------------------------------------


def _zero_elapsed(x: HybridState) -> HybridState:
    return x if x.elapsed == 0.0 else HybridState(x.mode, x.euclid, 0.0)


def _next_unit(x: HybridState) -> float:
    return math.floor(x.elapsed) + 1.0 - x.elapsed


def discrete_twin(cfg: MedicalConfig | None = None) -> BridgeProblem:
    """The finite treatment MDP re-expressed as a regime-controlled PDMP.

    Unit decision step, integer markers, linear flows and boundary-only
    jumps, so every step kernel has finite support. Remission relapses at
    each unit of elapsed time through a categorical kernel. The elapsed
    coordinate only matters modulo the unit step and is reset after each
    decision.
    """
    cfg = cfg or MedicalConfig()
    D = float(cfg.marker_max)
    p0, p1, p2 = cfg.relapse_probs
    alive = lambda x: 0.0 <= x.euclid[0] < D  # noqa: E731
    dyn = {}
    for l in (0, 1):
        dyn[(l, 3)] = ModeDynamics(_const_flow, region=lambda x: x.euclid[0] == D)
    dyn[(0, 0)] = ModeDynamics(
        _const_flow,
        CategoricalKernel([(p0, lifted_target(0, 0, 0.0)), (p1, lifted_target(0, 1, 0.0)), (p2, lifted_target(0, 2, 0.0))]),
        boundary_time=_next_unit,
        region=lambda x: x.euclid[0] == 0.0,
    )
    dyn[(1, 0)] = ModeDynamics(_const_flow, region=lambda x: x.euclid[0] == 0.0)
    for m, slope in ((1, 1.0), (2, 2.0)):
        dyn[(0, m)] = ModeDynamics(
            _lin_flow(slope), DeterministicKernel(lifted_target(0, 3, D)), boundary_time=_lin_hitting(slope, D), region=alive
        )
        dyn[(1, m)] = ModeDynamics(
            _lin_flow(-1.0), DeterministicKernel(lifted_target(1, 0, 0.0)), boundary_time=_lin_hitting(-1.0, 0.0), region=alive
        )
    pdmp = ModeAugmentedPdmp((0, 1), (0, 1, 2, 3), dyn, time_augmented=True, intensity_bound=1e-9, project=_zero_elapsed)

    def cost(s: BridgeState, a: BridgeAction, s2: BridgeState) -> float:
        m = s.x.mode
        return cfg.treatment_cost * a.regime + cfg.slow_relapse_cost * (m == 1) + cfg.aggressive_relapse_cost * (m == 2)

    return BridgeProblem(
        pdmp,
        delta=1,
        horizon=cfg.horizon,
        delays=(1,),
        costs=BridgeCosts(cost, cfg.death_cost),
        death_modes=(3,),
    )


def twin_state(label: tuple[int, int], clock: float = 0.0) -> BridgeState:
    m, z = label
    return BridgeState(HybridState.make(m, float(z), 0.0), float(clock))


def twin_label(s: BridgeState) -> tuple[int, int]:
    return (s.x.mode, int(round(s.x.euclid[0])))


def twin_pomdp(cfg: MedicalConfig | None = None) -> BridgePomdp:
    cfg = cfg or MedicalConfig()
    return wrap_as_pomdp(discrete_twin(cfg), _marker, Noise("uniform_int", cfg.noise_halfwidth), observed_modes=(3,))


# -- registry ----------------------------------------------------------------------------

_BUILDERS = {
    "pdmp_basic": pdmp_basic,
    "pdmp_semi_markov": pdmp_semi_markov,
    "pdmp_surgery": pdmp_surgery,
    "mdp_finite": mdp_finite,
    "pomdp_discrete": pomdp_discrete,
    "pomdp_continuous": pomdp_continuous,
    "bamdp": bamdp,
    "bridge_full": bridge_full,
    "bridge_pomdp": bridge_pomdp,
}


def make_variant(name: str, cfg: MedicalConfig | dict | None = None) -> Any:
    """Build one of :data:`VARIANTS` from a configuration."""
    if name not in _BUILDERS:
        raise ValidationError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
    if not isinstance(cfg, MedicalConfig):
        cfg = MedicalConfig.from_dict(cfg)
    return _BUILDERS[name](cfg)
