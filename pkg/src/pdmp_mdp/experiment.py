"""Seeded experiments over the medical variants, writing CSV and JSON artifacts.

Every run is a pure function of its configuration and seed, so re-running
with the same inputs reproduces the output files byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import medical
from .bamdp import bamdp_generative, build_bamdp
from .bridge import (
    BridgeAction,
    BridgeState,
    Cemetery,
    FilterState,
    filter_update,
    plan_pomdp_search,
    run_episode,
    wrap_as_mdp,
)
from .dp import backward_induction
from .errors import ValidationError
from .mdp import evaluate_total_cost_mc, simulate_policy
from .pdmp import (
    HybridState,
    evaluate_strategy_cost,
    simulate_controlled,
    simulate_ssa,
    write_trajectory_csv,
)
from .pomdp import pomdp_simulate, solve_pomdp
from .rl import GenerativeModel, mcts_search

COMMANDS = ("simulate", "solve", "plan", "evaluate", "filter")

# Defaults for the per-run options; the config's "run" section overrides them.
RUN_DEFAULTS: dict[str, Any] = {
    "episodes": 1000,
    "pomdp_depth": 4,
    "bamdp_horizon": 10,
    "budget": 2000,
    "plan_depth": 8,
    "particles": 1000,
    "regime": 0,
    "delay": 15,
}


def _dump(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _num(v: Any) -> Any:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_rows(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(v) for v in r])


def load_config(path: str | Path | None) -> dict[str, Any]:
    """Read ``{"model": {...}, "run": {...}}``; both sections are optional."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) - {"model", "run"}:
        raise ValidationError("config must be an object with optional 'model' and 'run' sections")
    return doc


def _run_options(doc: dict[str, Any] | None) -> dict[str, Any]:
    doc = dict(doc or {})
    unknown = set(doc) - set(RUN_DEFAULTS)
    if unknown:
        raise ValidationError(f"unknown run options: {sorted(unknown)}")
    opts = {**RUN_DEFAULTS, **doc}
    for key in ("episodes", "pomdp_depth", "bamdp_horizon", "budget", "plan_depth", "particles"):
        if not isinstance(opts[key], int) or opts[key] < 1:
            raise ValidationError(f"run option {key} must be a positive integer")
    return opts


class _Run:
    def __init__(self, command: str, variant: str, cfg: medical.MedicalConfig, opts: dict, seed: int, outdir: Path) -> None:
        self.command = command
        self.variant = variant
        self.cfg = cfg
        self.opts = opts
        self.seed = seed
        self.outdir = outdir
        self.rng = np.random.default_rng(seed)
        self.files: list[str] = []
        self.results: dict[str, Any] = {}
        self.tolerances: dict[str, Any] = {}

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.outdir / name

    def unsupported(self) -> None:
        raise ValidationError(f"command {self.command!r} is not available for variant {self.variant!r}")

    def fixed_action(self) -> BridgeAction:
        a = BridgeAction(int(self.opts["regime"]), float(self.opts["delay"]))
        if a.regime not in (0, 1) or a.delay not in self.cfg.visit_delays:
            raise ValidationError("fixed bridge action needs regime 0/1 and an admissible delay")
        return a


# -- simulate --------------------------------------------------------------------------


def _simulate(run: _Run) -> None:
    v, cfg = run.variant, run.cfg
    if v in ("pdmp_basic", "pdmp_semi_markov", "pdmp_surgery"):
        model = medical.make_variant(v, cfg)
        elapsed = 0.0 if model.time_augmented else None
        x0 = HybridState.make(-1, 2 * cfg.zeta0, elapsed)
        if v == "pdmp_surgery":
            traj = simulate_controlled(model, medical.surgery_strategy(model, cfg), x0, model.max_jumps, run.rng, cfg.time_cap)
        else:
            traj = simulate_ssa(model, x0, cfg.time_cap, run.rng)
        write_trajectory_csv(traj, run.path("trajectory.csv"), model)
        run.results.update(n_jumps=len(traj.jumps), final_mode=traj.final_state(model).mode)
    elif v == "mdp_finite":
        mdp = medical.mdp_finite(cfg)
        res = backward_induction(mdp)
        rec = simulate_policy(mdp, res.as_policy(), 0, run.rng)
        rec.write_csv(run.path("trajectory.csv"), mdp)
        run.results.update(total_cost=rec.total_cost)
    elif v in ("pomdp_discrete", "pomdp_continuous"):
        pomdp = medical.make_variant(v, cfg)
        ep = pomdp_simulate(pomdp, lambda t, b, h: 0, run.rng, keep_beliefs=False)
        labels = pomdp.base.states
        rows = []
        for t, a in enumerate(ep.actions):
            w = ep.observations[t]
            y, z = w if pomdp.continuous else pomdp.observations[w]
            rows.append([t, *labels[ep.states[t]], a, y, z, ep.costs[t]])
        rows.append([len(ep.actions), *labels[ep.states[-1]], "", "", "", ep.terminal_cost])
        _write_rows(run.path("episode.csv"), ["t", "mode", "zeta", "action", "y", "z", "cost"], rows)
        run.results.update(total_cost=ep.total_cost)
    elif v == "bamdp":
        model = medical.bamdp(cfg)
        H = run.opts["bamdp_horizon"]
        gen = bamdp_generative(model, H)
        state = (0, model.initial(0))
        rows = []
        while not gen.is_terminal(state):
            acts = gen.admissible(state)
            a = acts[int(run.rng.integers(len(acts)))]
            t, h = state
            state, c = gen.step(state, a, run.rng)
            rows.append([t, *model.base.states[h.s], json.dumps(h.theta), a, c])
        t, h = state
        rows.append([t, *model.base.states[h.s], json.dumps(h.theta), "", gen.terminal_cost(state)])
        _write_rows(run.path("episode.csv"), ["t", "mode", "zeta", "theta", "action", "cost"], rows)
    elif v in ("bridge_full", "bridge_pomdp"):
        a = run.fixed_action()
        problem = medical.bridge_full(cfg)
        pomdp = medical.bridge_pomdp(cfg) if v == "bridge_pomdp" else None
        ep = run_episode(problem, _bridge_fixed(problem, a), medical.bridge_initial(cfg), run.rng, pomdp)
        ep.write_csv(run.path("episode.csv"))
        run.results.update(total_cost=ep.total_cost, dead=problem.is_dead(ep.final_state))
    else:
        run.unsupported()


def _bridge_fixed(problem, a: BridgeAction) -> Callable:
    """Apply ``a`` while it fits, then the shortest admissible delay, then the padding action."""

    def policy(n: int, info: Any, state: Any) -> BridgeAction:
        s = state if state is not None else info
        if isinstance(s, (BridgeState, Cemetery)):
            acts = problem.admissible(s)
        else:
            clock = None if not isinstance(info, tuple) or len(info) < 2 else info[1]
            dead = not isinstance(info, tuple) or len(info) < 3 or info[2] == 1
            if dead or clock is None:
                return problem.actions[-1]
            room = problem.end_time - clock
            acts = [b for b in problem.live_actions if b.delay <= room + 1e-9] or [problem.actions[-1]]
        if a in acts:
            return a
        same = [b for b in acts if not b.artificial and b.regime == a.regime]
        return same[0] if same else acts[0]

    return policy


# -- solve -------------------------------------------------------------------------------


def _solve(run: _Run) -> None:
    v, cfg = run.variant, run.cfg
    if v == "mdp_finite":
        mdp = medical.mdp_finite(cfg)
        res = backward_induction(mdp)
        res.to_json(run.path("solution.json"), mdp)
        run.results.update(value_s0=float(res.values[0, 0]), residual=res.residual, policy_shape=list(res.policy.shape))
    elif v == "pomdp_discrete":
        pomdp = medical.pomdp_discrete(cfg)
        depth = run.opts["pomdp_depth"]
        value, policy = solve_pomdp(pomdp, depth)
        policy.to_json(run.path("policy.json"), pomdp)
        run.results.update(value_b0=value, depth=depth, belief_nodes=policy.belief_mdp.n_nodes)
    elif v == "bamdp":
        H = run.opts["bamdp_horizon"]
        hm = build_bamdp(medical.bamdp(cfg), 0, H)
        res = backward_induction(hm.mdp)
        res.to_json(run.path("solution.json"), hm.mdp)
        run.results.update(value_s0=float(res.values[0, 0]), horizon=H, hyperstates=len(hm.hyperstates))
    else:
        run.unsupported()


# -- plan --------------------------------------------------------------------------------


def _plan(run: _Run) -> None:
    v, cfg, opts = run.variant, run.cfg, run.opts
    budget = opts["budget"]
    if v == "mdp_finite":
        gen = GenerativeModel.from_mdp(medical.mdp_finite(cfg))
        res = mcts_search(gen, (0, 0), budget, run.rng, max_depth=opts["plan_depth"])
    elif v == "bamdp":
        model = medical.bamdp(cfg)
        gen = bamdp_generative(model, opts["bamdp_horizon"])
        res = mcts_search(gen, (0, model.initial(0)), budget, run.rng)
    elif v == "bridge_full":
        problem = medical.bridge_full(cfg)
        res = mcts_search(wrap_as_mdp(problem), medical.bridge_initial(cfg), budget, run.rng, max_depth=opts["plan_depth"])
    elif v == "bridge_pomdp":
        pomdp = medical.bridge_pomdp(cfg)
        s0 = medical.bridge_initial(cfg)
        theta = FilterState.dirac(s0, "particle", opts["particles"])
        omega = pomdp.observe(s0, run.rng)
        res = plan_pomdp_search(pomdp, theta, omega, budget, run.rng, max_depth=opts["plan_depth"])
    else:
        run.unsupported()
        return
    summary = res.summary()
    summary["action"] = repr(summary["action"])
    for entry in summary["actions"]:
        entry["action"] = repr(entry["action"])
    _dump(run.path("plan.json"), summary)
    run.results.update(action=summary["action"], budget=budget)


# -- evaluate ----------------------------------------------------------------------------


def _mean_se(samples: list[float]) -> tuple[float, float]:
    arr = np.asarray(samples, dtype=float)
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), se


def _evaluate(run: _Run) -> None:
    v, cfg, n = run.variant, run.cfg, run.opts["episodes"]
    if v == "mdp_finite":
        mdp = medical.mdp_finite(cfg)
        res = backward_induction(mdp)
        mean, se = evaluate_total_cost_mc(mdp, res.as_policy(), 0, n, run.rng)
        run.results.update(reference=float(res.values[0, 0]), policy="optimal")
        run.tolerances["mean_vs_reference"] = "3 standard errors"
    elif v == "pdmp_surgery":
        model = medical.pdmp_surgery(cfg)
        x0 = HybridState.make(0, cfg.zeta0, 0.0)
        mean, se = evaluate_strategy_cost(model, medical.surgery_strategy(model, cfg), medical.surgery_costs(cfg), x0, n, run.rng)
        run.results.update(policy="threshold surgery")
    elif v == "pomdp_discrete":
        pomdp = medical.pomdp_discrete(cfg)
        depth = run.opts["pomdp_depth"]
        value, policy = solve_pomdp(pomdp, depth)
        costs = [pomdp_simulate(pomdp, policy, run.rng, horizon=depth, keep_beliefs=False).total_cost for _ in range(n)]
        mean, se = _mean_se(costs)
        run.results.update(reference=value, depth=depth, policy="belief-optimal")
        run.tolerances["mean_vs_reference"] = "3 standard errors"
    elif v in ("bridge_full", "bridge_pomdp"):
        a = run.fixed_action()
        problem = medical.bridge_full(cfg)
        pomdp = medical.bridge_pomdp(cfg) if v == "bridge_pomdp" else None
        policy = _bridge_fixed(problem, a)
        s0 = medical.bridge_initial(cfg)
        mean, se = _mean_se([run_episode(problem, policy, s0, run.rng, pomdp).total_cost for _ in range(n)])
        run.results.update(policy=repr(a))
    else:
        run.unsupported()
        return
    run.results.update(mean=mean, se=se, episodes=n)
    _dump(run.path("evaluation.json"), dict(run.results))


# -- filter --------------------------------------------------------------------------------


def _filter(run: _Run) -> None:
    v, cfg = run.variant, run.cfg
    if v in ("pomdp_discrete", "pomdp_continuous"):
        pomdp = medical.make_variant(v, cfg)
        base = pomdp.base
        ep = pomdp_simulate(pomdp, lambda t, b, h: 0, run.rng)
        rows = []
        for t in range(len(ep.actions)):
            b = ep.beliefs[t + 1]
            s = ep.states[t + 1]
            w = ep.observations[t]
            y, z = w if pomdp.continuous else pomdp.observations[w]
            mode_probs = [float(sum(b[i] for i, lab in enumerate(base.states) if lab[0] == m)) for m in range(4)]
            mean_zeta = float(sum(b[i] * lab[1] for i, lab in enumerate(base.states)))
            rows.append([t + 1, *base.states[s], y, z, mean_zeta, *mode_probs, float(b[s])])
        header = ["t", "mode", "zeta", "y", "z", "mean_zeta", "p_mode0", "p_mode1", "p_mode2", "p_mode3", "p_true"]
        _write_rows(run.path("filter.csv"), header, rows)
        run.results.update(max_normalization_error=max(abs(float(b.sum()) - 1.0) for b in ep.beliefs))
    elif v == "bridge_pomdp":
        pomdp = medical.bridge_pomdp(cfg)
        problem = pomdp.problem
        a_fixed = run.fixed_action()
        policy = _bridge_fixed(problem, a_fixed)
        s = medical.bridge_initial(cfg)
        theta = FilterState.dirac(s, "particle", run.opts["particles"])
        rows = []
        for n in range(problem.horizon):
            a = policy(n, s, s)
            s, _ = problem.step(s, a, run.rng)
            omega = pomdp.observe(s, run.rng)
            theta = filter_update(pomdp, theta, a, omega, run.rng)
            if isinstance(s, Cemetery):
                break
            zetas = np.array([p.x.euclid[0] if isinstance(p, BridgeState) else math.nan for p in theta.states])
            dead = float(sum(w for p, w in zip(theta.states, theta.weights) if problem.is_dead(p)))
            rows.append([n + 1, s.clock, s.x.mode, s.x.euclid[0], omega[0], float(np.dot(theta.weights, zetas)), dead, theta.ess, int(theta.resampled)])
        header = ["n", "t", "mode", "zeta", "y", "mean_zeta", "p_dead", "ess", "resampled"]
        _write_rows(run.path("filter.csv"), header, rows)
        run.results.update(updates=len(rows), particles=run.opts["particles"])
    else:
        run.unsupported()


_DISPATCH = {"simulate": _simulate, "solve": _solve, "plan": _plan, "evaluate": _evaluate, "filter": _filter}


def run_experiment(spec: dict[str, Any]) -> dict[str, Any]:
    """Run one command and write its artifacts plus ``summary.json``.

    ``spec`` holds ``command``, ``variant``, ``seed``, ``outdir`` and an
    optional ``config`` with ``model`` and ``run`` sections.
    """
    command = spec.get("command")
    if command not in _DISPATCH:
        raise ValidationError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    variant = spec.get("variant")
    if variant not in medical.VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}; expected one of {', '.join(medical.VARIANTS)}")
    seed = spec.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ValidationError("seed must be a non-negative integer")
    config = spec.get("config") or {}
    cfg = medical.MedicalConfig.from_dict(config.get("model"))
    opts = _run_options(config.get("run"))
    outdir = Path(spec.get("outdir", "."))
    outdir.mkdir(parents=True, exist_ok=True)
    run = _Run(command, variant, cfg, opts, seed, outdir)
    _DISPATCH[command](run)
    summary = {
        "command": command,
        "variant": variant,
        "seed": seed,
        "config": cfg.to_dict(),
        "run": opts,
        "files": sorted(run.files),
        "results": run.results,
        "tolerances": run.tolerances,
    }
    _dump(outdir / "summary.json", summary)
    return summary
