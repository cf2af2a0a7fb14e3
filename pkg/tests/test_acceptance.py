"""Ten end-to-end acceptance checks, each printing one PASS/FAIL line.

Run under pytest, or directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import filecmp
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy import integrate, stats

sys.path.insert(0, str(Path(__file__).resolve().parent))

from acceptance_report import report  # noqa: E402
from oracles import (  # noqa: E402
    brute_force_bayes,
    dense_tables,
    random_finite_mdp,
    reachable_policy_count,
)

from pdmp_mdp import cli, medical  # noqa: E402
from pdmp_mdp.bamdp import BayesAdaptiveModel, bamdp_transition, build_bamdp, increment, predictive  # noqa: E402
from pdmp_mdp.bridge import (  # noqa: E402
    BridgeAction,
    BridgePomdp,
    BridgeProblem,
    BridgeState,
    Cemetery,
    FilterState,
    Noise,
    filter_update,
    plan_pomdp_mcts,
    tabulate,
    wrap_as_mdp,
)
from pdmp_mdp.dp import (  # noqa: E402
    backward_induction,
    bellman_residual,
    brute_force_optimal,
    policy_iteration,
    value_iteration,
)
from pdmp_mdp.mdp import FiniteMdp, evaluate_total_cost_mc, q_from_v  # noqa: E402
from pdmp_mdp.pdmp import (  # noqa: E402
    DeterministicKernel,
    HybridState,
    ModeDynamics,
    PdmpModel,
    sample_competing,
    simulate_ssa,
    to_state,
    weibull_intensity,
)
from pdmp_mdp.pomdp import FinitePomdp, belief_update, pomdp_simulate, solve_pomdp  # noqa: E402
from pdmp_mdp.rl import GenerativeModel, mcts_plan, q_learning  # noqa: E402

# -- 1 ------------------------------------------------------------------------------------


def criterion_1():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst, n = 0.0, 0
    while n < 100:
        S, A, H = int(rng.integers(2, 7)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
        kind = "sas" if rng.random() < 0.5 else "sa"
        mdp = random_finite_mdp(rng, S, A, H, support=int(rng.integers(1, 4)), cost_kind=kind)
        if reachable_policy_count(mdp, 0) > 10**5:
            continue  # the enumeration oracle must stay feasible
        worst = max(worst, abs(backward_induction(mdp).values[0, 0] - brute_force_optimal(mdp, 0)))
        n += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10
    return report(1, "DP oracle equivalence", ok, f"100 instances, max |BI - brute| = {worst:.2e}, {elapsed:.2f}s"), ok


def test_criterion_1_dp_oracle_equivalence():
    assert criterion_1()[1]


# -- 2 ------------------------------------------------------------------------------------


def criterion_2():
    rng = np.random.default_rng(202)
    gamma, eps = 0.9, 1e-8
    start = time.perf_counter()
    worst_v, mismatches = 0.0, 0
    for _ in range(50):
        S, A = int(rng.integers(2, 21)), int(rng.integers(1, 5))
        mdp = random_finite_mdp(rng, S, A, None, support=int(rng.integers(1, S + 1)))
        vi = value_iteration(mdp, gamma, eps)
        pi = policy_iteration(mdp, gamma)
        worst_v = max(worst_v, float(np.max(np.abs(vi.values - pi.values))))
        Q = np.where(mdp.admissible_mask, q_from_v(mdp, pi.values, gamma), np.inf)
        for s in range(S):
            row = np.sort(Q[s][np.isfinite(Q[s])])
            gap = row[1] - row[0] if row.size > 1 else np.inf
            if gap > 1e-6 and vi.policy[s] != pi.policy[s]:
                mismatches += 1
    elapsed = time.perf_counter() - start
    ok = worst_v <= 1e-6 and mismatches == 0 and elapsed < 30
    detail = f"50 instances, max |V_VI - V_PI| = {worst_v:.2e}, policy mismatches beyond gap = {mismatches}, {elapsed:.2f}s"
    return report(2, "VI/PI agreement", ok, detail), ok


def test_criterion_2_vi_pi_agreement():
    assert criterion_2()[1]


# -- 3 ------------------------------------------------------------------------------------


def criterion_3():
    mdp = medical.mdp_finite()
    start = time.perf_counter()
    res = backward_induction(mdp)
    elapsed = time.perf_counter() - start
    residual = bellman_residual(mdp, res.values)
    s0 = mdp.state_index((0, 0))
    mean, se = evaluate_total_cost_mc(mdp, res.as_policy(), s0, 10**4, np.random.default_rng(303))
    v0 = float(res.values[0, s0])
    death = res.values[:, mdp.state_index((3, 40))]
    ok = elapsed < 1.0 and residual <= 1e-10 and abs(mean - v0) <= 3 * se and np.all(death == 200.0)
    detail = (
        f"solve {elapsed:.3f}s, residual {residual:.1e}, V*(0,0)={v0:.4f}, MC {mean:.4f} +/- {se:.4f}, "
        f"V_t(3,40)=200 for all t: {bool(np.all(death == 200.0))}"
    )
    return report(3, "medical MDP solve", ok, detail), ok


def test_criterion_3_medical_mdp():
    assert criterion_3()[1]


# -- 4 ------------------------------------------------------------------------------------


def _flip_model(lam: float, bound: float) -> PdmpModel:
    const = lambda x, t: x  # noqa: E731
    return PdmpModel(
        {
            0: ModeDynamics(const, DeterministicKernel(to_state(1, 0.0)), rate=lam),
            1: ModeDynamics(const, DeterministicKernel(to_state(0, 0.0)), rate=lam),
        },
        intensity_bound=bound,
    )


def _inter_jump_samples(model: PdmpModel, lam: float, n: int, rng) -> np.ndarray:
    traj = simulate_ssa(model, HybridState.make(0, 0.0), 1.5 * n / lam, rng)
    times = np.array(traj.jump_times)
    gaps = np.diff(np.concatenate(([0.0], times)))
    assert gaps.size >= n
    return gaps[:n]


def criterion_4():
    start = time.perf_counter()
    lam, n = 2.0, 10**4
    p_exact = stats.kstest(_inter_jump_samples(_flip_model(lam, lam), lam, n, np.random.default_rng(401)), "expon", args=(0, 1 / lam)).pvalue
    p_thin = stats.kstest(_inter_jump_samples(_flip_model(lam, 2 * lam), lam, n, np.random.default_rng(402)), "expon", args=(0, 1 / lam)).pvalue
    # competing clocks: Weibull-type lambda1(t) = b t against constant lambda2
    b, l2 = 0.5, 1.0
    w = weibull_intensity(b, 1.0)
    x0 = HybridState.make(0, 0.0, 0.0)
    inv1 = lambda e: w["inverse_hazard"](x0, e)  # noqa: E731
    inv2 = lambda e: e / l2  # noqa: E731
    rng = np.random.default_rng(403)
    draws = [sample_competing([inv1, inv2], rng) for _ in range(n)]
    mins = np.array([d[0] for d in draws])
    wins1 = np.mean([d[1] == 0 for d in draws])
    hazard = lambda t: b * t * t / 2 + l2 * t  # noqa: E731
    p1, _ = integrate.quad(lambda t: b * t * math.exp(-hazard(t)), 0, np.inf)
    se = math.sqrt(p1 * (1 - p1) / n)
    p_min = stats.kstest(mins, lambda t: 1 - np.exp(-hazard(np.asarray(t)))).pvalue
    # constant rates: winner frequency lambda1 / (lambda1 + lambda2)
    la, lb = 1.0, 3.0
    wins_const = np.mean([sample_competing([lambda e: e / la, lambda e: e / lb], rng)[1] == 0 for _ in range(n)])
    se_const = math.sqrt(0.25 * 0.75 / n)
    elapsed = time.perf_counter() - start
    ok = (
        p_exact > 0.01
        and p_thin > 0.01
        and p_min > 0.01
        and abs(wins1 - p1) <= 3 * se
        and abs(wins_const - 0.25) <= 3 * se_const
        and elapsed < 20
    )
    detail = (
        f"KS p-values: exact {p_exact:.3f}, thinned {p_thin:.3f}, competing min {p_min:.3f}; "
        f"winner freq {wins1:.4f} vs {p1:.4f} (SE {se:.4f}), constant {wins_const:.4f} vs 0.25; {elapsed:.2f}s"
    )
    return report(4, "simulator exactness", ok, detail), ok


def test_criterion_4_simulator_exactness():
    assert criterion_4()[1]


# -- 5 ------------------------------------------------------------------------------------


def chain_mdp() -> FiniteMdp:
    """States 0..3; action 0 moves right, action 1 moves left; state 3 is a free absorbing goal."""
    P = np.zeros((4, 2, 4))
    c = np.ones((4, 2))
    for s in range(3):
        P[s, 0, s + 1] = 1.0
        P[s, 1, max(s - 1, 0)] = 1.0
    P[3, :, 3] = 1.0
    c[3] = 0.0
    return FiniteMdp(P, c)


def criterion_5():
    mdp = chain_mdp()
    gamma = 0.9
    vi = value_iteration(mdp, gamma, 1e-12)
    q_star = q_from_v(mdp, vi.values, gamma)
    start = time.perf_counter()
    gen = GenerativeModel.from_mdp(mdp)
    q = q_learning(gen, gamma, 0.5, 0.3, n_episodes=2500, episode_len=20, rng=np.random.default_rng(505))
    elapsed = time.perf_counter() - start
    err = float(np.max(np.abs(q.as_array(4, 2) - q_star)))
    ok = err <= 0.05 and elapsed < 10
    return report(5, "Q-learning", ok, f"||Q - Q*|| = {err:.2e} after 5e4 steps, {elapsed:.2f}s"), ok


def test_criterion_5_q_learning():
    assert criterion_5()[1]


# -- 6 ------------------------------------------------------------------------------------


def _small_instances(rng, count: int, min_gap: float):
    out = []
    while len(out) < count:
        S, A, H = int(rng.integers(2, 5)), int(rng.integers(2, 4)), int(rng.integers(1, 4))
        mdp = random_finite_mdp(rng, S, A, H, support=2)
        res = backward_induction(mdp)
        q = np.where(mdp.admissible_mask[0], mdp.backup(res.values[1], 0)[0], np.inf)
        vals = np.sort(q[np.isfinite(q)])
        if vals.size < 2 or vals[1] - vals[0] < min_gap:
            continue  # a separated optimum keeps the check about search, not about ties
        out.append((mdp, int(res.policy[0, 0])))
    return out


def criterion_6():
    P = np.zeros((2, 2, 2))
    P[:, :, 1] = 1.0
    bandit = FiniteMdp(P, np.array([[1.0, 0.0], [0.0, 0.0]]), horizon=1)
    gen = GenerativeModel.from_mdp(bandit)
    one_step = sum(mcts_plan(gen, (0, 0), 1000, np.random.default_rng(600 + k)) == 1 for k in range(100))
    hits = runs = 0
    for i, (mdp, best) in enumerate(_small_instances(np.random.default_rng(606), 20, 0.5)):
        g = GenerativeModel.from_mdp(mdp)
        for k in range(5):
            hits += mcts_plan(g, (0, 0), 10**4, np.random.default_rng(10 * i + k)) == best
            runs += 1
    ok = one_step >= 95 and hits >= 0.95 * runs
    return report(6, "MCTS", ok, f"one-step {one_step}/100 at budget 1e3; small MDPs {hits}/{runs} at budget 1e4"), ok


def test_criterion_6_mcts():
    assert criterion_6()[1]


# -- 7 ------------------------------------------------------------------------------------


def criterion_7():
    rng = np.random.default_rng(707)
    worst_bayes = 0.0
    for _ in range(50):
        S, A, W = int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(2, 5))
        base = random_finite_mdp(rng, S, A, 3)
        O = rng.random((S, A, W)) + 0.01
        O /= O.sum(axis=2, keepdims=True)
        pomdp = FinitePomdp(base, O, b0=np.full(S, 1.0 / S))
        P, _ = dense_tables(base)
        b = rng.dirichlet(np.ones(S))
        a = int(rng.integers(A))
        for w in range(W):
            got = belief_update(pomdp, b, a, w)
            worst_bayes = max(worst_bayes, float(np.max(np.abs(got - brute_force_bayes(P, O, b, a, w)))))
    worst_perfect = 0.0
    for _ in range(10):
        S, A, H = int(rng.integers(2, 5)), int(rng.integers(1, 3)), int(rng.integers(1, 5))
        base = random_finite_mdp(rng, S, A, H, cost_kind="sas")
        b0 = np.zeros(S)
        b0[0] = 1.0
        eye = np.repeat(np.eye(S)[:, None, :], A, axis=1)
        value, _ = solve_pomdp(FinitePomdp(base, eye, b0=b0), H)
        worst_perfect = max(worst_perfect, abs(value - backward_induction(base).values[0, 0]))
    pomdp = medical.pomdp_discrete()
    depth = 6
    value, policy = solve_pomdp(pomdp, depth)
    sim_rng = np.random.default_rng(777)
    costs = np.array([pomdp_simulate(pomdp, policy, sim_rng, horizon=depth, keep_beliefs=False).total_cost for _ in range(10**4)])
    mean, se = costs.mean(), costs.std(ddof=1) / math.sqrt(costs.size)
    ok = worst_bayes <= 1e-12 and worst_perfect <= 1e-10 and abs(mean - value) <= 3 * se
    detail = (
        f"max Bayes deviation {worst_bayes:.1e}, perfect-observation gap {worst_perfect:.1e}, "
        f"medical depth {depth}: V(b0)={value:.4f}, MC {mean:.4f} +/- {se:.4f}"
    )
    return report(7, "belief machinery", ok, detail), ok


def test_criterion_7_belief_machinery():
    assert criterion_7()[1]


# -- 8 ------------------------------------------------------------------------------------


def criterion_8():
    cfg = medical.MedicalConfig()
    model = medical.bamdp(cfg)
    idx = medical.mdp_index(cfg)
    s00 = idx[(0, 0)]
    out = dict((h.s, (p, h.theta)) for p, h in bamdp_transition(model, model.initial(s00), 0))
    update_ok = out[idx[(1, 0)]][1] == ((5, 2, 0),)
    # predictive consistency under synthetic transitions from the true row
    p_true = np.array(cfg.relapse_probs)
    rng = np.random.default_rng(808)
    theta = model.theta0
    n = 10**4
    for _ in range(n):
        theta = increment(theta, 0, int(rng.choice(3, p=p_true)))
    pred = predictive(theta[0])
    band = 3 * np.sqrt(p_true * (1 - p_true) / n)
    consistent = bool(np.all(np.abs(pred - p_true) <= band))
    # known-model limit
    H = 10
    N = 10**6
    base = medical.mdp_finite(cfg)
    mat = base.transition_matrix(0)
    P = (mat.toarray() if hasattr(mat, "toarray") else np.asarray(mat)).reshape(base.n_states, 2, base.n_states)
    short = FiniteMdp(
        P,
        base.expected_cost(0),
        terminal=base.terminal,
        horizon=H,
        admissible=base.admissible_mask,
        states=base.states,
    )
    theta0 = [int(round(N * p)) for p in p_true]
    limit = BayesAdaptiveModel.create(short, [(s00, 0)], [theta0], [model.supports[0]])
    v_bamdp = backward_induction(build_bamdp(limit, s00, H).mdp).values[0, 0]
    v_true = backward_induction(short).values[0, s00]
    ok = update_ok and consistent and abs(v_bamdp - v_true) <= 1e-3
    detail = (
        f"(5,1,0) -> {out[idx[(1, 0)]][1][0]}; predictive {np.round(pred, 4).tolist()} vs {p_true.tolist()} "
        f"within 3 SE: {consistent}; known-model gap {abs(v_bamdp - v_true):.1e}"
    )
    return report(8, "BAMDP", ok, detail), ok


def test_criterion_8_bamdp():
    assert criterion_8()[1]


# -- 9 ------------------------------------------------------------------------------------


def _random_rollouts(n: int, rng) -> tuple[int, int]:
    problem = medical.bridge_full()
    s0 = medical.bridge_initial()
    violations = 0
    for _ in range(n):
        s, seen_cemetery = s0, False
        for _ in range(problem.horizon):
            acts = problem.admissible(s)
            a = acts[int(rng.integers(len(acts)))]
            if isinstance(s, BridgeState) and not a.artificial and s.clock + a.delay > problem.end_time + 1e-9:
                violations += 1
            if isinstance(s, Cemetery) and not a.artificial:
                violations += 1
            s2, c = problem.step(s, a, rng)
            if seen_cemetery and (not isinstance(s2, Cemetery) or c != 0.0 or s2 != s):
                violations += 1
            if isinstance(s2, BridgeState) and abs(s2.clock - s.clock - a.delay) > 1e-9:
                violations += 1
            seen_cemetery = seen_cemetery or isinstance(s2, Cemetery)
            s = s2
    return violations, n


def _twin_gap() -> float:
    cfg = medical.MedicalConfig()
    tab = tabulate(medical.discrete_twin(cfg), medical.twin_state((0, 0)))
    v_twin = backward_induction(tab.mdp).values
    v_mdp = backward_induction(medical.mdp_finite(cfg)).values
    idx = medical.mdp_index(cfg)
    gap = 0.0
    for i, s in enumerate(tab.states):
        if isinstance(s, BridgeState):
            t = int(round(s.clock))
            if t <= cfg.horizon:
                gap = max(gap, abs(v_twin[t, i] - v_mdp[t, idx[medical.twin_label(s)]]))
    return gap


def _twin_vector(theta: FilterState, idx, n_states: int) -> np.ndarray:
    v = np.zeros(n_states)
    for s, w in zip(theta.states, theta.weights):
        v[idx[medical.twin_label(s)]] += w
    return v


def _filters(rng) -> tuple[float, float]:
    cfg = medical.MedicalConfig()
    twin = medical.twin_pomdp(cfg)
    pomdp = medical.pomdp_discrete(cfg)
    idx = medical.mdp_index(cfg)
    n_s = pomdp.base.n_states
    worst, worst_tv = 0.0, 0.0
    for episode in range(6):
        s = medical.twin_state((0, 0)) if episode % 2 == 0 else medical.twin_state((1, 6))
        grid = FilterState.dirac(s)
        b = np.zeros(n_s)
        b[idx[medical.twin_label(s)]] = 1.0
        particles = FilterState.dirac(s, "particle", 10**4) if episode < 3 else None
        for n in range(12):
            regime = int(rng.integers(2))
            a = BridgeAction(regime, 1.0)
            if not a in twin.problem.admissible(s):  # noqa: E713
                break
            s, _ = twin.problem.step(s, a, rng)
            omega = twin.observe(s, rng)
            grid = filter_update(twin, grid, a, omega)
            b = belief_update(pomdp, b, regime, pomdp.obs_index((int(omega[0]), omega[2])), n)
            worst = max(worst, float(np.max(np.abs(_twin_vector(grid, idx, n_s) - b))))
            if particles is not None and n < 5:
                particles = filter_update(twin, particles, a, omega, rng)
                if n == 4:
                    tv = 0.5 * float(np.abs(_twin_vector(particles, idx, n_s) - _twin_vector(grid, idx, n_s)).sum())
                    worst_tv = max(worst_tv, tv)
    return worst, worst_tv


def _planner_agreement(runs: int = 100, budget: int = 500) -> tuple[dict, dict, bool]:
    cfg = medical.MedicalConfig()
    twin = medical.discrete_twin(cfg)
    short = BridgeProblem(twin.pdmp, delta=1, horizon=5, delays=(1,), costs=twin.costs, death_modes=(3,))
    full_link = lambda x: (x.mode, x.euclid, x.elapsed)  # noqa: E731
    observed = BridgePomdp(short, full_link, Noise("none"))
    s0 = medical.twin_state((1, 2))
    gen = wrap_as_mdp(short)
    mdp_counts: dict = {}
    pomdp_counts: dict = {}
    for k in range(runs):
        a = mcts_plan(gen, s0, budget, np.random.default_rng(9000 + k))
        mdp_counts[a] = mdp_counts.get(a, 0) + 1
        theta = FilterState.dirac(s0, "particle", 1)
        omega = observed.observe(s0, np.random.default_rng(0))
        a = plan_pomdp_mcts(observed, theta, omega, budget, np.random.default_rng(19000 + k))
        pomdp_counts[a] = pomdp_counts.get(a, 0) + 1
    ok = True
    for a in set(mdp_counts) | set(pomdp_counts):
        p1, p2 = mdp_counts.get(a, 0) / runs, pomdp_counts.get(a, 0) / runs
        pooled = (p1 + p2) / 2
        se = math.sqrt(max(pooled * (1 - pooled), 1.0 / runs) * 2 / runs)
        ok = ok and abs(p1 - p2) <= 3 * se
    return mdp_counts, pomdp_counts, ok


def criterion_9():
    rng = np.random.default_rng(909)
    violations, n = _random_rollouts(10**4, rng)
    twin_gap = _twin_gap()
    bayes_gap, tv = _filters(rng)
    mdp_counts, pomdp_counts, planners_ok = _planner_agreement()
    ok = violations == 0 and twin_gap <= 1e-10 and bayes_gap <= 1e-12 and tv <= 0.05 and planners_ok
    fmt = lambda d: {repr(k): v for k, v in sorted(d.items(), key=lambda kv: repr(kv[0]))}  # noqa: E731
    detail = (
        f"{violations} violations in {n} rollouts; twin gap {twin_gap:.1e}; grid vs Bayes {bayes_gap:.1e}; "
        f"particle TV {tv:.4f}; planner choices MDP {fmt(mdp_counts)} vs observed POMDP {fmt(pomdp_counts)}"
    )
    return report(9, "bridge", ok, detail), ok


def test_criterion_9_bridge():
    assert criterion_9()[1]


# -- 10 -----------------------------------------------------------------------------------

SUPPORTED = {
    "simulate": medical.VARIANTS,
    "solve": ("mdp_finite", "pomdp_discrete", "bamdp"),
    "plan": ("mdp_finite", "bamdp", "bridge_full", "bridge_pomdp"),
    "evaluate": ("mdp_finite", "pdmp_surgery", "pomdp_discrete", "bridge_full", "bridge_pomdp"),
    "filter": ("pomdp_discrete", "pomdp_continuous", "bridge_pomdp"),
}


def criterion_10(workdir: Path):
    config = workdir / "config.json"
    config.write_text('{"run": {"episodes": 40, "budget": 200, "particles": 200, "pomdp_depth": 3}}\n')
    identical = total = failures = 0
    for command, variants in SUPPORTED.items():
        for variant in variants:
            dirs = [workdir / f"{command}-{variant}-{k}" for k in (1, 2)]
            codes = [cli.main([command, "--config", str(config), "--variant", variant, "--seed", "11", "--outdir", str(d)]) for d in dirs]
            total += 1
            if codes != [0, 0]:
                failures += 1
                continue
            names = sorted(p.name for p in dirs[0].iterdir())
            match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
            if names and not mismatch and not errors and names == sorted(p.name for p in dirs[1].iterdir()):
                identical += 1
    ok = identical == total and failures == 0
    return report(10, "reproducibility", ok, f"{identical}/{total} command/variant runs byte-identical, {failures} failed"), ok


def test_criterion_10_reproducibility(tmp_path):
    assert criterion_10(tmp_path)[1]


if __name__ == "__main__":
    import tempfile

    outcomes = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(), criterion_6(), criterion_7(), criterion_8(), criterion_9()]
    with tempfile.TemporaryDirectory() as tmp:
        outcomes.append(criterion_10(Path(tmp)))
    sys.exit(0 if all(ok for _, ok in outcomes) else 1)
