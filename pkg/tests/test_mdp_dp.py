import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import dense_tables, finite_horizon_q, random_finite_mdp, vi_q_star

from pdmp_mdp import medical
from pdmp_mdp.dp import backward_induction, bellman_residual, brute_force_optimal, policy_iteration, value_iteration
from pdmp_mdp.errors import InadmissibleActionError, InstanceTooLargeError, ValidationError
from pdmp_mdp.mdp import (
    FiniteMdp,
    Policy,
    evaluate_average_mc,
    evaluate_discounted_mc,
    evaluate_policy_exact,
    q_from_v,
    simulate_policy,
    validate,
)

seeds = st.integers(0, 2**32 - 1)


def test_sparse_and_dense_agree():
    rng = np.random.default_rng(1)
    mdp = random_finite_mdp(rng, 6, 3, 4, support=2)
    P, _ = dense_tables(mdp)
    sparse = FiniteMdp(sp.csr_array(P.reshape(18, 6)), mdp.expected_cost(), terminal=mdp.terminal, horizon=4, admissible=mdp.admissible_mask)
    assert sparse.is_sparse
    np.testing.assert_allclose(backward_induction(sparse).values, backward_induction(mdp).values, atol=1e-12)


def test_validation_errors():
    P = np.zeros((2, 1, 2))
    P[:, 0, 0] = 0.7
    diag = validate(FiniteMdp(P, np.zeros((2, 1)), horizon=1))
    assert not diag.ok and len(diag.row_violations) == 2
    with pytest.raises(ValidationError):
        FiniteMdp(np.ones((2, 1, 2)) / 2, np.zeros((2, 1)), horizon=-1)


def test_validate_reports_unreachable():
    P = np.zeros((3, 1, 3))
    P[0, 0, 0] = P[1, 0, 1] = P[2, 0, 0] = 1.0
    diag = validate(FiniteMdp(P, np.zeros((3, 1))))
    assert diag.ok and diag.unreachable == [1, 2]


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_backward_induction_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    mdp = random_finite_mdp(rng, int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 5)), cost_kind="sas")
    P, C = dense_tables(mdp)
    qs, v0 = finite_horizon_q(P, C, mdp.admissible_mask, mdp.terminal, mdp.horizon)
    res = backward_induction(mdp)
    np.testing.assert_allclose(res.values[0], v0, atol=1e-12)
    for t in range(mdp.horizon):
        q = np.array(qs[t])
        assert np.all(q[np.arange(mdp.n_states), res.policy[t]] <= q.min(axis=1) + 1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_brute_force_agrees_with_backward_induction(seed):
    rng = np.random.default_rng(seed)
    mdp = random_finite_mdp(rng, 3, 2, 2, support=2)
    assert brute_force_optimal(mdp, 0) == pytest.approx(backward_induction(mdp).values[0, 0], abs=1e-12)


def test_brute_force_limit():
    mdp = random_finite_mdp(np.random.default_rng(0), 6, 3, 6)
    with pytest.raises(InstanceTooLargeError):
        brute_force_optimal(mdp, 0, limit=100)


@settings(max_examples=30, deadline=None)
@given(seeds, st.sampled_from([0.5, 0.9, 0.99]))
def test_value_iteration_matches_loop_oracle(seed, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_finite_mdp(rng, int(rng.integers(2, 7)), int(rng.integers(1, 4)), None)
    P, C = dense_tables(mdp)
    _, v_star = vi_q_star(P, C, mdp.admissible_mask, gamma)
    vi = value_iteration(mdp, gamma, 1e-10)
    np.testing.assert_allclose(vi.values, v_star, atol=1e-8)
    pi = policy_iteration(mdp, gamma)
    np.testing.assert_allclose(pi.values, v_star, atol=1e-8)
    assert bellman_residual(mdp, pi.values, gamma) <= 1e-9


def test_policy_iteration_keeps_incumbent_on_ties():
    P = np.zeros((1, 2, 1))
    P[0, :, 0] = 1.0
    res = policy_iteration(FiniteMdp(P, np.ones((1, 2))), 0.9, pi0=np.array([1]))
    assert res.policy[0] == 1


def test_discount_range_checked():
    mdp = random_finite_mdp(np.random.default_rng(0), 3, 2, None)
    for g in (0.0, 1.0, 1.5):
        with pytest.raises(ValidationError):
            value_iteration(mdp, g, 1e-6)


def test_exact_evaluation_vs_monte_carlo():
    rng = np.random.default_rng(4)
    mdp = random_finite_mdp(rng, 4, 2, None)
    pol = Policy.stationary(np.argmax(mdp.admissible_mask, axis=1))
    V = evaluate_policy_exact(mdp, pol, 0.8)
    mean, se = evaluate_discounted_mc(mdp, pol, 0, 0.8, 4000, np.random.default_rng(9))
    assert abs(mean - V[0]) <= 4 * se


def test_average_cost_of_constant_chain():
    P = np.ones((1, 1, 1))
    mean, se = evaluate_average_mc(FiniteMdp(P, np.full((1, 1), 3.0)), Policy.stationary([0]), 0, 10, 5, np.random.default_rng(0))
    assert mean == pytest.approx(3.0) and se == 0.0


def test_simulate_policy_rejects_inadmissible():
    mdp = medical.mdp_finite()
    death = mdp.state_index((3, 40))
    with pytest.raises(InadmissibleActionError):
        simulate_policy(mdp, Policy.stationary([1] * mdp.n_states), death, np.random.default_rng(0))


def test_stochastic_policy_distribution():
    pol = Policy.stochastic([[0.25, 0.75]])
    rng = np.random.default_rng(0)
    draws = [pol.sample(0, 0, rng) for _ in range(4000)]
    assert abs(np.mean(draws) - 0.75) < 0.03


def test_json_roundtrip(tmp_path):
    mdp = medical.mdp_finite()
    mdp.to_json(tmp_path / "m.json")
    back = FiniteMdp.from_json(tmp_path / "m.json")
    assert back.states == mdp.states
    np.testing.assert_array_equal(backward_induction(back).values, backward_induction(mdp).values)


def test_medical_mdp_structure():
    mdp = medical.mdp_finite()
    assert mdp.n_states == 82 and mdp.horizon == 160
    assert validate(mdp, [mdp.state_index((0, 0))]).ok
    q = q_from_v(mdp, backward_induction(mdp).values[1], t=0)
    assert np.isfinite(q[mdp.state_index((0, 0))]).all()
