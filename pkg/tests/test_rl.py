import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import random_finite_mdp

from pdmp_mdp.dp import backward_induction
from pdmp_mdp.errors import ValidationError
from pdmp_mdp.mdp import FiniteMdp
from pdmp_mdp.rl import GenerativeModel, default_depth, mcts_plan, mcts_search, q_learning, uct_score


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_from_mdp_sampling_matches_rows(seed):
    rng = np.random.default_rng(seed)
    mdp = random_finite_mdp(rng, 3, 2, 2, support=3)
    gen = GenerativeModel.from_mdp(mdp)
    a = int(gen.admissible((0, 0))[0])
    n = 3000
    counts = np.zeros(3)
    for _ in range(n):
        (t, s2), _ = gen.step((0, 0), a, rng)
        counts[s2] += 1
        assert t == 1
    p = mdp.transition_row(0, a)
    assert np.all(np.abs(counts / n - p) <= 4 * np.sqrt(p * (1 - p) / n) + 1e-12)


def test_uct_score_orders_by_cost_and_bonus():
    class Child:
        def __init__(self, nu, q):
            self.nu, self.q = nu, q

    with pytest.raises(ValidationError):
        uct_score(10, Child(0, 0.0), 1.0)
    assert uct_score(10, Child(5, 1.0), 1.0) == pytest.approx(1.0 - math.sqrt(math.log(10) / 5))
    assert uct_score(10, Child(2, 1.0), 1.0) < uct_score(10, Child(8, 1.0), 1.0)
    assert uct_score(10, Child(5, 1.0), 1.0) < uct_score(10, Child(5, 2.0), 1.0)


def test_default_depth():
    gen = GenerativeModel(step=lambda s, a, r: (s, 0.0), admissible=lambda s: [0])
    assert default_depth(gen, 0.5, 1e-3) == 10
    with pytest.raises(ValidationError):
        default_depth(gen, 1.0, 1e-3)


def test_q_learning_on_deterministic_two_state_chain():
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = P[0, 1, 0] = P[1, :, 1] = 1.0
    c = np.array([[1.0, 2.0], [0.0, 0.0]])
    gen = GenerativeModel.from_mdp(FiniteMdp(P, c))
    q = q_learning(gen, 0.5, 0.5, 0.5, 400, 5, np.random.default_rng(0))
    # moving to the free absorbing state costs 1; staying costs 2 + 0.5 * 1
    assert q.get(0, 0) == pytest.approx(1.0, abs=1e-6)
    assert q.get(0, 1) == pytest.approx(2.5, abs=1e-6)
    assert q.greedy(0) == 0


def test_mcts_finds_backward_induction_action():
    rng = np.random.default_rng(3)
    mdp = random_finite_mdp(rng, 3, 2, 2, support=2)
    res = backward_induction(mdp)
    gen = GenerativeModel.from_mdp(mdp)
    out = mcts_search(gen, (0, 0), 3000, np.random.default_rng(1))
    assert out.iterations == 3000
    q = {a: s.q for a, s in out.stats.items()}
    exact = mdp.backup(res.values[1], 0)[0]
    for a, v in q.items():
        assert v == pytest.approx(exact[a], abs=0.3)


def test_mcts_deterministic_given_seed():
    mdp = random_finite_mdp(np.random.default_rng(7), 4, 3, 3, support=2)
    gen = GenerativeModel.from_mdp(mdp)
    a = [mcts_plan(gen, (0, 0), 300, np.random.default_rng(11)) for _ in range(2)]
    assert a[0] == a[1]
