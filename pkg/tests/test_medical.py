import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdmp_mdp import medical
from pdmp_mdp.bridge import BridgeAction, BridgeState, Cemetery
from pdmp_mdp.dp import backward_induction
from pdmp_mdp.errors import ValidationError
from pdmp_mdp.pdmp import HybridState


def test_locked_values_cannot_be_overridden():
    with pytest.raises(ValidationError):
        medical.MedicalConfig(horizon=100)
    with pytest.raises(ValidationError):
        medical.MedicalConfig.from_dict({"nonsense": 1})
    with pytest.raises(ValidationError):
        medical.MedicalConfig(relapse_probs=(0.5, 0.5, 0.5))


def test_config_dict_roundtrip():
    cfg = medical.MedicalConfig(obs_sigma=0.3)
    assert medical.MedicalConfig.from_dict(cfg.to_dict()) == cfg


def test_every_variant_builds():
    for name in medical.VARIANTS:
        assert medical.make_variant(name) is not None
    with pytest.raises(ValidationError):
        medical.make_variant("mdp_infinite")


def test_mdp_transitions():
    cfg = medical.MedicalConfig()
    mdp = medical.mdp_finite(cfg)
    idx = medical.mdp_index(cfg)
    row = mdp.transition_row(idx[(0, 0)], 0)
    assert row[idx[(0, 0)]] == pytest.approx(0.9) and row[idx[(1, 0)]] == pytest.approx(0.07) and row[idx[(2, 0)]] == pytest.approx(0.03)
    assert mdp.transition_row(idx[(2, 38)], 0)[idx[(3, 40)]] == 1.0
    assert mdp.transition_row(idx[(1, 1)], 1)[idx[(0, 0)]] == 1.0
    assert not mdp.admissible_mask[idx[(3, 40)], 1]


@given(st.sampled_from([1, 2]), st.integers(0, 39), st.integers(-2, 2))
def test_observation_window(m, z, w):
    cfg = medical.MedicalConfig()
    pomdp = medical.pomdp_discrete(cfg)
    s = medical.mdp_index(cfg)[(m, z)]
    omega = pomdp.obs_index((z + w, 0))
    assert pomdp.obs[s, 0, omega] == pytest.approx(0.2)
    assert medical.noise_index(cfg, z, z + w) == w + 2


def test_death_is_observed():
    cfg = medical.MedicalConfig()
    pomdp = medical.pomdp_discrete(cfg)
    s = medical.mdp_index(cfg)[(3, 40)]
    assert all(pomdp.observations[w][1] == 1 for w in np.flatnonzero(pomdp.obs[s, 0] > 0))


def test_optimal_policy_treats_late_relapse():
    mdp = medical.mdp_finite()
    res = backward_induction(mdp)
    assert res.policy[0, mdp.state_index((2, 30))] == 1
    assert res.policy[0, mdp.state_index((0, 0))] == 0


def test_bridge_full_decision_grid():
    pb = medical.bridge_full()
    assert pb.end_time == 2400.0 and pb.delays == (15.0, 30.0, 60.0)
    s0 = medical.bridge_initial()
    assert len(pb.admissible(s0)) == 6
    late = BridgeState(s0.x, 2370.0)
    assert {a.delay for a in pb.admissible(late)} == {15.0, 30.0}


def test_bridge_death_absorbs():
    pb = medical.bridge_full()
    dead = BridgeState(HybridState.make(3, 10.0, 0.0), 300.0)
    s, c = pb.step(dead, pb.admissible(dead)[0], np.random.default_rng(0))
    assert s == Cemetery(True) and c == 0.0 and pb.terminal_cost(s) == 1000.0


def test_bridge_treatment_shrinks_relapse_marker():
    pb = medical.bridge_full()
    s0 = BridgeState(HybridState.make(1, 5.0, 0.0), 0.0)
    rng = np.random.default_rng(1)
    for _ in range(20):
        s, c = pb.step(s0, BridgeAction(1, 15.0), rng)
        if s.x.mode == 1:
            z = 5.0 * np.exp(-0.05 * 15.0)
            assert s.x.euclid[0] == pytest.approx(z)
            assert c == pytest.approx((5.0 - z) * 15.0 + 1.0 + 5.0)


def test_twin_labels_roundtrip():
    for label in [(0, 0), (1, 7), (2, 39), (3, 40)]:
        assert medical.twin_label(medical.twin_state(label, 5.0)) == label
