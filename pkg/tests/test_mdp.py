import numpy as np
import pytest

from bmrl.mdp import TabularMDP, evaluate_policy, greedy_policy, hitting_probability, policy_iteration, value_iteration


def random_mdp(rng, S=12, A=3, n_term=2):
    P = rng.random((A, S, S)) ** 3
    P /= P.sum(axis=2, keepdims=True)
    term = np.zeros(S, bool)
    term[-n_term:] = True
    for s in np.flatnonzero(term):
        P[:, s] = 0
        P[:, s, s] = 1
    return TabularMDP(P=P, R=rng.normal(size=(A, S)), gamma=0.95, terminal=term,
                      terminal_value=np.where(term, rng.normal(size=S) * 5, 0.0))


def test_policy_iteration_matches_value_iteration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mdp = random_mdp(rng)
        v_pi, p_pi = policy_iteration(mdp)
        v_vi, p_vi = value_iteration(mdp, tol=1e-12)
        assert np.max(np.abs(v_pi - v_vi)) < 1e-8
        assert np.array_equal(p_pi, p_vi)


def test_evaluate_policy_is_a_fixed_point():
    mdp = random_mdp(np.random.default_rng(1))
    pol = np.zeros(mdp.n_states, int)
    v = evaluate_policy(mdp, pol)
    live = ~mdp.terminal
    backup = mdp.q_values(v)[0]
    assert np.allclose(v[live], backup[live])
    assert np.allclose(v[mdp.terminal], mdp.terminal_value[mdp.terminal])


def test_greedy_ties_go_to_lowest_index():
    P = np.tile(np.eye(2), (3, 1, 1))
    mdp = TabularMDP(P=P, R=np.zeros((3, 2)), gamma=0.9, terminal=[False, True], terminal_value=[0, 0])
    assert greedy_policy(mdp, np.zeros(2))[0] == 0


def test_zero_reward_mdp():
    P = np.tile(np.eye(4), (3, 1, 1))
    term = np.array([False, False, False, True])
    mdp = TabularMDP(P=P, R=np.zeros((3, 4)), gamma=0.99, terminal=term, terminal_value=np.zeros(4))
    v, pol = policy_iteration(mdp)
    assert np.allclose(v, 0) and np.all(pol == 0)


def test_shape_and_gamma_validation():
    with pytest.raises(ValueError):
        TabularMDP(P=np.zeros((2, 3, 4)), R=np.zeros((2, 3)), gamma=0.5, terminal=np.zeros(3), terminal_value=np.zeros(3))
    with pytest.raises(ValueError):
        TabularMDP(P=np.zeros((2, 3, 3)), R=np.zeros((2, 3)), gamma=1.0, terminal=np.zeros(3), terminal_value=np.zeros(3))


def test_hitting_probability_gamblers_ruin():
    # fair walk on 0..4 absorbed at both ends: P(hit 4 | start i) = i / 4
    P = np.zeros((5, 5))
    P[0, 0] = P[4, 4] = 1
    for i in range(1, 4):
        P[i, i - 1] = P[i, i + 1] = 0.5
    target = np.zeros(5, bool)
    target[4] = True
    assert np.allclose(hitting_probability(P, target), np.arange(5) / 4)


def test_hitting_probability_unreachable_is_exact_zero():
    P = np.eye(3)
    P[0] = [0.5, 0.5, 0.0]
    target = np.array([False, False, True])
    assert hitting_probability(P, target)[0] == 0.0


def test_hitting_probability_matches_simulation():
    rng = np.random.default_rng(3)
    P = rng.random((6, 6))
    P[4:] = 0
    P[4, 4] = P[5, 5] = 1
    P /= P.sum(axis=1, keepdims=True)
    target = np.zeros(6, bool)
    target[5] = True
    h = hitting_probability(P, target)
    hits = 0
    n = 20_000
    cum = P.cumsum(axis=1)
    for _ in range(n):
        s = 0
        while s < 4:
            s = int(np.searchsorted(cum[s], rng.random()))
        hits += s == 5
    assert abs(hits / n - h[0]) < 0.015
