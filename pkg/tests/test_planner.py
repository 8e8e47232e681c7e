import json

import numpy as np
import pytest

from bmrl.chainworld import AiAction, ChainworldParams, apply_intervention, human_step, softmax_policy
from bmrl.harness import ExperimentConfig, sample_human
from bmrl.planner import (AiConfig, AiPolicyTable, ai_dropout_values, ai_equivalent, ai_goal_values,
                          ai_threshold, build_ai_mdp, chainworld_with_thresholds, policy_dump,
                          policy_dump_json, solve_ai, three_window_policy, threshold_summary,
                          window_structure)
from bmrl.worlds import ChainWorld

CFG = AiConfig()


def human(**kw):
    base = dict(n_states=10, r_b=-0.5, r_l=-0.5, r_g=10.0, r_d=0.5, p_g=1.0, p_l=0.2, p_d=0.2,
                p_d0=0.3, gamma=0.5, delta_gamma=0.3, delta_b=0.4)
    base.update(kw)
    return ChainworldParams(**base)


def sampled(n, seed=0, **kw):
    rng = np.random.default_rng(seed)
    cfg = ExperimentConfig(**kw)
    return [sample_human(cfg, rng) for _ in range(n)]


def exact_chain_actions(theta, tau=None, cfg=CFG):
    _, table = solve_ai(build_ai_mdp(ChainWorld(theta, tau=tau), cfg))
    return table.by_human_state()[: theta.n_states]


# --- AI MDP construction


def test_config_validation():
    with pytest.raises(ValueError, match="r_intervene"):
        AiConfig(r_intervene=0.0)
    with pytest.raises(ValueError, match="gamma_ai"):
        AiConfig(gamma_ai=1.0)


def test_rows_stochastic_small_chain():
    ai = build_ai_mdp(ChainWorld(human(n_states=2)), CFG)
    assert ai.mdp.check_stochastic()
    assert ai.mdp.n_states == 4 * 2 + 1


def test_state_cap():
    with pytest.raises(ValueError, match="cap"):
        build_ai_mdp(ChainWorld(human(n_states=50)), CFG, max_states=50)


def test_acting_human_moves_forward_under_noop():
    th = human(r_b=0.0, r_l=0.0, r_d=0.0, gamma=0.3)
    ai = build_ai_mdp(ChainWorld(th), CFG)
    A = 2
    for s in range(th.n_states):
        row = ai.mdp.P[AiAction.NOOP, s * A]
        acted = sum(row[s2 * A + 1] for s2 in range(th.n_states + 2))
        assert acted == pytest.approx(1.0)


def test_rewards_priority():
    th = human()
    ai = build_ai_mdp(ChainWorld(th), CFG)
    N, A = th.n_states, 2
    assert ai.mdp.terminal_value[N * A] == CFG.r_goal
    assert ai.mdp.terminal_value[(N + 1) * A] == CFG.r_disengage
    assert ai.mdp.R[AiAction.GAMMA, 0] == CFG.r_intervene
    assert ai.mdp.R[AiAction.NOOP, 0] == CFG.r_step


def test_tensor_matches_monte_carlo():
    th = ChainworldParams(n_states=5, r_b=-0.5, r_l=-0.3, r_g=8.0, r_d=0.4, p_g=0.7, p_l=0.2, p_d=0.2,
                          p_d0=0.3, gamma=0.8, delta_gamma=0.3, delta_b=0.4)
    tau = 0.3
    ai = build_ai_mdp(ChainWorld(th, tau=tau), CFG)
    rng = np.random.default_rng(0)
    N, A = th.n_states, 2
    per_cell = 1_000_000 // (N * 3)
    for x in AiAction:
        pi = softmax_policy(apply_intervention(th, x), tau)
        for s in range(N):
            acts = (rng.random(per_cell) < pi[s, 1]).astype(int)
            counts = np.zeros(ai.mdp.n_states)
            for a in acts:
                s2, _ = human_step(th, s, int(a), rng)
                counts[s2 * A + a] += 1
            est = counts / per_cell
            assert np.max(np.abs(est - ai.mdp.P[x, s * A])) < 0.01


# --- solving and the three windows


def test_zero_effect_interventions_all_noop():
    th = human(delta_gamma=0.0, delta_b=0.0)
    assert np.all(exact_chain_actions(th) == AiAction.NOOP)
    table, _ = three_window_policy(th, CFG)
    assert np.all(table.actions == AiAction.NOOP)


def test_solve_ai_matches_three_window_on_random_humans():
    for th in sampled(200, seed=1):
        table, _ = three_window_policy(th, CFG)
        exact = exact_chain_actions(th)
        assert np.array_equal(exact, table.by_human_state()[: th.n_states])
        assert window_structure(exact)


def test_solve_ai_rejects_bad_tol():
    with pytest.raises(ValueError):
        solve_ai(build_ai_mdp(ChainWorld(human()), CFG), tol=0)


def test_policy_ignores_previous_action():
    for th in sampled(30, seed=2):
        _, table = solve_ai(build_ai_mdp(ChainWorld(th), CFG))
        table.by_human_state()  # raises if prev action matters


def test_summary_and_window_bounds():
    for th in sampled(100, seed=3):
        table, ts = three_window_policy(th, CFG)
        assert ts.t_min == min(ts.t0, ts.t_gamma, ts.t_b)
        acts = table.by_human_state()[: th.n_states]
        n = np.arange(th.n_states)
        assert np.all(acts[n <= max(ts.t_min, ts.t_ai)] == 0)
        assert np.all(acts[n > ts.t0] == 0)


def test_ai_threshold_free_help():
    cfg = AiConfig(r_intervene=-1e-9, r_disengage=-1e6)
    th = human(p_d=0.3, p_d0=0.4)
    assert ai_threshold(th, cfg) == -1


def test_ai_threshold_nothing_to_gain():
    cfg = AiConfig(r_goal=0.0, r_disengage=0.0, r_intervene=-1.0, r_step=0.0)
    th = human()
    assert ai_threshold(th, cfg) == th.n_states - 1


def test_ai_threshold_is_crossover_of_closed_forms():
    for th in sampled(100, seed=4):
        g, d = ai_goal_values(th, CFG), ai_dropout_values(th, CFG)
        below = [n for n in range(th.n_states) if g[n] <= d[n] + 1e-9 * max(1, abs(d[n]))]
        assert ai_threshold(th, CFG) == (below[-1] if below else -1)


def test_closed_form_ai_values_match_solver():
    # a human who acts everywhere under gamma: intervening up to t0 costs exactly ai_goal_values
    for th in sampled(40, seed=5):
        ts = threshold_summary(th, CFG)
        if ts.t_gamma != -1 or ts.t0 < 0 or ts.t_b != -1:
            continue
        ai = build_ai_mdp(ChainWorld(th), CFG)
        from bmrl.mdp import evaluate_policy

        acts = np.where(np.arange(th.n_states) <= ts.t0, AiAction.GAMMA, AiAction.NOOP)
        table = AiPolicyTable.from_human_state_actions(acts, th.n_states + 2, 2)
        v = evaluate_policy(ai.mdp, table.actions)
        assert np.allclose(v[0: 2 * th.n_states: 2], ai_goal_values(th, CFG), atol=1e-8)


def test_dropout_value_constant_under_defaults():
    for th in sampled(20, seed=6):
        assert np.allclose(ai_dropout_values(th, CFG), CFG.r_disengage)


def test_burden_level_changes_ai_policy():
    a = exact_chain_actions(human(gamma=0.1, r_b=-2.0))
    b = exact_chain_actions(human(gamma=0.1, r_b=-0.3))
    assert not np.array_equal(a, b)
    assert AiAction.BURDEN in set(b.tolist())


def test_policy_dump_labels():
    dump = policy_dump([0, 1, 2, 0])
    assert [s["action"] for s in dump["states"]] == ["none", "a_gamma", "a_b", "none"]
    _, ts = three_window_policy(human(), CFG)
    assert json.loads(policy_dump_json([0, 2], ts))["thresholds"]["t0"] == ts.t0


@pytest.mark.parametrize("t0,tg,tb", [(4, 2, -1), (5, 5, 1), (3, -1, 2), (6, 3, 3), (-1, -1, -1), (2, 2, 2)])
def test_thresholds_are_expressible(t0, tg, tb):
    th = chainworld_with_thresholds(8, t0, tg, tb)
    ts = threshold_summary(th, CFG)
    assert (ts.t0, ts.t_gamma, ts.t_b) == (t0, min(tg, t0), min(tb, t0))
    table, _ = three_window_policy(th, CFG)
    assert np.array_equal(exact_chain_actions(th), table.by_human_state()[:8])


def test_softmax_human_policy_solved():
    th = human()
    acts = exact_chain_actions(th, tau=0.1)
    assert acts.shape == (10,)


# --- equivalence


def test_identity_equivalence():
    th = sampled(1)[0]
    w = ChainWorld(th)
    m = w.identity_mapping()
    assert ai_equivalent(w, w, m.f, m.g, CFG).equivalent


def test_equivalence_rejects_bad_maps():
    w = ChainWorld(human())
    m = w.identity_mapping()
    with pytest.raises(ValueError, match="state map"):
        ai_equivalent(w, w, m.f[:-1], m.g, CFG)
    f = m.f.copy()
    f[0] = 3
    with pytest.raises(ValueError, match="start"):
        ai_equivalent(w, w, f, m.g, CFG)


def test_equivalence_detects_different_humans():
    # unreachable disagreements do not count, so pick humans that differ at the start
    a = human(gamma=0.7, r_b=-0.5)
    b = a.replace(delta_b=0.0, delta_gamma=0.0)
    assert exact_chain_actions(a)[0] != exact_chain_actions(b)[0]
    m = ChainWorld(a).identity_mapping()
    rep = ai_equivalent(ChainWorld(a), ChainWorld(b), m.f, m.g, CFG)
    assert not rep.equivalent and rep.mismatches
