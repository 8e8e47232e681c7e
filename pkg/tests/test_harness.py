import numpy as np
import pytest

from bmrl.chainworld import ChainworldParams
from bmrl.estimators import TrajectoryLog, oracle_agent
from bmrl.harness import (CHAIN_RANGES, ExperimentConfig, SuiteResult, TrialResult, goal_probability,
                          is_helpless, make_world, manifest, overlaps, reference_world, run_episode,
                          run_suite, run_trial, sample_human, top_baseline)
from bmrl.planner import AiConfig, build_ai_mdp, solve_ai
from bmrl.worlds import ChainWorld, GridWorldSpec

AI = AiConfig()
SMALL = dict(n_trials=3, n_episodes=3, n_candidates=200)


def theta(**kw):
    base = dict(n_states=6, r_b=-0.4, r_l=-0.5, r_g=10.0, r_d=0.5, p_g=1.0, p_l=0.2, p_d=0.2,
                p_d0=0.3, gamma=0.6, delta_gamma=0.3, delta_b=0.4)
    base.update(kw)
    return ChainworldParams(**base)


def test_sample_human_ranges():
    rng = np.random.default_rng(0)
    cfg = ExperimentConfig()
    draws = [sample_human(cfg, rng) for _ in range(20_000)]
    for k, (lo, hi) in CHAIN_RANGES.items():
        v = np.array([getattr(d, k) for d in draws])
        assert v.min() >= lo and v.max() <= hi
        assert abs(v.mean() - (lo + hi) / 2) < 0.02 * (hi - lo)
    assert all(d.p_d <= d.p_d0 <= 0.5 for d in draws)
    assert all(d.n_states == 10 and d.p_g == 1.0 for d in draws[:10])


def test_sample_grid_human():
    cfg = ExperimentConfig(world="grid", width=8, height=5)
    rng = np.random.default_rng(1)
    specs = [sample_human(cfg, rng) for _ in range(2000)]
    assert all(isinstance(s, GridWorldSpec) for s in specs)
    rg = np.array([s.r_g for s in specs])
    assert rg.min() >= 5 and rg.max() <= 10
    assert max(s.r_d for s in specs) <= 1.0
    assert all(s.goal == (7, 0) for s in specs)


@pytest.mark.parametrize("bad,msg", [(dict(world="hex"), "world"), (dict(estimators=("magic",)), "estimators"),
                                     (dict(n_trials=0), "n_trials"), (dict(world="softmax"), "tau"),
                                     (dict(world="noisy"), "noise_param"), (dict(ai={"gamma_ai": 2}), "ai")])
def test_config_validation(bad, msg):
    with pytest.raises(ValueError, match=msg):
        ExperimentConfig(**bad)


def test_config_round_trip_and_digest():
    cfg = ExperimentConfig(condition="x", seed=4)
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back == cfg and back.digest() == cfg.digest()
    assert ExperimentConfig(seed=5).digest() != cfg.digest()
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"colour": 1})


def test_helpless_examples():
    # the human never acts whatever the AI does
    stuck = theta(r_b=-1.0, gamma=0.01, delta_gamma=0.0, delta_b=0.0)
    assert is_helpless(ChainWorld(stuck), AI)
    assert not is_helpless(ChainWorld(theta(r_b=0.0)), AI)


def test_goal_probability_of_acting_human_is_one():
    w = ChainWorld(theta(r_b=0.0, r_l=0.0, r_d=0.0))
    _, table = solve_ai(build_ai_mdp(w, AI))
    assert goal_probability(w, table, AI) == pytest.approx(1.0)


def test_reference_world_drops_noise():
    cfg = ExperimentConfig(world="noisy", noise_param="r_g", epsilon=0.5)
    th = theta()
    assert type(make_world(cfg, th)[0]).__name__ == "NoisyParamWorld"
    ref = reference_world(cfg, th)
    assert isinstance(ref, ChainWorld) and ref.tau is None


def test_oracle_episode_reaches_goal():
    w = ChainWorld(theta(r_b=0.0))
    log = TrajectoryLog(w.n_states, w.n_actions)
    rng = np.random.default_rng(0)
    total = run_episode(w, oracle_agent(w, AI), AI, log, 0, rng, rng)
    assert w.goal_mask[log.human_state(log.records[-1][5])]
    assert total == pytest.approx(AI.r_goal + AI.r_step * len(log))


def test_episode_truncates_at_max_steps():
    ai = AiConfig(max_steps=5)
    w = ChainWorld(theta(p_g=0.0, p_d=0.0, p_d0=0.0, p_l=0.0))
    log = TrajectoryLog(w.n_states, w.n_actions)
    rng = np.random.default_rng(0)
    run_episode(w, oracle_agent(w, ai), ai, log, 0, rng, rng)
    assert len(log) == 5


def test_run_trial_is_deterministic_and_subset_stable():
    cfg = ExperimentConfig(**SMALL)
    a, b = run_trial(cfg, 1), run_trial(cfg, 1)
    assert a == b
    only = run_trial(cfg, 1, estimators=("random",))
    assert only.rewards["random"] == a.rewards["random"]


def test_suite_jobs_do_not_change_results():
    cfg = ExperimentConfig(**SMALL, estimators=("oracle", "chainworld", "random"))
    assert run_suite(cfg, jobs=1).to_csv() == run_suite(cfg, jobs=2).to_csv()


def test_summary_single_trial_has_zero_se():
    cfg = ExperimentConfig(n_trials=1, n_episodes=2, estimators=("random",), filter_helpless=False)
    res = SuiteResult(cfg, [TrialResult(0, {}, False, {"random": [-3.0, -1.0]})])
    assert res.summary("random", 2) == (-1.0, 0.0, 1)
    assert res.to_csv().splitlines()[1] == "perfect-conditions,random,1,-3.000000,0.000000,1"


def test_helpless_trials_are_filtered():
    cfg = ExperimentConfig(n_trials=2, n_episodes=1, estimators=("random",))
    res = SuiteResult(cfg, [TrialResult(0, {}, True, {"random": [-50.0]}),
                            TrialResult(1, {}, False, {"random": [-2.0]})])
    assert res.summary("random", 1)[0] == -2.0


def test_overlaps_and_top_baseline():
    assert overlaps((0.0, 1.0), (2.9, 0.5))
    assert not overlaps((0.0, 1.0), (2.1, 0.0))
    cfg = ExperimentConfig(n_trials=2, n_episodes=1, estimators=("chainworld", "random", "always_gamma"))
    res = SuiteResult(cfg, [TrialResult(i, {}, False, {"chainworld": [0.0], "random": [-9.0 - i],
                                                       "always_gamma": [-4.0 + i]}) for i in range(2)])
    name, (m, _, n) = top_baseline(res, 1)
    assert name == "always_gamma" and m == pytest.approx(-3.5) and n == 2


def test_manifest_has_no_timestamp():
    m = manifest(ExperimentConfig(), ["a.csv"])
    assert set(m) == {"config_sha256", "seed", "version", "condition", "outputs"}
