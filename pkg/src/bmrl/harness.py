"""Trial/episode loops, human sampling, helpless filtering and result tables."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .chainworld import ChainworldParams
from .estimators import (ChainworldAgent, FitConfig, ModelBasedAgent, QLearningAgent, RandomAgent,
                         TrajectoryLog, always_burden, always_gamma, oracle_agent)
from .mdp import hitting_probability
from .planner import AiConfig, build_ai_mdp, solve_ai
from .worlds import (ChainWorld, GridWorld, GridWorldSpec, NoiseConfig, NoisyParamWorld,
                     grid_chain_mapping)

ESTIMATORS = ("oracle", "chainworld", "model_based", "model_free", "always_gamma", "always_burden", "random")
WORLD_KINDS = ("chain", "noisy", "softmax", "grid")

CHAIN_RANGES = {"r_b": (-1.0, -0.2), "r_d": (0.0, 1.0), "r_l": (-1.0, 0.0), "r_g": (5.0, 15.0),
                "gamma": (0.01, 0.99), "p_d": (0.1, 0.5), "p_l": (0.0, 0.4)}


@dataclass
class ExperimentConfig:
    condition: str = "perfect-conditions"
    world: str = "chain"
    n_states: int = 10
    width: int = 8
    height: int = 5
    goal_offset: int = 0
    mapping_axis: str = "disengage"
    noise_param: str | None = None
    epsilon: float = 0.0
    tau: float | None = None
    n_trials: int = 200
    n_episodes: int = 15
    estimators: tuple = ESTIMATORS
    p_g: float = 1.0
    delta_gamma: float = 0.3
    delta_b: float = 0.4
    filter_helpless: bool = True
    seed: int = 0
    n_candidates: int = 5000
    q_learning_rate: float = 0.9
    q_epsilon: float = 0.1
    plan_with: str = "softmax"
    ai: dict = field(default_factory=dict)

    def __post_init__(self):
        errs = []
        if self.world not in WORLD_KINDS:
            errs.append(f"world: must be one of {WORLD_KINDS}, got {self.world!r}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            errs.append(f"estimators: unknown {bad}")
        for k in ("n_trials", "n_episodes", "n_states", "width", "height", "n_candidates"):
            if int(getattr(self, k)) < 1:
                errs.append(f"{k}: must be >= 1, got {getattr(self, k)!r}")
        if not 0 <= self.epsilon <= 1 and self.world == "noisy":
            errs.append(f"epsilon: must lie in [0, 1], got {self.epsilon!r}")
        if self.world == "noisy" and self.noise_param is None:
            errs.append("noise_param: required for noisy worlds")
        if self.world == "softmax" and not (self.tau and self.tau > 0):
            errs.append("tau: softmax worlds need tau > 0")
        if self.world == "grid" and not 0 <= self.goal_offset < self.height:
            errs.append(f"goal_offset: must lie in [0, {self.height - 1}]")
        if self.mapping_axis not in ("disengage", "goal"):
            errs.append(f"mapping_axis: must be 'disengage' or 'goal', got {self.mapping_axis!r}")
        if not 0 <= self.p_g <= 1:
            errs.append(f"p_g: must lie in [0, 1], got {self.p_g!r}")
        try:
            AiConfig(**self.ai)
        except (TypeError, ValueError) as e:
            errs.append(f"ai: {e}")
        if errs:
            raise ValueError("; ".join(errs))
        self.estimators = tuple(self.estimators)

    @property
    def ai_config(self) -> AiConfig:
        return AiConfig(**self.ai)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["estimators"] = list(self.estimators)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown field(s): {', '.join(unknown)}")
        return cls(**data)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def sample_human(cfg: ExperimentConfig, rng: np.random.Generator):
    """Draw one human: a ChainworldParams for chain-like worlds, a GridWorldSpec for grids."""
    u = lambda lo, hi: float(rng.uniform(lo, hi))
    if cfg.world == "grid":
        X, Y = cfg.width, cfg.height
        return GridWorldSpec(width=X, height=Y, r_b=u(-1.0, -0.2), gamma=u(0.01, 0.99),
                             move_prob=u(0.5, 1.0), r_g=u(5 * X / 8, 10 * X / 8), r_d=u(0.0, Y / 5),
                             delta_gamma=cfg.delta_gamma, delta_b=cfg.delta_b,
                             goal_pos=(X - 1, cfg.goal_offset))
    r = {k: u(*v) for k, v in CHAIN_RANGES.items()}
    r["p_d0"] = u(r["p_d"], 0.5)
    return ChainworldParams(n_states=cfg.n_states, p_g=cfg.p_g, delta_gamma=cfg.delta_gamma,
                            delta_b=cfg.delta_b, **r)


def make_world(cfg: ExperimentConfig, human):
    """(world, chain mapping used by the chainworld estimator)."""
    if cfg.world == "grid":
        w = GridWorld(human)
        return w, grid_chain_mapping(w, by=cfg.mapping_axis, strict=False)
    if cfg.world == "noisy":
        w = NoisyParamWorld(human, NoiseConfig(cfg.noise_param, cfg.epsilon))
        return w, w.identity_mapping()
    w = ChainWorld(human, tau=cfg.tau if cfg.world == "softmax" else None)
    return w, w.identity_mapping()


def reference_world(cfg: ExperimentConfig, human):
    """Noise-free optimal human with the sampled parameters; helplessness is judged here."""
    if cfg.world == "grid":
        return GridWorld(human)
    return ChainWorld(human)


def goal_probability(world, table, cfg: AiConfig) -> float:
    """Chance of ever reaching the goal from the episode start under an AI policy table."""
    ai = build_ai_mdp(world, cfg)
    P = ai.mdp.P[table.actions, np.arange(ai.mdp.n_states)]
    goal = np.append(np.repeat(world.goal_mask, world.n_actions), False)
    return float(hitting_probability(P, goal)[ai.sentinel])


def is_helpless(world, cfg: AiConfig) -> bool:
    """True when even the optimal AI policy never gets this human to the goal."""
    _, table = solve_ai(build_ai_mdp(world, cfg))
    return goal_probability(world, table, cfg) <= 0.0


def run_episode(world, agent, cfg: AiConfig, log: TrajectoryLog, episode: int,
                env_rng: np.random.Generator, agent_rng: np.random.Generator) -> float:
    A = world.n_actions
    i, s = log.sentinel, world.start
    total = 0.0
    for step in range(cfg.max_steps):
        x = agent.act(i, agent_rng)
        a, s2 = world.sample(s, x, env_rng)
        r = cfg.r_step if x == 0 else cfg.r_intervene
        done = bool(world.terminal_mask[s2])
        if done:
            r += cfg.r_goal if world.goal_mask[s2] else cfg.r_disengage
        j = s2 * A + a
        log.append(episode, step, i, x, r, j)
        agent.observe(i, x, r, j, done)
        total += r
        if done:
            break
        i, s = j, s2
    return total


def make_agent(name: str, world, mapping, cfg: ExperimentConfig, rng: np.random.Generator):
    ai = cfg.ai_config
    if name == "oracle":
        return oracle_agent(world, ai)
    if name == "chainworld":
        return ChainworldAgent(world, mapping, ai, FitConfig(n_candidates=cfg.n_candidates), rng,
                               plan_with=cfg.plan_with)
    if name == "model_based":
        return ModelBasedAgent(world, ai)
    if name == "model_free":
        return QLearningAgent(world.n_states * world.n_actions + 1, ai.gamma_ai,
                              cfg.q_learning_rate, cfg.q_epsilon)
    if name == "always_gamma":
        return always_gamma()
    if name == "always_burden":
        return always_burden()
    if name == "random":
        return RandomAgent()
    raise ValueError(f"unknown estimator {name!r}")


@dataclass
class TrialResult:
    trial: int
    human: dict
    helpless: bool
    rewards: dict  # estimator -> list of episode rewards

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def run_trial(cfg: ExperimentConfig, trial: int, estimators=None) -> TrialResult:
    """One sampled human, every requested estimator, ``n_episodes`` each."""
    estimators = cfg.estimators if estimators is None else estimators
    human_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, trial, 0]))
    human = sample_human(cfg, human_rng)
    world, mapping = make_world(cfg, human)
    ai = cfg.ai_config
    helpless = is_helpless(reference_world(cfg, human), ai)
    rewards = {}
    for name in estimators:
        k = ESTIMATORS.index(name) + 1  # canonical index keeps streams stable across subsets
        ss = np.random.SeedSequence([cfg.seed, trial, k])
        env_rng, agent_rng, init_rng = (np.random.default_rng(c) for c in ss.spawn(3))
        agent = make_agent(name, world, mapping, cfg, init_rng)
        log = TrajectoryLog(world.n_states, world.n_actions, world.start)
        ep = []
        for e in range(cfg.n_episodes):
            ep.append(run_episode(world, agent, ai, log, e, env_rng, agent_rng))
            agent.end_episode(log)
        rewards[name] = ep
    return TrialResult(trial=trial, human=dataclasses.asdict(human), helpless=helpless, rewards=rewards)


@dataclass
class SuiteResult:
    config: ExperimentConfig
    trials: list

    def kept(self) -> list:
        if not self.config.filter_helpless:
            return list(self.trials)
        return [t for t in self.trials if not t.helpless]

    def rewards(self, estimator: str) -> np.ndarray:
        """(n_kept_trials, n_episodes) reward matrix."""
        rows = [t.rewards[estimator] for t in self.kept()]
        return np.asarray(rows, dtype=float).reshape(len(rows), self.config.n_episodes)

    def summary(self, estimator: str, episode: int) -> tuple[float, float, int]:
        """(mean, standard error, n) at a 1-indexed episode."""
        x = self.rewards(estimator)[:, episode - 1]
        n = x.size
        if n == 0:
            return float("nan"), float("nan"), 0
        se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return float(np.mean(x)), se, n

    def rows(self) -> list:
        out = []
        for est in self.config.estimators:
            for e in range(1, self.config.n_episodes + 1):
                m, se, n = self.summary(est, e)
                out.append({"condition": self.config.condition, "estimator": est, "episode": e,
                            "mean": m, "se": se, "n": n})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "estimator", "episode", "mean", "se", "n"])
        for r in self.rows():
            w.writerow([r["condition"], r["estimator"], r["episode"],
                        f"{r['mean']:.6f}", f"{r['se']:.6f}", r["n"]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"config": self.config.to_dict(), "rows": self.rows()},
                          indent=2, sort_keys=True) + "\n"


def _trial_job(args):
    cfg_dict, trial = args
    return run_trial(ExperimentConfig.from_dict(cfg_dict), trial)


def default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def run_suite(cfg: ExperimentConfig, jobs: int = 1) -> SuiteResult:
    """All trials of one condition. Output depends only on the config (including its seed)."""
    trials = range(cfg.n_trials)
    if jobs > 1 and cfg.n_trials > 1:
        d = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_trial_job, [(d, t) for t in trials], chunksize=4))
    else:
        results = [run_trial(cfg, t) for t in trials]
    results.sort(key=lambda r: r.trial)
    return SuiteResult(config=cfg, trials=results)


def manifest(cfg: ExperimentConfig, outputs: list) -> dict:
    return {"config_sha256": cfg.digest(), "seed": cfg.seed, "version": __version__,
            "condition": cfg.condition, "outputs": sorted(outputs)}


def interval(mean: float, se: float) -> tuple[float, float]:
    return mean - 2 * se, mean + 2 * se


def overlaps(a: tuple, b: tuple) -> bool:
    """Whether two (mean, se) pairs have overlapping 2-SE intervals."""
    lo1, hi1 = interval(*a[:2])
    lo2, hi2 = interval(*b[:2])
    return lo1 <= hi2 and lo2 <= hi1


BASELINES = ("model_based", "model_free", "always_gamma", "always_burden", "random")


def top_baseline(result: SuiteResult, episode: int) -> tuple[str, tuple]:
    """Best-mean baseline at an episode, with its (mean, se, n)."""
    best = None
    for b in BASELINES:
        if b in result.config.estimators:
            s = result.summary(b, episode)
            if best is None or s[0] > best[1][0]:
                best = (b, s)
    if best is None:
        raise ValueError("no baseline estimators in this result")
    return best
