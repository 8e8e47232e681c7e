"""Online AI-policy learners and the chainworld likelihood fit."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .chainworld import GAMMA_MAX, TIE_TOL, AiAction, ChainworldParams, _log_softmax, q_values_batch
from .mdp import TabularMDP
from .planner import (N_AI_ACTIONS, AiConfig, AiPolicyTable, ai_rewards, build_ai_mdp,
                      solve_ai, three_window_policy)
from .worlds import ChainMapping, ChainWorld

# chain transition events
STAY, ADVANCE, REGRESS, DROPOUT = range(4)


@dataclass
class TrajectoryLog:
    """AI-level transitions of one trial. States are AI indices (sentinel = last)."""

    n_human: int
    n_human_actions: int
    start: int = 0
    records: list = field(default_factory=list)  # (episode, step, s, x, r, s_next)

    @property
    def sentinel(self) -> int:
        return self.n_human * self.n_human_actions

    def append(self, episode: int, step: int, state: int, action: int, reward: float, next_state: int):
        if self.records:
            e, _, _, _, _, prev_next = self.records[-1]
            if e == episode and prev_next != state:
                raise ValueError("transition does not continue from the previous next state")
        self.records.append((int(episode), int(step), int(state), int(action), float(reward), int(next_state)))

    def __len__(self):
        return len(self.records)

    def human_state(self, ai_state: int) -> int:
        return self.start if ai_state == self.sentinel else ai_state // self.n_human_actions

    def to_jsonl(self) -> str:
        keys = ("episode", "step", "state", "action", "reward", "next_state")
        return "".join(json.dumps(dict(zip(keys, r))) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str, n_human: int, n_human_actions: int, start: int = 0) -> "TrajectoryLog":
        log = cls(n_human, n_human_actions, start)
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                log.append(d["episode"], d["step"], d["state"], d["action"], d["reward"], d["next_state"])
        return log


# --------------------------------------------------------------------------- chainworld fit

@dataclass(frozen=True)
class FitConfig:
    n_candidates: int = 5000
    seed: int = 0
    r_b: tuple = (-1.0, 0.0)
    r_d: tuple = (0.0, 5.0)
    r_l: tuple = (-5.0, 0.0)
    r_g: tuple = (5.0, 50.0)
    gamma: tuple = (0.01, 0.99)
    p_g: tuple = (0.0, 1.0)
    p_d0: tuple = (0.0, 1.0)
    tau: tuple = (0.01, 0.3)
    delta_gamma: tuple = (0.0, 1.0)
    delta_b: tuple = (0.0, 1.0)
    helpable_only: bool = True  # drop candidates no intervention can move to act everywhere

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")


def chain_counts(log: TrajectoryLog, mapping: ChainMapping):
    """Event counts C[x, n, b, event] over chain states, plus the number of skipped tuples.

    Tuples whose mapped move cannot happen in any chainworld (e.g. an act that
    loses progress) are skipped.
    """
    N = mapping.theta.n_states
    C = np.zeros((N_AI_ACTIONS, N, 2, 4))
    skipped = 0
    f, g, A = mapping.f, mapping.g, log.n_human_actions
    for _, _, i, x, _, j in log.records:
        s = log.human_state(i)
        s2, a2 = divmod(j, A)
        n, b, m = int(f[s]), int(g[s, a2]), int(f[s2])
        if m == N:
            e = ADVANCE
        elif m == N + 1:
            e = DROPOUT
        else:
            e = ADVANCE if m > n else STAY if m == n else REGRESS
        ok = e in (STAY, ADVANCE) if b == 1 else (e != ADVANCE and not (n == 0 and e == REGRESS))
        if not ok or n >= N:
            skipped += 1
            continue
        C[x, n, b, e] += 1
    return C, skipped


class CandidateSet:
    """Sampled chainworld parameter vectors with precomputed log-likelihood tables."""

    fields = ("r_b", "r_l", "r_g", "r_d", "p_g", "p_l", "p_d", "p_d0", "gamma",
              "delta_gamma", "delta_b", "tau")

    def __init__(self, n_states: int, params: dict):
        self.n_states = n_states
        self.params = {k: np.asarray(params[k], dtype=float) for k in self.fields}
        self.size = self.params["tau"].size
        self._tables()

    @classmethod
    def sample(cls, n_states: int, cfg: FitConfig, rng: np.random.Generator) -> "CandidateSet":
        K = cfg.n_candidates
        u = lambda lo_hi: rng.uniform(lo_hi[0], lo_hi[1], size=K)
        out = {k: u(getattr(cfg, k)) for k in ("r_b", "r_d", "r_l", "r_g", "gamma", "p_g", "p_d0",
                                              "tau", "delta_gamma", "delta_b")}
        a, b = rng.random(K), rng.random(K)
        flip = a + b > 1
        a[flip], b[flip] = 1 - a[flip], 1 - b[flip]
        out["p_d"], out["p_l"] = a, b
        return cls(n_states, out)

    @classmethod
    def single(cls, theta: ChainworldParams, tau: float) -> "CandidateSet":
        d = theta.to_dict()
        d["tau"] = tau
        return cls(theta.n_states, {k: [d[k]] for k in cls.fields})

    def theta(self, k: int) -> tuple[ChainworldParams, float]:
        d = {name: float(v[k]) for name, v in self.params.items()}
        tau = d.pop("tau")
        return ChainworldParams(n_states=self.n_states, **d), tau

    def _tables(self):
        P = self.params
        N = self.n_states
        logpi = np.empty((self.size, N_AI_ACTIONS, N, 2))
        acts_everywhere = np.zeros((self.size, N_AI_ACTIONS), dtype=bool)
        for x in AiAction:
            g, rb = P["gamma"], P["r_b"]
            if x == AiAction.GAMMA:
                g = np.clip(g + P["delta_gamma"], 0.0, GAMMA_MAX)
            elif x == AiAction.BURDEN:
                rb = np.minimum(rb + P["delta_b"], 0.0)
            q = q_values_batch(N, rb, P["r_l"], P["r_g"], P["r_d"], P["p_g"], P["p_l"],
                               P["p_d"], P["p_d0"], g)
            logpi[:, x] = _log_softmax(q / P["tau"][:, None, None])
            margin = TIE_TOL * np.maximum(1.0, np.abs(q[..., 0]))
            acts_everywhere[:, x] = np.all(q[..., 1] > q[..., 0] + margin, axis=1)
        prob = np.zeros((self.size, N, 2, 4))
        prob[:, :, 1, ADVANCE] = P["p_g"][:, None]
        prob[:, :, 1, STAY] = 1 - P["p_g"][:, None]
        prob[:, 1:, 0, DROPOUT] = P["p_d"][:, None]
        prob[:, 1:, 0, REGRESS] = P["p_l"][:, None]
        prob[:, 1:, 0, STAY] = (1 - P["p_d"] - P["p_l"])[:, None]
        prob[:, 0, 0, DROPOUT] = P["p_d0"]
        prob[:, 0, 0, STAY] = 1 - P["p_d0"]
        with np.errstate(divide="ignore"):
            self.logT = np.log(np.clip(prob, 0.0, None))
        self.logpi = logpi
        # a candidate the AI could walk to the goal under an optimal human
        self.helpable = acts_everywhere.any(axis=1) & (P["p_g"] > 0)

    def log_likelihoods(self, counts: np.ndarray) -> np.ndarray:
        """Log-likelihood of the count tensor under every candidate (-inf if impossible)."""
        act = counts.sum(axis=3)  # (x, n, b)
        with np.errstate(invalid="ignore"):
            lp = np.where(act > 0, act * self.logpi, 0.0).sum(axis=(1, 2, 3))
            move = counts.sum(axis=0)  # (n, b, e)
            lt = np.where(move > 0, move * self.logT, 0.0).sum(axis=(1, 2, 3))
        return lp + lt


def log_likelihood(theta: ChainworldParams, tau: float, data: TrajectoryLog,
                   mapping: ChainMapping | None = None) -> float:
    """Log-probability of the logged human moves under a softmax chainworld human."""
    if not data.records:
        return 0.0
    if mapping is None:
        S = theta.n_states + 2
        mapping = ChainMapping(f=np.arange(S), g=np.tile(np.arange(2), (S, 1)), theta=theta)
    counts, _ = chain_counts(data, mapping)
    return float(CandidateSet.single(theta, tau).log_likelihoods(counts)[0])


@dataclass
class FitResult:
    theta: ChainworldParams
    tau: float
    log_likelihood: float
    index: int

    def to_dict(self) -> dict:
        return {"theta": self.theta.to_dict(), "tau": self.tau,
                "log_likelihood": self.log_likelihood, "index": self.index}


def fit_chainworld(data: TrajectoryLog, cfg: FitConfig, mapping: ChainMapping,
                   candidates: CandidateSet | None = None) -> FitResult:
    """Best of the sampled candidates by likelihood; ties go to the first sampled."""
    if candidates is None:
        candidates = CandidateSet.sample(mapping.theta.n_states, cfg, np.random.default_rng(cfg.seed))
    counts, _ = chain_counts(data, mapping)
    ll = candidates.log_likelihoods(counts)
    if cfg.helpable_only and candidates.helpable.any():
        ll = np.where(candidates.helpable, ll, -np.inf)
    k = int(np.argmax(ll))
    theta, tau = candidates.theta(k)
    return FitResult(theta=theta, tau=tau, log_likelihood=float(ll[k]), index=k)


# --------------------------------------------------------------------------- agents

class Agent:
    """Online AI policy. ``act`` is called each step, ``end_episode`` after each episode."""

    name = "agent"

    def act(self, ai_state: int, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def observe(self, state: int, action: int, reward: float, next_state: int, terminal: bool):
        pass

    def end_episode(self, log: TrajectoryLog):
        pass


class TableAgent(Agent):
    def __init__(self, table: AiPolicyTable):
        self.table = table

    def act(self, ai_state, rng):
        return int(self.table.actions[ai_state])


class FixedAgent(Agent):
    def __init__(self, action: AiAction, name: str):
        self.action, self.name = int(action), name

    def act(self, ai_state, rng):
        return self.action


class RandomAgent(Agent):
    name = "random"

    def act(self, ai_state, rng):
        return int(rng.integers(N_AI_ACTIONS))


def always_gamma() -> FixedAgent:
    return FixedAgent(AiAction.GAMMA, "always_gamma")


def always_burden() -> FixedAgent:
    return FixedAgent(AiAction.BURDEN, "always_burden")


def oracle_agent(world, cfg: AiConfig) -> TableAgent:
    """Exact optimal policy for the true world (simulation only)."""
    _, table = solve_ai(build_ai_mdp(world, cfg))
    agent = TableAgent(table)
    agent.name = "oracle"
    return agent


class ChainworldAgent(Agent):
    """Fits a chainworld by likelihood after every episode and plays its three-window policy."""

    name = "chainworld"

    def __init__(self, world, mapping: ChainMapping, cfg: AiConfig, fit: FitConfig,
                 rng: np.random.Generator, plan_with: str = "softmax"):
        if plan_with not in ("softmax", "optimal"):
            raise ValueError("plan_with must be 'softmax' or 'optimal'")
        self.world, self.mapping, self.cfg, self.fit_cfg = world, mapping, cfg, fit
        self.plan_with = plan_with
        self.candidates = CandidateSet.sample(mapping.theta.n_states, fit, rng)
        self.fit = None
        self._plan(fit_chainworld(TrajectoryLog(world.n_states, world.n_actions, world.start),
                                  fit, mapping, self.candidates))

    def _plan(self, res: FitResult):
        self.fit = res
        table, self.summary = three_window_policy(res.theta, self.cfg)
        if self.plan_with == "softmax":
            chain = ChainWorld(res.theta, tau=res.tau)
            _, table = solve_ai(build_ai_mdp(chain, self.cfg))
        chain_acts = table.by_human_state()
        f = np.clip(self.mapping.f, 0, res.theta.n_states + 1)
        per_state = chain_acts[f]
        A = self.world.n_actions
        self._actions = np.append(np.repeat(per_state, A), per_state[self.world.start])

    def act(self, ai_state, rng):
        return int(self._actions[ai_state])

    def end_episode(self, log):
        self._plan(fit_chainworld(log, self.fit_cfg, self.mapping, self.candidates))


class ModelBasedAgent(Agent):
    """Certainty equivalence on counted AI transitions; unseen pairs get a uniform next state."""

    name = "model_based"

    def __init__(self, world, cfg: AiConfig, smoothing: float = 1.0):
        if smoothing <= 0:
            raise ValueError("smoothing must be > 0")
        self.world, self.cfg, self.smoothing = world, cfg, smoothing
        self.R, self.term, self.term_v = ai_rewards(world, cfg)
        n = self.R.shape[1]
        self.counts = np.zeros((N_AI_ACTIONS, n, n))
        self._solve()

    def estimated_mdp(self) -> TabularMDP:
        n = self.counts.shape[1]
        tot = self.counts.sum(axis=2, keepdims=True)
        prior = np.zeros(n)
        prior[: n - 1] = 1.0 / (n - 1)
        P = np.where(tot > 0, self.counts / np.maximum(tot, 1e-300), prior)
        for i in np.flatnonzero(self.term):
            P[:, i, :] = 0.0
            P[:, i, i] = 1.0
        return TabularMDP(P=P, R=self.R, gamma=self.cfg.gamma_ai, terminal=self.term,
                          terminal_value=self.term_v)

    def _solve(self):
        from .planner import AiMDP

        ai = AiMDP(self.estimated_mdp(), self.world.n_states, self.world.n_actions, self.world.start)
        _, self.table = solve_ai(ai)

    def act(self, ai_state, rng):
        return int(self.table.actions[ai_state])

    def observe(self, state, action, reward, next_state, terminal):
        self.counts[action, state, next_state] += 1

    def end_episode(self, log):
        self._solve()


class QLearningAgent(Agent):
    """Tabular Q-learning with epsilon-greedy exploration."""

    name = "model_free"

    def __init__(self, n_ai_states: int, gamma_ai: float, learning_rate: float = 0.9,
                 epsilon: float = 0.1):
        if not 0 < learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        self.q = np.zeros((n_ai_states, N_AI_ACTIONS))
        self.lr, self.gamma, self.epsilon = learning_rate, gamma_ai, epsilon

    def act(self, ai_state, rng):
        return q_policy(self.q, ai_state, self.epsilon, rng)

    def observe(self, state, action, reward, next_state, terminal):
        q_learning_step(self.q, (state, action, reward, next_state, terminal), self.lr, self.gamma)


def q_learning_step(q: np.ndarray, tup, learning_rate: float, gamma_ai: float) -> np.ndarray:
    """In-place TD(0) update; an absorbing next state contributes no bootstrap term."""
    s, a, r, s2, terminal = tup
    target = r if terminal else r + gamma_ai * q[s2].max()
    q[s, a] += learning_rate * (target - q[s, a])
    return q


def q_policy(q: np.ndarray, state: int, epsilon: float, rng: np.random.Generator) -> int:
    if rng.random() < epsilon:
        return int(rng.integers(q.shape[1]))
    return int(np.argmax(q[state]))
