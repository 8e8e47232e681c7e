"""AI intervention planning over human worlds.

An AI state is a pair (human state, previous human action) plus one
episode-start sentinel stored at the last index. Under AI action ``x`` the
human at ``s`` picks ``a'`` from its (temporarily intervened) policy and then
moves to ``s'``, so the next AI state is ``(s', a')``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .chainworld import AiAction, ChainworldParams, apply_intervention, human_threshold
from .mdp import TIE_TOL, TabularMDP, policy_iteration

ACTION_LABELS = {AiAction.NOOP: "none", AiAction.GAMMA: "a_gamma", AiAction.BURDEN: "a_b"}
N_AI_ACTIONS = len(AiAction)


@dataclass(frozen=True)
class AiConfig:
    r_goal: float = 1.0
    r_disengage: float = -50.0
    r_intervene: float = -1.0
    r_step: float = -0.5
    gamma_ai: float = 0.99
    max_steps: int = 100

    def __post_init__(self):
        if not self.r_intervene < 0:
            raise ValueError(f"r_intervene: must be < 0, got {self.r_intervene!r}")
        if not 0.0 <= self.gamma_ai < 1.0:
            raise ValueError(f"gamma_ai: must lie in [0, 1), got {self.gamma_ai!r}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ValueError(f"max_steps: must be a positive integer, got {self.max_steps!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AiMDP:
    """AI MDP over a world with ``n_human`` states and ``n_human_actions`` actions."""

    mdp: TabularMDP
    n_human: int
    n_human_actions: int
    start: int

    @property
    def sentinel(self) -> int:
        return self.n_human * self.n_human_actions

    def index(self, human_state: int, prev_action: int | None) -> int:
        if prev_action is None:
            return self.sentinel
        return human_state * self.n_human_actions + prev_action

    def decode(self, idx: int) -> tuple[int, int | None]:
        if idx == self.sentinel:
            return self.start, None
        return divmod(idx, self.n_human_actions)

    def human_state_of(self) -> np.ndarray:
        """Human-state component of every AI state index."""
        hs = np.repeat(np.arange(self.n_human), self.n_human_actions)
        return np.append(hs, self.start)


def ai_rewards(world, cfg: AiConfig):
    """Per-AI-state reward table R[x, i] and terminal values, priority goal > disengage > intervene > step."""
    A = world.n_actions
    hs = np.append(np.repeat(np.arange(world.n_states), A), world.start)
    goal = world.goal_mask[hs]
    dis = world.dis_mask[hs] & ~goal
    R = np.empty((N_AI_ACTIONS, hs.size))
    R[0] = cfg.r_step
    R[1:] = cfg.r_intervene
    R[:, goal] = cfg.r_goal
    R[:, dis] = cfg.r_disengage
    term = goal | dis
    term_v = np.where(goal, cfg.r_goal, np.where(dis, cfg.r_disengage, 0.0))
    return R, term, term_v


def build_ai_mdp(world, cfg: AiConfig, max_states: int = 20_000, kernels=None) -> AiMDP:
    """Explicit AI MDP from the world's per-action human kernels ``K_x[s, a', s']``."""
    S, A = world.n_states, world.n_actions
    n = S * A + 1
    if n > max_states:
        raise ValueError(f"AI MDP would have {n} states, above the cap of {max_states}")
    if kernels is None:
        kernels = [world.kernel(x) for x in AiAction]
    R, term, term_v = ai_rewards(world, cfg)
    P = np.zeros((N_AI_ACTIONS, n, n))
    for x, K in enumerate(kernels):
        rows = K.reshape(S, A * S)        # (s, a'*S + s')
        # reorder columns from (a', s') to AI index s'*A + a'
        rows = rows.reshape(S, A, S).transpose(0, 2, 1).reshape(S, S * A)
        block = np.repeat(rows, A, axis=0)  # every prev action shares the row
        P[x, : S * A, : S * A] = block
        P[x, n - 1, : S * A] = rows[world.start]
    for i in np.flatnonzero(term):
        P[:, i, :] = 0.0
        P[:, i, i] = 1.0
    mdp = TabularMDP(P=P, R=R, gamma=cfg.gamma_ai, terminal=term, terminal_value=term_v)
    return AiMDP(mdp=mdp, n_human=S, n_human_actions=A, start=world.start)


@dataclass
class AiPolicyTable:
    """AI action per AI state, optionally with values."""

    actions: np.ndarray
    n_human: int
    n_human_actions: int
    values: np.ndarray | None = None

    def action(self, human_state: int, prev_action: int | None) -> int:
        if prev_action is None:
            return int(self.actions[-1])
        return int(self.actions[human_state * self.n_human_actions + prev_action])

    def by_human_state(self) -> np.ndarray:
        """Actions per human state; raises if they depend on the previous action."""
        tab = self.actions[:-1].reshape(self.n_human, self.n_human_actions)
        if np.any(tab != tab[:, :1]):
            raise ValueError("policy depends on the previous human action")
        return tab[:, 0].copy()

    @classmethod
    def from_human_state_actions(cls, actions, n_human: int, n_human_actions: int,
                                 start: int = 0) -> "AiPolicyTable":
        actions = np.asarray(actions, dtype=int)
        full = np.zeros(n_human, dtype=int)
        full[: actions.size] = actions
        tab = np.append(np.repeat(full, n_human_actions), full[start])
        return cls(actions=tab, n_human=n_human, n_human_actions=n_human_actions)


def solve_ai(ai: AiMDP, tol: float = TIE_TOL) -> tuple[np.ndarray, AiPolicyTable]:
    """Exact optimal AI values and greedy policy (ties: NoOp < Gamma < Burden)."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    v, pol = policy_iteration(ai.mdp, tol=tol)
    return v, AiPolicyTable(actions=pol, n_human=ai.n_human,
                            n_human_actions=ai.n_human_actions, values=v)


@dataclass(frozen=True)
class ThresholdSummary:
    t0: int
    t_gamma: int
    t_b: int
    t_min: int
    t_ai: int

    def to_dict(self) -> dict:
        return asdict(self)


def _leq(a, b):
    return a <= b + TIE_TOL * np.maximum(1.0, np.abs(b))


def ai_goal_values(theta: ChainworldParams, cfg: AiConfig, t0: int | None = None) -> np.ndarray:
    """AI value of driving the human to the goal: intervene up to ``t0``, NoOp after.

    Assumes the human acts everywhere along the way.
    """
    if t0 is None:
        t0 = human_threshold(theta)
    N, g = theta.n_states, cfg.gamma_ai
    zeta = 1.0 - g * (1.0 - theta.p_g)
    rho = g * theta.p_g / zeta
    n = np.arange(N + 1)
    k = N - n
    gv = cfg.r_goal * rho ** k + cfg.r_step * (1.0 - rho ** k) / (1.0 - g)
    edge = min(t0 + 1, N)
    head = n <= t0
    m = edge - n[head]
    gv[head] = rho ** m * gv[edge] + cfg.r_intervene * (1.0 - rho ** m) / (1.0 - g)
    return gv[:N]


def ai_dropout_values(theta: ChainworldParams, cfg: AiConfig) -> np.ndarray:
    """AI value of never intervening on a human who always abstains."""
    N, g = theta.n_states, cfg.gamma_ai
    d0 = (cfg.r_step + g * theta.p_d0 * cfg.r_disengage) / (1.0 - g * (1.0 - theta.p_d0))
    u = 1.0 - g * (1.0 - theta.p_d - theta.p_l)
    q = g * theta.p_l / u
    tail = (cfg.r_step + g * theta.p_d * cfg.r_disengage) / (1.0 - g * (1.0 - theta.p_d))
    qn = q ** np.arange(N)
    return qn * d0 + tail * (1.0 - qn)


def ai_threshold(theta: ChainworldParams, cfg: AiConfig) -> int:
    """Largest chain index where letting the human drop out is worth at least helping; -1 if none."""
    below = _leq(ai_goal_values(theta, cfg), ai_dropout_values(theta, cfg))
    idx = np.flatnonzero(below)
    return int(idx[-1]) if idx.size else -1


def threshold_summary(theta: ChainworldParams, cfg: AiConfig) -> ThresholdSummary:
    t0 = human_threshold(theta)
    tg = human_threshold(apply_intervention(theta, AiAction.GAMMA))
    tb = human_threshold(apply_intervention(theta, AiAction.BURDEN))
    return ThresholdSummary(t0=t0, t_gamma=tg, t_b=tb, t_min=min(t0, tg, tb),
                            t_ai=ai_threshold(theta, cfg))


def three_window_policy(theta: ChainworldParams, cfg: AiConfig) -> tuple[AiPolicyTable, ThresholdSummary]:
    """Closed-form optimal AI policy for an optimal chainworld human."""
    ts = threshold_summary(theta, cfg)
    N = theta.n_states
    n = np.arange(N)
    acts = np.full(N, int(AiAction.NOOP))
    window = (n > max(ts.t_min, ts.t_ai)) & (n <= ts.t0)
    acts[window & (n > ts.t_gamma)] = AiAction.GAMMA
    acts[window & (n <= ts.t_gamma)] = AiAction.BURDEN
    table = AiPolicyTable.from_human_state_actions(acts, N + 2, 2)
    return table, ts


def window_structure(actions) -> bool:
    """True when actions form NoOp prefix, one contiguous intervention block, NoOp suffix."""
    active = np.flatnonzero(np.asarray(actions) != AiAction.NOOP)
    if active.size == 0:
        return True
    return bool(active[-1] - active[0] + 1 == active.size)


def policy_dump(actions, summary: ThresholdSummary | None = None) -> dict:
    out = {"states": [{"state": int(i), "action": ACTION_LABELS[AiAction(int(a))]}
                      for i, a in enumerate(actions)]}
    if summary is not None:
        out["thresholds"] = summary.to_dict()
    return out


def policy_dump_json(actions, summary: ThresholdSummary | None = None) -> str:
    return json.dumps(policy_dump(actions, summary), indent=2, sort_keys=True) + "\n"


def _threshold_bisect(make, target: int, lo: float, hi: float, iters: int = 80) -> float:
    """Parameter inside the interval where ``human_threshold(make(x)) == target``.

    Assumes the threshold is non-increasing in the parameter.
    """
    def thr(x):
        return human_threshold(make(x))

    def boundary(t):
        # smallest x with threshold < t, searching [lo, hi]
        a, b = lo, hi
        if thr(a) < t:
            return a
        if thr(b) >= t:
            return b
        for _ in range(iters):
            m = 0.5 * (a + b)
            if thr(m) >= t:
                a = m
            else:
                b = m
        return b

    left, right = boundary(target + 1), boundary(target)
    x = 0.5 * (left + right)
    if thr(x) != target:
        raise ValueError(f"threshold {target} not reachable in [{lo}, {hi}]")
    return x


def chainworld_with_thresholds(n_states: int, t0: int, t_gamma: int, t_b: int,
                               p_g: float = 1.0, r_g: float = 10.0,
                               gamma_max: float = 1.0 - 1e-3) -> ChainworldParams:
    """Build a chainworld whose human thresholds under (NoOp, a_gamma, a_b) are given.

    Uses a human who never drops out or regresses, so the disengagement value is 0.
    Intervention thresholds above ``t0`` are realized as zero-effect interventions.
    """
    N = n_states
    for name, t in (("t0", t0), ("t_gamma", t_gamma), ("t_b", t_b)):
        if not -1 <= t <= N - 1:
            raise ValueError(f"{name}: must lie in [-1, {N - 1}], got {t}")
    if not 0 < p_g <= 1:
        raise ValueError("p_g must lie in (0, 1]")
    rho = gamma_max * p_g / (1 - gamma_max * (1 - p_g))
    h = rho ** N * (1 - gamma_max) / (1 - rho ** N)
    ratio = 0.5 * h
    base = ChainworldParams(n_states=N, r_b=-ratio * r_g, r_l=0.0, r_g=r_g, r_d=0.0,
                            p_g=p_g, p_l=0.0, p_d=0.0, p_d0=0.0, gamma=0.5)
    gamma = _threshold_bisect(lambda x: base.replace(gamma=x), t0, 1e-6, gamma_max)
    theta = base.replace(gamma=gamma)
    if t_gamma < t0:
        g2 = _threshold_bisect(lambda x: theta.replace(gamma=x), t_gamma, gamma, gamma_max)
        theta = theta.replace(delta_gamma=g2 - gamma)
    if t_b < t0:
        rb = _threshold_bisect(lambda x: theta.replace(r_b=x), t_b, theta.r_b, 0.0)
        theta = theta.replace(delta_b=rb - theta.r_b)
    got = (human_threshold(theta), human_threshold(apply_intervention(theta, AiAction.GAMMA)),
           human_threshold(apply_intervention(theta, AiAction.BURDEN)))
    want = (t0, min(t_gamma, t0), min(t_b, t0))
    if got != want:
        raise ValueError(f"construction produced thresholds {got}, wanted {want}")
    return theta


@dataclass
class EquivalenceReport:
    equivalent: bool
    compared: int
    mismatches: list = field(default_factory=list)
    near_ties: list = field(default_factory=list)

    def __bool__(self):
        return self.equivalent


def _reachable_pairs(ai: AiMDP, world, f, g):
    """Reachable AI states of world A paired with their images in world B's AI state space."""
    S, A = world.n_states, world.n_actions
    reach = np.zeros(S * A + 1, dtype=bool)
    image = {}
    reach[-1] = True
    image[S * A] = None  # sentinel maps to sentinel
    frontier = [S * A]
    support = ai.mdp.P.sum(axis=0) > 0
    term = ai.mdp.terminal
    while frontier:
        i = frontier.pop()
        if term[i]:
            continue
        s = ai.decode(i)[0]
        for j in np.flatnonzero(support[i]):
            if not reach[j]:
                reach[j] = True
                s2, a2 = divmod(int(j), A)
                image[int(j)] = (int(f[s2]), int(g[s, a2]))
                frontier.append(int(j))
    return image


def ai_equivalent(world_a, world_b, f, g, cfg: AiConfig, tol: float = 1e-6) -> EquivalenceReport:
    """Compare optimal AI policies of two worlds under state map ``f`` and action map ``g[s, a]``."""
    f = np.asarray(f, dtype=int)
    g = np.asarray(g, dtype=int)
    if f.shape != (world_a.n_states,):
        raise ValueError(f"state map must cover all {world_a.n_states} states, got shape {f.shape}")
    if g.shape != (world_a.n_states, world_a.n_actions):
        raise ValueError(f"action map must have shape {(world_a.n_states, world_a.n_actions)}, got {g.shape}")
    if f.min() < 0 or f.max() >= world_b.n_states:
        raise ValueError("state map points outside the target world")
    if g.min() < 0 or g.max() >= world_b.n_actions:
        raise ValueError("action map points outside the target world")
    if f[world_a.start] != world_b.start:
        raise ValueError(f"start states disagree: f(start)={f[world_a.start]}, target start={world_b.start}")
    ai_a, ai_b = build_ai_mdp(world_a, cfg), build_ai_mdp(world_b, cfg)
    va, pa = solve_ai(ai_a)
    vb, pb = solve_ai(ai_b)
    qa, qb = ai_a.mdp.q_values(va), ai_b.mdp.q_values(vb)
    report = EquivalenceReport(equivalent=True, compared=0)
    for i, img in _reachable_pairs(ai_a, world_a, f, g).items():
        if ai_a.mdp.terminal[i]:
            continue
        j = ai_b.sentinel if img is None else img[0] * ai_b.n_human_actions + img[1]
        if ai_b.mdp.terminal[j]:
            report.equivalent = False
            report.mismatches.append({"state": ai_a.decode(i), "image": img, "reason": "maps to terminal"})
            continue
        report.compared += 1
        a, b = int(pa.actions[i]), int(pb.actions[j])
        for q, k, who in ((qa, i, "a"), (qb, j, "b")):
            srt = np.sort(q[:, k])
            if srt[-1] - srt[-2] < tol:
                report.near_ties.append({"world": who, "state": int(k), "gap": float(srt[-1] - srt[-2])})
        if a != b:
            report.equivalent = False
            report.mismatches.append({"state": ai_a.decode(i), "image": img,
                                      "action_a": a, "action_b": b})
    return report
