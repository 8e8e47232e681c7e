"""Simulatable human worlds and their mappings onto chainworlds.

Every world exposes the same tabular surface: ``n_states``, ``n_actions``,
``start``, goal/disengaged masks, per-AI-action human kernels
``K_x[s, a, s'] = pi(a | s, x) * T(s, a, s')`` and a sampler. States that are
absorbing carry a one-hot "abstain" policy row and self-loops; the AI MDP
treats them as terminal anyway.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .chainworld import (GAMMA_MAX, AiAction, ChainworldParams, _log_softmax,
                         apply_intervention, human_q_values, human_threshold,
                         transition_tensor)
from .mdp import TIE_TOL, TabularMDP, evaluate_policy, policy_iteration


class NotAProgressWorld(ValueError):
    """Raised when grid states cannot be collapsed consistently onto one axis."""


@dataclass
class ChainMapping:
    """State map ``f`` (world state -> chain index), action map ``g[s, a]`` and target parameters."""

    f: np.ndarray
    g: np.ndarray
    theta: ChainworldParams
    start: int = 0

    def chain_world(self, tau: float | None = None) -> "ChainWorld":
        return ChainWorld(self.theta, tau=tau, start=self.start)


def _policy_from_q(q: np.ndarray, mask: np.ndarray, acting: np.ndarray, tau: float | None) -> np.ndarray:
    """Human policy rows from Q. Optimal ties go to the lowest-index non-acting action."""
    q = np.where(mask, q, -np.inf)
    pol = np.zeros_like(q)
    if tau is not None:
        if tau <= 0:
            raise ValueError("tau must be > 0")
        return np.exp(_log_softmax(q / tau))
    best = q.max(axis=1, keepdims=True)
    near = q >= best - TIE_TOL * np.maximum(1.0, np.abs(best))
    rest = near & ~acting
    choice = np.where(rest.any(axis=1), np.argmax(rest, axis=1), np.argmax(near, axis=1))
    pol[np.arange(q.shape[0]), choice] = 1.0
    return pol


class TabularWorld:
    """Base class: fixed dynamics ``T[a, s, s']`` and a policy per AI action."""

    n_states: int
    n_actions: int
    start: int
    goal_mask: np.ndarray
    dis_mask: np.ndarray
    name = "world"

    @property
    def terminal_mask(self) -> np.ndarray:
        return self.goal_mask | self.dis_mask

    def transition(self) -> np.ndarray:
        raise NotImplementedError

    def policy(self, ai_action) -> np.ndarray:
        """pi[s, a] under the given AI action, shape (n_states, n_actions)."""
        raise NotImplementedError

    @cached_property
    def _T(self) -> np.ndarray:
        return self.transition()

    @cached_property
    def _policies(self) -> list:
        return [self.policy(x) for x in AiAction]

    @cached_property
    def _cum(self):
        T = np.cumsum(self._T, axis=2)
        pols = [np.cumsum(p, axis=1) for p in self._policies]
        return T, pols

    def kernel(self, ai_action) -> np.ndarray:
        return self._policies[int(ai_action)][:, :, None] * self._T.transpose(1, 0, 2)

    def sample(self, state: int, ai_action, rng: np.random.Generator) -> tuple[int, int]:
        """Draw (human action, next state) from a non-absorbing state."""
        if self.terminal_mask[state]:
            raise ValueError(f"state {state} is absorbing")
        T, pols = self._cum
        u1, u2 = rng.random(2)
        a = int(np.searchsorted(pols[int(ai_action)][state], u1, side="right"))
        a = min(a, self.n_actions - 1)
        s2 = int(np.searchsorted(T[a, state], u2, side="right"))
        return a, min(s2, self.n_states - 1)


class ChainWorld(TabularWorld):
    """Chainworld human; ``tau=None`` is the optimal human, otherwise softmax."""

    name = "chainworld"

    def __init__(self, theta: ChainworldParams, tau: float | None = None, start: int = 0):
        self.theta = theta
        self.tau = tau
        self.n_states = theta.n_states + 2
        self.n_actions = 2
        self.start = start
        self.goal_mask = np.zeros(self.n_states, dtype=bool)
        self.dis_mask = np.zeros(self.n_states, dtype=bool)
        self.goal_mask[theta.n_states] = True
        self.dis_mask[theta.n_states + 1] = True

    def transition(self):
        return transition_tensor(self.theta)

    def policy(self, ai_action):
        th = apply_intervention(self.theta, ai_action)
        N = self.theta.n_states
        pol = np.zeros((self.n_states, 2))
        pol[N:, 0] = 1.0
        if self.tau is None:
            act = (np.arange(N) > human_threshold(th)).astype(int)
            pol[np.arange(N), act] = 1.0
        else:
            pol[:N] = np.exp(_log_softmax(human_q_values(th) / self.tau))
        return pol

    def identity_mapping(self) -> ChainMapping:
        return ChainMapping(f=np.arange(self.n_states),
                            g=np.tile(np.arange(2), (self.n_states, 1)),
                            theta=self.theta, start=self.start)


class SolvedHumanWorld(TabularWorld):
    """World whose human policy comes from exactly solving its own MDP."""

    tau: float | None = None

    def human_mdp(self, ai_action) -> TabularMDP:
        raise NotImplementedError

    @property
    def acting(self) -> np.ndarray:
        """Bool (n_states, n_actions): actions mapped to chain action 1."""
        raise NotImplementedError

    def human_q(self, ai_action) -> np.ndarray:
        mdp = self.human_mdp(ai_action)
        v, _ = policy_iteration(mdp)
        return mdp.q_values(v).T

    def policy(self, ai_action):
        mdp = self.human_mdp(ai_action)
        q = self.human_q(ai_action)
        pol = _policy_from_q(q, mdp.action_mask.T, self.acting, self.tau)
        pol[self.terminal_mask] = 0.0
        pol[self.terminal_mask, 0] = 1.0
        return pol

    def intervened(self, ai_action) -> tuple[float, float]:
        """(gamma, r_b) the human uses under an AI action."""
        x = AiAction(int(ai_action))
        g, rb = self.gamma, self.r_b
        if x == AiAction.GAMMA:
            g = min(max(g + self.delta_gamma, 0.0), GAMMA_MAX)
        elif x == AiAction.BURDEN:
            rb = min(rb + self.delta_b, 0.0)
        return g, rb

    def threshold_by(self, f: np.ndarray, ai_action=AiAction.NOOP) -> int:
        """Human threshold read off the optimal policy along chain index ``f``."""
        pol = self._policies[int(ai_action)]
        acts = (pol * self.acting).sum(axis=1) > 0.5
        live = ~self.terminal_mask
        idx, a = f[live], acts[live]
        t = int(idx[~a].max()) if (~a).any() else -1
        if np.any(a & (idx <= t)):
            raise ValueError("optimal human policy is not a threshold policy")
        return t


# --------------------------------------------------------------------------- grid

MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))  # up, down, left, right
MOVE_NAMES = ("up", "down", "left", "right")


@dataclass(frozen=True)
class GridWorldSpec:
    width: int
    height: int
    move_prob: float
    r_g: float
    r_d: float
    r_b: float
    gamma: float
    delta_gamma: float = 0.0
    delta_b: float = 0.0
    goal_pos: tuple | None = None
    disengage_pos: tuple | None = None
    start_pos: tuple | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0 <= self.move_prob <= 1:
            raise ValueError("move_prob must lie in [0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        g, d = self.goal, self.disengage
        if g == d:
            raise ValueError("goal and disengagement cells coincide")
        for name, p in (("goal_pos", g), ("disengage_pos", d), ("start_pos", self.start)):
            if not (0 <= p[0] < self.width and 0 <= p[1] < self.height):
                raise ValueError(f"{name} {p} outside the grid")

    @property
    def goal(self) -> tuple:
        return tuple(self.goal_pos) if self.goal_pos is not None else (self.width - 1, 0)

    @property
    def disengage(self) -> tuple:
        return tuple(self.disengage_pos) if self.disengage_pos is not None else (0, self.height - 1)

    @property
    def start(self) -> tuple:
        if self.start_pos is not None:
            return tuple(self.start_pos)
        dx, dy = self.disengage
        return (dx + 1, dy) if dx + 1 < self.width else (dx, dy - 1)

    def replace(self, **kw) -> "GridWorldSpec":
        return dataclasses.replace(self, **kw)


class GridWorld(SolvedHumanWorld):
    """Grid human; moves that shorten the path to the goal carry the burden."""

    name = "gridworld"

    def __init__(self, spec: GridWorldSpec, tau: float | None = None):
        self.spec = spec
        self.tau = tau
        X, Y = spec.width, spec.height
        self.n_states = X * Y
        self.n_actions = 4
        self.gamma, self.r_b = spec.gamma, spec.r_b
        self.delta_gamma, self.delta_b = spec.delta_gamma, spec.delta_b
        self.goal_cell = self.index(*spec.goal)
        self.dis_cell = self.index(*spec.disengage)
        self.start = self.index(*spec.start)
        self.goal_mask = np.zeros(self.n_states, dtype=bool)
        self.dis_mask = np.zeros(self.n_states, dtype=bool)
        self.goal_mask[self.goal_cell] = True
        self.dis_mask[self.dis_cell] = True
        if self.terminal_mask[self.start]:
            raise ValueError("start cell is absorbing")
        self.dest = np.full((self.n_states, 4), -1)
        for s in range(self.n_states):
            x, y = self.coords(s)
            for a, (dx, dy) in enumerate(MOVES):
                if 0 <= x + dx < X and 0 <= y + dy < Y:
                    self.dest[s, a] = self.index(x + dx, y + dy)
        self.feasible = self.dest >= 0
        self.dist_goal = self._bfs(self.goal_cell)
        self.dist_dis = self._bfs(self.dis_cell)
        live = ~self.terminal_mask
        dg = np.where(self.feasible, self.dist_goal[np.maximum(self.dest, 0)], np.inf)
        self._acting = self.feasible & (dg < self.dist_goal[:, None]) & live[:, None]

    def index(self, x: int, y: int) -> int:
        return y * self.spec.width + x

    def coords(self, s: int) -> tuple[int, int]:
        return s % self.spec.width, s // self.spec.width

    def _bfs(self, src: int) -> np.ndarray:
        """Shortest move counts to ``src``; absorbing cells are not passed through."""
        dist = np.full(self.n_states, np.inf)
        dist[src] = 0
        q = deque([src])
        while q:
            s = q.popleft()
            if self.terminal_mask[s] and s != src:
                continue
            x, y = self.coords(s)
            for dx, dy in MOVES:
                if 0 <= x + dx < self.spec.width and 0 <= y + dy < self.spec.height:
                    t = self.index(x + dx, y + dy)
                    if dist[t] == np.inf:
                        dist[t] = dist[s] + 1
                        q.append(t)
        if np.isinf(dist).any():
            raise ValueError("grid is not path-connected")
        return dist.astype(int)

    @property
    def acting(self):
        return self._acting

    def transition(self):
        S, p = self.n_states, self.spec.move_prob
        T = np.zeros((4, S, S))
        for s in range(S):
            for a in range(4):
                if self.terminal_mask[s] or not self.feasible[s, a]:
                    T[a, s, s] = 1.0
                    continue
                T[a, s, self.dest[s, a]] += p
                T[a, s, s] += 1.0 - p
        return T

    def human_mdp(self, ai_action):
        g, rb = self.intervened(ai_action)
        S = self.n_states
        R = np.where(self._acting.T, rb, 0.0)
        tv = np.zeros(S)
        tv[self.goal_cell], tv[self.dis_cell] = self.spec.r_g, self.spec.r_d
        mask = self.feasible.T | self.terminal_mask[None, :]
        return TabularMDP(P=self._T, R=R, gamma=g, terminal=self.terminal_mask,
                          terminal_value=tv, action_mask=mask)


def grid_chain_mapping(world: GridWorld, by: str = "disengage", strict: bool = True) -> ChainMapping:
    """Collapse a grid onto a chain.

    ``by="disengage"`` indexes non-absorbing cells by distance from the
    disengagement cell minus one; ``by="goal"`` uses N - distance to goal. With
    ``strict`` the grid must be a progress world.
    """
    live = ~world.terminal_mask
    dg, dd = world.dist_goal, world.dist_dis
    if strict:
        pairs = {}
        for s in np.flatnonzero(live):
            if pairs.setdefault(dg[s], dd[s]) != dd[s]:
                raise NotAProgressWorld(
                    f"cells at goal distance {dg[s]} have disengagement distances {pairs[dg[s]]} and {dd[s]}")
    if by == "disengage":
        n_hat = int(dd[live].max())
        f = dd - 1
    elif by == "goal":
        n_hat = int(dg[live].max())
        f = n_hat - dg
    else:
        raise ValueError(f"unknown mapping axis {by!r}")
    f = f.astype(int)
    f[world.goal_cell] = n_hat
    f[world.dis_cell] = n_hat + 1
    g = world.acting.astype(int)
    sp = world.spec
    p = sp.move_prob
    theta = ChainworldParams(n_states=n_hat, r_b=sp.r_b, r_l=0.0, r_g=sp.r_g, r_d=sp.r_d,
                             p_g=p, p_l=p, p_d=0.0, p_d0=p, gamma=sp.gamma,
                             delta_gamma=sp.delta_gamma, delta_b=sp.delta_b)
    return ChainMapping(f=f, g=g, theta=theta, start=int(f[world.start]))


# --------------------------------------------------------------------------- multi-chain

@dataclass(frozen=True)
class MultiChainSpec:
    """``variant`` is "A" (length-2 disengagement chains) or "B" (one recoverable chain)."""

    variant: str
    lengths: tuple
    p_goal: float
    p_dis: tuple
    p_l: float
    r_g: float
    r_d: float
    r_l: float
    r_b: float
    gamma: float
    delta_gamma: float = 0.0
    delta_b: float = 0.0

    def __post_init__(self):
        errs = []
        if self.variant == "A":
            if any(n != 1 for n in self.lengths[1:]):
                errs.append("case A disengagement chains must end one step from the start")
            if len(self.p_dis) != len(self.lengths) - 1:
                errs.append("case A needs one disengagement probability per disengagement chain")
            keep = float(np.prod([1 - p for p in self.p_dis]))
            if self.p_l > keep + 1e-12:
                errs.append("case A needs p_l <= prod(1 - p_c) so losses and dropouts are exclusive")
            if not 0 < self.p_goal <= 1:
                errs.append("p_goal must lie in (0, 1]")
        elif self.variant == "B":
            if len(self.lengths) != 2:
                errs.append("case B has exactly two chains")
            elif self.lengths[1] < 2:
                # with one move left every act also ends the disengagement chain
                errs.append("case B needs a disengagement chain of length >= 2")
            if self.r_d != 0 or self.r_l != 0 or self.p_l != 0:
                errs.append("case B requires r_d = r_l = p_l = 0")
        else:
            errs.append(f"unknown variant {self.variant!r}")
        if not 0 <= self.gamma < 1:
            errs.append("gamma must lie in [0, 1)")
        if errs:
            raise ValueError("; ".join(errs))


class MultiChainWorld(SolvedHumanWorld):
    """Goal chain plus disengagement chains; the state is the position on every chain.

    Chain lengths count moves: a chain of length ``L`` has positions 0..L and
    its last position is absorbing. Case A actions are {abstain, act}; case B
    adds a recover action (index 2) that steps back on the disengagement chain.
    """

    name = "multichain"

    def __init__(self, spec: MultiChainSpec, tau: float | None = None):
        self.spec = spec
        self.tau = tau
        self.gamma, self.r_b = spec.gamma, spec.r_b
        self.delta_gamma, self.delta_b = spec.delta_gamma, spec.delta_b
        dims = [n + 1 for n in spec.lengths]
        self.shape = tuple(dims)
        self.n_states = int(np.prod(dims))
        self.n_actions = 2 if spec.variant == "A" else 3
        self.positions = np.array(np.unravel_index(np.arange(self.n_states), self.shape)).T
        ends = np.array(spec.lengths)
        self.goal_mask = self.positions[:, 0] == ends[0]
        self.dis_mask = (self.positions[:, 1:] == ends[1:]).any(axis=1) & ~self.goal_mask
        self.start = 0
        self._acting = np.zeros((self.n_states, self.n_actions), dtype=bool)
        self._acting[:, 1:] = True
        self._acting[self.terminal_mask] = False

    @property
    def acting(self):
        return self._acting

    def _idx(self, pos) -> int:
        return int(np.ravel_multi_index(tuple(pos), self.shape))

    def transition(self):
        if self.spec.variant == "A":
            return self._transition_a()
        return self._transition_b()

    def _transition_a(self):
        sp, S = self.spec, self.n_states
        T = np.zeros((2, S, S))
        C1 = len(sp.lengths) - 1
        for s in range(S):
            if self.terminal_mask[s]:
                T[:, s, s] = 1.0
                continue
            pos = self.positions[s]
            up = pos.copy()
            up[0] += 1
            T[1, s, self._idx(up)] += sp.p_goal
            T[1, s, s] += 1 - sp.p_goal
            keep = 1.0
            for bits in np.ndindex(*(2,) * C1):
                pr = float(np.prod([p if b else 1 - p for p, b in zip(sp.p_dis, bits)]))
                if not any(bits):
                    keep = pr
                    continue
                nxt = pos.copy()
                nxt[1:] = bits
                T[0, s, self._idx(nxt)] += pr
            if pos[0] > 0:
                down = pos.copy()
                down[0] -= 1
                T[0, s, self._idx(down)] += sp.p_l
                T[0, s, s] += keep - sp.p_l
            else:
                T[0, s, s] += keep
        return T

    def _transition_b(self):
        S = self.n_states
        T = np.zeros((3, S, S))
        for s in range(S):
            if self.terminal_mask[s]:
                T[:, s, s] = 1.0
                continue
            s0, s1 = self.positions[s]
            T[0, s, self._idx((s0, s1 + 1))] = 1.0
            T[1, s, self._idx((s0 + 1, s1 + 1))] = 1.0
            T[2, s, self._idx((s0, max(s1 - 1, 0)))] = 1.0
        return T

    def human_mdp(self, ai_action):
        g, rb = self.intervened(ai_action)
        sp, S = self.spec, self.n_states
        R = np.zeros((self.n_actions, S))
        R[1:, :] = rb
        if sp.variant == "A":
            R[0] = sp.p_l * sp.r_l * (self.positions[:, 0] > 0)
        R[:, self.terminal_mask] = 0.0
        tv = np.where(self.goal_mask, sp.r_g, np.where(self.dis_mask, sp.r_d, 0.0))
        return TabularMDP(P=self._T, R=R, gamma=g, terminal=self.terminal_mask, terminal_value=tv)


def multichain_to_chain_mapping(spec: MultiChainSpec, world: MultiChainWorld | None = None) -> ChainMapping:
    """Chain mapping for case A or case B multi-chain worlds."""
    world = world or MultiChainWorld(spec)
    pos = world.positions
    g = np.tile((np.arange(world.n_actions) > 0).astype(int), (world.n_states, 1))
    if spec.variant == "A":
        n_hat = spec.lengths[0]
        f = pos[:, 0].copy()
        p_hat = 1.0 - float(np.prod([1 - p for p in spec.p_dis]))
        theta = ChainworldParams(n_states=n_hat, r_b=spec.r_b, r_l=spec.r_l, r_g=spec.r_g, r_d=spec.r_d,
                                 p_g=spec.p_goal, p_l=spec.p_l, p_d=p_hat, p_d0=p_hat, gamma=spec.gamma,
                                 delta_gamma=spec.delta_gamma, delta_b=spec.delta_b)
    else:
        N0, N1 = spec.lengths
        n_hat = 2 * N0
        s0, s1 = pos[:, 0], pos[:, 1]
        f = N0 + s0 - np.maximum(0, (N0 - s0) - (N1 - s1))
        theta = ChainworldParams(n_states=n_hat, r_b=spec.r_b, r_l=0.0, r_g=spec.r_g, r_d=spec.r_d,
                                 p_g=1.0, p_l=1.0, p_d=0.0, p_d0=1.0, gamma=spec.gamma,
                                 delta_gamma=spec.delta_gamma, delta_b=spec.delta_b)
    f = f.astype(int)
    f[world.goal_mask] = n_hat
    f[world.dis_mask] = n_hat + 1
    return ChainMapping(f=f, g=g, theta=theta, start=int(f[world.start]))


# --------------------------------------------------------------------------- monotonic

class MonotonicChainWorld(SolvedHumanWorld):
    """Chainworld whose dropout chance ``pd_schedule[n]`` varies with the chain index.

    Entry 0 plays the role of the state-0 dropout probability.
    """

    name = "monotonic"

    def __init__(self, theta: ChainworldParams, pd_schedule, tau: float | None = None):
        sched = np.asarray(pd_schedule, dtype=float)
        if sched.shape != (theta.n_states,):
            raise ValueError(f"schedule needs {theta.n_states} entries, got {sched.shape}")
        if np.any(np.diff(sched) > 1e-12):
            raise ValueError("dropout schedule must be non-increasing in n")
        if np.any(sched < 0) or np.any(sched[1:] + theta.p_l > 1 + 1e-12):
            raise ValueError("schedule entries must be probabilities with p_d + p_l <= 1")
        self.theta, self.schedule, self.tau = theta, sched, tau
        self.gamma, self.r_b = theta.gamma, theta.r_b
        self.delta_gamma, self.delta_b = theta.delta_gamma, theta.delta_b
        N = theta.n_states
        self.n_states, self.n_actions, self.start = N + 2, 2, 0
        self.goal_mask = np.zeros(N + 2, dtype=bool)
        self.dis_mask = np.zeros(N + 2, dtype=bool)
        self.goal_mask[N], self.dis_mask[N + 1] = True, True
        self._acting = np.zeros((N + 2, 2), dtype=bool)
        self._acting[:N, 1] = True

    @property
    def acting(self):
        return self._acting

    def transition(self):
        th, N = self.theta, self.theta.n_states
        T = transition_tensor(th)
        T[0, :N, :] = 0.0
        for n in range(N):
            pd = self.schedule[n]
            T[0, n, N + 1] = pd
            if n > 0:
                T[0, n, n - 1] = th.p_l
                T[0, n, n] = 1.0 - pd - th.p_l
            else:
                T[0, 0, 0] = 1.0 - pd
        return T

    def human_mdp(self, ai_action):
        g, rb = self.intervened(ai_action)
        th, N = self.theta, self.theta.n_states
        R = np.zeros((2, N + 2))
        R[1, :N] = rb
        R[0, 1:N] = th.p_l * th.r_l
        tv = np.zeros(N + 2)
        tv[N], tv[N + 1] = th.r_g, th.r_d
        return TabularMDP(P=self._T, R=R, gamma=g, terminal=self.terminal_mask, terminal_value=tv)

    def pursuit_gap(self, ai_action=AiAction.NOOP) -> np.ndarray:
        """V of always acting minus V of always abstaining, per progress state."""
        mdp = self.human_mdp(ai_action)
        N = self.theta.n_states
        vg = evaluate_policy(mdp, np.ones(N + 2, dtype=int) * (np.arange(N + 2) < N))
        vd = evaluate_policy(mdp, np.zeros(N + 2, dtype=int))
        return (vg - vd)[:N]

    def chain_mapping(self) -> ChainMapping:
        """Chainworld with matching human thresholds (identity state map)."""
        from .planner import chainworld_with_thresholds

        f = np.arange(self.n_states)
        ts = [self.threshold_by(f, x) for x in AiAction]
        theta = chainworld_with_thresholds(self.theta.n_states, ts[0], ts[1], ts[2], p_g=self.theta.p_g)
        return ChainMapping(f=f, g=np.tile(np.arange(2), (self.n_states, 1)), theta=theta)


def monotonic_chain(theta: ChainworldParams, pd_schedule, tau: float | None = None) -> MonotonicChainWorld:
    return MonotonicChainWorld(theta, pd_schedule, tau)


# --------------------------------------------------------------------------- negative effect

def negative_effect_world(theta: ChainworldParams, tau: float | None = None) -> tuple[ChainWorld, ChainMapping]:
    """World whose interventions backfire, paired with the zero-effect chainworld."""
    if theta.delta_gamma > 0 or theta.delta_b > 0:
        raise ValueError("negative-effect worlds need delta_gamma <= 0 and delta_b <= 0")
    world = ChainWorld(theta, tau=tau)
    target = theta.replace(delta_gamma=0.0, delta_b=0.0)
    m = world.identity_mapping()
    return world, ChainMapping(f=m.f, g=m.g, theta=target)


# --------------------------------------------------------------------------- noisy parameters

REWARD_PARAMS = ("r_b", "r_l", "r_g", "r_d")
PROB_PARAMS = ("p_g", "p_l", "p_d", "p_d0")


@dataclass(frozen=True)
class NoiseConfig:
    param: str
    epsilon: float
    c: float | None = None

    def __post_init__(self):
        if self.param not in REWARD_PARAMS + PROB_PARAMS + ("gamma",):
            raise ValueError(f"cannot add noise to {self.param!r}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")

    @property
    def spread(self) -> float:
        c = self.c if self.c is not None else (5.0 if self.param in REWARD_PARAMS else 1.0)
        return self.epsilon * c


def clip_params(theta: ChainworldParams, **values) -> ChainworldParams:
    """Replace parameters after clipping them into their legal domains."""
    out = {}
    for k, v in values.items():
        if k in PROB_PARAMS:
            v = min(max(v, 0.0), 1.0)
        elif k == "gamma":
            v = min(max(v, 0.0), GAMMA_MAX)
        elif k in ("r_b", "r_l"):
            v = min(v, 0.0)
        elif k in ("r_g", "r_d"):
            v = max(v, 0.0)
        out[k] = v
    p_l, p_d = out.get("p_l", theta.p_l), out.get("p_d", theta.p_d)
    if p_l + p_d > 1:
        out["p_l"], out["p_d"] = p_l / (p_l + p_d), p_d / (p_l + p_d)
    return dataclasses.replace(theta, **out)


class NoisyParamWorld(TabularWorld):
    """Chainworld whose ``cfg.param`` is redrawn every step around the human's mean value."""

    name = "noisy"

    def __init__(self, theta: ChainworldParams, cfg: NoiseConfig, tau: float | None = None,
                 n_quad: int = 201):
        self.theta, self.cfg, self.tau = theta, cfg, tau
        self.base = ChainWorld(theta, tau=tau)
        self.n_states, self.n_actions, self.start = self.base.n_states, 2, 0
        self.goal_mask, self.dis_mask = self.base.goal_mask, self.base.dis_mask
        self.n_quad = n_quad

    def draw(self, rng: np.random.Generator) -> ChainworldParams:
        mean = getattr(self.theta, self.cfg.param)
        w = self.cfg.spread
        x = rng.uniform(mean - w, mean + w) if w > 0 else mean
        return clip_params(self.theta, **{self.cfg.param: x})

    def quadrature(self) -> list:
        mean = getattr(self.theta, self.cfg.param)
        w = self.cfg.spread
        if w == 0:
            return [self.theta]
        m = self.n_quad
        nodes = mean - w + (np.arange(m) + 0.5) * (2 * w / m)  # midpoint rule
        return [clip_params(self.theta, **{self.cfg.param: float(x)}) for x in nodes]

    @cached_property
    def _kernels(self) -> list:
        out = []
        thetas = self.quadrature()
        for x in AiAction:
            acc = 0.0
            for th in thetas:
                acc = acc + ChainWorld(th, tau=self.tau).kernel(x)
            out.append(acc / len(thetas))
        return out

    def kernel(self, ai_action):
        return self._kernels[int(ai_action)]

    def policy(self, ai_action):
        return self.kernel(ai_action).sum(axis=2)

    def transition(self):
        return transition_tensor(self.theta)

    def sample(self, state, ai_action, rng):
        if self.terminal_mask[state]:
            raise ValueError(f"state {state} is absorbing")
        th = self.draw(rng)
        real = apply_intervention(th, ai_action)
        if self.tau is None:
            p1 = float(state > human_threshold(real))
        else:
            p1 = float(np.exp(_log_softmax(human_q_values(real)[state] / self.tau))[1])
        u1, u2 = rng.random(2)
        a = int(u1 < p1)
        row = np.cumsum(transition_tensor(th)[a, state])
        s2 = int(np.searchsorted(row, u2, side="right"))
        return a, min(s2, self.n_states - 1)

    def identity_mapping(self) -> ChainMapping:
        return self.base.identity_mapping()
