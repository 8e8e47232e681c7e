"""Dense tabular MDPs with absorbing states and exact solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .chainworld import TIE_TOL


@dataclass
class TabularMDP:
    """Finite MDP. ``P[a, s, s']``, ``R[a, s]``; terminal states hold ``terminal_value``."""

    P: np.ndarray
    R: np.ndarray
    gamma: float
    terminal: np.ndarray
    terminal_value: np.ndarray
    action_mask: np.ndarray | None = None
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.terminal_value = np.asarray(self.terminal_value, dtype=float)
        if self.action_mask is None:
            self.action_mask = np.ones(self.R.shape, dtype=bool)
        A, S, S2 = self.P.shape
        if S != S2 or self.R.shape != (A, S):
            raise ValueError(f"inconsistent shapes P={self.P.shape} R={self.R.shape}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.P.shape[1]

    @property
    def n_actions(self) -> int:
        return self.P.shape[0]

    def q_values(self, v: np.ndarray) -> np.ndarray:
        q = self.R + self.gamma * (self.P @ v)
        return np.where(self.action_mask, q, -np.inf)

    def check_stochastic(self, atol: float = 1e-9) -> bool:
        sums = self.P.sum(axis=2)
        return bool(np.all(np.abs(sums[self.action_mask] - 1.0) < atol))


def evaluate_policy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Exact value of a deterministic policy by one linear solve."""
    S = mdp.n_states
    pol = np.asarray(policy, dtype=int)
    idx = np.arange(S)
    live = ~mdp.terminal
    P_pi = mdp.P[pol, idx]
    R_pi = mdp.R[pol, idx]
    v = np.where(mdp.terminal, mdp.terminal_value, 0.0)
    A = np.eye(live.sum()) - mdp.gamma * P_pi[np.ix_(live, live)]
    b = R_pi[live] + mdp.gamma * P_pi[np.ix_(live, mdp.terminal)] @ mdp.terminal_value[mdp.terminal]
    v[live] = np.linalg.solve(A, b)
    return v


def greedy_policy(mdp: TabularMDP, v: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Lowest-index action among those within ``tol`` of the best Q (terminals get 0)."""
    q = mdp.q_values(v)
    best = q.max(axis=0)
    scale = np.maximum(1.0, np.abs(best))
    near = q >= best - tol * scale
    pol = np.argmax(near, axis=0)
    pol[mdp.terminal] = 0
    return pol


def policy_iteration(mdp: TabularMDP, max_iter: int = 1000, tol: float = TIE_TOL):
    """Howard policy iteration; returns (values, policy) with canonical tie-breaks."""
    pol = np.argmax(mdp.action_mask, axis=0)
    pol[mdp.terminal] = 0
    idx = np.arange(mdp.n_states)
    for _ in range(max_iter):
        v = evaluate_policy(mdp, pol)
        q = mdp.q_values(v)
        best = q.max(axis=0)
        cur = q[pol, idx]
        improve = (best > cur + tol * np.maximum(1.0, np.abs(best))) & ~mdp.terminal
        if not improve.any():
            pol = greedy_policy(mdp, v, tol)
            return evaluate_policy(mdp, pol), pol
        pol = np.where(improve, np.argmax(q, axis=0), pol)
    raise RuntimeError("policy iteration did not converge")


def value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_iter: int = 1_000_000):
    """Bellman-optimality iteration to sup-norm ``tol``; returns (values, policy)."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    v = np.where(mdp.terminal, mdp.terminal_value, 0.0)
    for _ in range(max_iter):
        new = np.where(mdp.terminal, mdp.terminal_value, mdp.q_values(v).max(axis=0))
        if np.max(np.abs(new - v)) < tol:
            return new, greedy_policy(mdp, new)
        v = new
    raise RuntimeError("value iteration did not converge")


def hitting_probability(P: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Probability of ever entering ``target`` under the Markov chain ``P``.

    States that cannot reach the target get exactly 0, so the remaining
    system is nonsingular.
    """
    P = np.asarray(P, dtype=float)
    target = np.asarray(target, dtype=bool)
    S = P.shape[0]
    # reverse reachability: states from which the target is reachable
    graph = sparse.csr_matrix((P > 0).T.astype(float))
    reach = np.zeros(S, dtype=bool)
    for t in np.flatnonzero(target):
        order = csgraph.breadth_first_order(graph, t, directed=True, return_predecessors=False)
        reach[order] = True
    h = target.astype(float)
    free = reach & ~target
    if free.any():
        A = np.eye(free.sum()) - P[np.ix_(free, free)]
        b = P[np.ix_(free, target)].sum(axis=1)
        h[free] = np.linalg.solve(A, b)
    return np.clip(h, 0.0, 1.0)
