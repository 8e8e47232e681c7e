"""Chainworld human model: closed-form values, thresholds, interventions, stepping.

State indices for a chain of length ``N``: ``0..N-1`` are progress states,
``N`` is the absorbing goal and ``N + 1`` is the absorbing disengagement state.
Human action 1 pursues the goal, action 0 abstains.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

GAMMA_MAX = 1.0 - 1e-3
TIE_TOL = 1e-9
_PROB_EPS = 1e-12

__all__ = [
    "GAMMA_MAX",
    "AiAction",
    "ChainworldParams",
    "goal_index",
    "disengaged_index",
    "value_goal_pursuit",
    "value_disengagement",
    "optimal_values",
    "human_threshold",
    "apply_intervention",
    "human_q_values",
    "q_values_batch",
    "softmax_policy",
    "human_action",
    "human_step",
    "transition_tensor",
    "expected_rewards",
    "policy_evaluation_oracle",
    "value_iteration_oracle",
]


class AiAction(IntEnum):
    NOOP = 0
    GAMMA = 1
    BURDEN = 2


@dataclass(frozen=True)
class ChainworldParams:
    """Human parameter vector for a chainworld of length ``n_states``.

    ``delta_b`` is burden *relief*: a positive value moves ``r_b`` toward zero.
    """

    n_states: int
    r_b: float
    r_l: float
    r_g: float
    r_d: float
    p_g: float
    p_l: float
    p_d: float
    p_d0: float
    gamma: float
    delta_gamma: float = 0.0
    delta_b: float = 0.0

    def __post_init__(self):
        errors = self.domain_errors()
        if errors:
            raise ValueError("; ".join(errors))

    def domain_errors(self) -> list[str]:
        """Violations of the constraints the closed forms need."""
        errs = []
        if int(self.n_states) != self.n_states or self.n_states < 1:
            errs.append(f"n_states: must be a positive integer, got {self.n_states!r}")
        for name in ("p_g", "p_l", "p_d", "p_d0"):
            v = getattr(self, name)
            if not (-_PROB_EPS <= v <= 1 + _PROB_EPS):
                errs.append(f"{name}: must lie in [0, 1], got {v!r}")
        if self.p_l + self.p_d > 1 + 1e-9:
            errs.append(f"p_l + p_d: must be <= 1, got {self.p_l + self.p_d!r}")
        if not (0.0 <= self.gamma < 1.0):
            errs.append(f"gamma: must lie in [0, 1), got {self.gamma!r}")
        if self.r_b > 0:
            errs.append(f"r_b: must be <= 0, got {self.r_b!r}")
        if self.r_l > 0:
            errs.append(f"r_l: must be <= 0, got {self.r_l!r}")
        if self.r_g < 0:
            errs.append(f"r_g: must be >= 0, got {self.r_g!r}")
        if self.r_d < 0:
            errs.append(f"r_d: must be >= 0, got {self.r_d!r}")
        return errs

    def validate(self) -> "ChainworldParams":
        """Strict check, including ``p_d0 >= p_d``."""
        if self.p_d0 < self.p_d - 1e-12:
            raise ValueError(f"p_d0: must be >= p_d ({self.p_d!r}), got {self.p_d0!r}")
        return self

    def replace(self, **changes) -> "ChainworldParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ChainworldParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown field(s): {', '.join(unknown)}")
        missing = sorted(f.name for f in dataclasses.fields(cls)
                         if f.name not in data and f.default is dataclasses.MISSING)
        if missing:
            raise ValueError(f"missing field(s): {', '.join(missing)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ChainworldParams":
        return cls.from_dict(json.loads(text))


def goal_index(theta: ChainworldParams) -> int:
    return theta.n_states


def disengaged_index(theta: ChainworldParams) -> int:
    return theta.n_states + 1


def _check_gamma(gamma):
    if np.any(np.asarray(gamma) >= 1.0):
        raise ValueError("gamma must be < 1 for the closed-form values")


def _vg(r_g, r_b, p_g, gamma, steps):
    """Goal-pursuit value ``steps`` moves away from the goal (broadcasts)."""
    z = 1.0 - gamma * (1.0 - p_g)
    rho = np.where(z > 0, gamma * p_g / np.where(z > 0, z, 1.0), 0.0)
    rk = rho ** steps
    return r_g * rk + r_b * (1.0 - rk) / (1.0 - gamma)


def _vd(r_d, r_l, p_l, p_d, p_d0, gamma, n):
    """Always-abstain value at chain index ``n`` (broadcasts)."""
    v = 1.0 - gamma * (1.0 - p_d0)
    u = 1.0 - gamma * (1.0 - p_d - p_l)
    w = 1.0 - gamma * (1.0 - p_d)
    v0 = np.where(v > 0, r_d * gamma * p_d0 / np.where(v > 0, v, 1.0), 0.0)
    q = np.where(u > 0, gamma * p_l / np.where(u > 0, u, 1.0), 0.0)
    qn = q ** n
    tail = np.where(w > 0, (gamma * p_d * r_d + p_l * r_l) / np.where(w > 0, w, 1.0), 0.0)
    return v0 * qn + tail * (1.0 - qn)


def value_goal_pursuit(theta: ChainworldParams, n):
    """Value of always acting, from chain index ``n`` (0..N)."""
    _check_gamma(theta.gamma)
    n = np.asarray(n)
    if np.any(n < 0) or np.any(n > theta.n_states):
        raise ValueError(f"state index out of range 0..{theta.n_states}")
    out = _vg(theta.r_g, theta.r_b, theta.p_g, theta.gamma, theta.n_states - n)
    return float(out) if out.ndim == 0 else out


def value_disengagement(theta: ChainworldParams, n):
    """Value of always abstaining, from chain index ``n`` (0..N-1)."""
    _check_gamma(theta.gamma)
    n = np.asarray(n)
    if np.any(n < 0) or np.any(n >= theta.n_states):
        raise ValueError(f"state index out of range 0..{theta.n_states - 1}")
    out = _vd(theta.r_d, theta.r_l, theta.p_l, theta.p_d, theta.p_d0, theta.gamma, n)
    return float(out) if out.ndim == 0 else out


def optimal_values(theta: ChainworldParams) -> np.ndarray:
    """Analytic V* over all N + 2 states (goal and disengaged included)."""
    n = np.arange(theta.n_states)
    v = np.empty(theta.n_states + 2)
    v[:-2] = np.maximum(value_goal_pursuit(theta, n), value_disengagement(theta, n))
    v[-2] = theta.r_g
    v[-1] = theta.r_d
    return v


def human_threshold(theta: ChainworldParams) -> int:
    """Largest index where abstaining is (weakly) optimal; -1 if acting wins everywhere.

    Values within a relative 1e-9 of each other count as tied; ties go to abstaining.
    """
    n = np.arange(theta.n_states)
    vd = value_disengagement(theta, n)
    abstain = value_goal_pursuit(theta, n) <= vd + TIE_TOL * np.maximum(1.0, np.abs(vd))
    idx = np.flatnonzero(abstain)
    return int(idx[-1]) if idx.size else -1


def apply_intervention(theta: ChainworldParams, ai_action, gamma_max: float = GAMMA_MAX) -> ChainworldParams:
    """One-step parameters under an AI action. The caller reverts next step."""
    a = AiAction(int(ai_action))
    if a == AiAction.GAMMA:
        g = min(max(theta.gamma + theta.delta_gamma, 0.0), gamma_max)
        return theta.replace(gamma=g)
    if a == AiAction.BURDEN:
        return theta.replace(r_b=min(theta.r_b + theta.delta_b, 0.0))
    return theta


def q_values_batch(n_states: int, r_b, r_l, r_g, r_d, p_g, p_l, p_d, p_d0, gamma) -> np.ndarray:
    """Human Q-values for many parameter vectors at once, shape (K, N, 2).

    Parameters are length-K arrays (or scalars) sharing one chain length.
    """
    _check_gamma(gamma)
    col = [np.atleast_1d(np.asarray(x, dtype=float))[:, None]
           for x in (r_b, r_l, r_g, r_d, p_g, p_l, p_d, p_d0, gamma)]
    r_b, r_l, r_g, r_d, p_g, p_l, p_d, p_d0, g = np.broadcast_arrays(*col)
    N = n_states
    n = np.arange(N)
    v = np.maximum(_vg(r_g, r_b, p_g, g, N - n), _vd(r_d, r_l, p_l, p_d, p_d0, g, n))
    ahead = np.concatenate([v[:, 1:], r_g[:, :1]], axis=1)
    behind = v[:, np.maximum(n - 1, 0)]
    q = np.empty(v.shape + (2,))
    q[..., 1] = r_b + g * (p_g * ahead + (1.0 - p_g) * v)
    q[..., 0] = p_d * g * r_d + p_l * (r_l + g * behind) + (1.0 - p_d - p_l) * g * v
    q[:, 0, 0] = (p_d0 * g * r_d + (1.0 - p_d0) * g * v[:, :1])[:, 0]
    return q


def human_q_values(theta: ChainworldParams) -> np.ndarray:
    """One-step backups of the analytic V*, shape (N, 2) over progress states."""
    t = theta
    return q_values_batch(t.n_states, t.r_b, t.r_l, t.r_g, t.r_d, t.p_g, t.p_l,
                          t.p_d, t.p_d0, t.gamma)[0]


def _log_softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def softmax_policy(theta: ChainworldParams, tau: float) -> np.ndarray:
    """pi(a | s) proportional to exp(Q(s, a) / tau), shape (N, 2)."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return np.exp(_log_softmax(human_q_values(theta) / tau))


def optimal_policy(theta: ChainworldParams) -> np.ndarray:
    """Deterministic threshold policy as one-hot rows, shape (N, 2)."""
    t = human_threshold(theta)
    act = (np.arange(theta.n_states) > t).astype(int)
    pol = np.zeros((theta.n_states, 2))
    pol[np.arange(theta.n_states), act] = 1.0
    return pol


def human_action(theta: ChainworldParams, state: int, ai_action=AiAction.NOOP,
                 tau: float | None = None, rng: np.random.Generator | None = None) -> int:
    """Human's action at a progress state; ``tau=None`` is the optimal human."""
    if not 0 <= state < theta.n_states:
        raise ValueError(f"human_action needs a progress state, got {state}")
    th = apply_intervention(theta, ai_action)
    if tau is None:
        return int(state > human_threshold(th))
    p1 = softmax_policy(th, tau)[state, 1]
    return int(rng.random() < p1)


def transition_tensor(theta: ChainworldParams) -> np.ndarray:
    """T[a, s, s'] over all N + 2 states; absorbing states self-loop."""
    N = theta.n_states
    G, D = N, N + 1
    T = np.zeros((2, N + 2, N + 2))
    n = np.arange(N)
    T[1, n, n + 1] += theta.p_g
    T[1, n, n] += 1.0 - theta.p_g
    T[0, n, D] += theta.p_d
    T[0, n[1:], n[1:] - 1] += theta.p_l
    T[0, n, n] += 1.0 - theta.p_d - theta.p_l
    T[0, 0, :] = 0.0
    T[0, 0, D] = theta.p_d0
    T[0, 0, 0] = 1.0 - theta.p_d0
    for s in (G, D):
        T[:, s, s] = 1.0
    return T


def expected_rewards(theta: ChainworldParams) -> np.ndarray:
    """Expected immediate human reward R[a, s], excluding terminal-state utilities."""
    N = theta.n_states
    R = np.zeros((2, N + 2))
    R[1, :N] = theta.r_b
    R[0, 1:N] = theta.p_l * theta.r_l
    return R


def human_step(theta: ChainworldParams, state: int, action: int,
               rng: np.random.Generator) -> tuple[int, float]:
    """Sample one human transition; returns (next_state, human_reward)."""
    N = theta.n_states
    if not 0 <= state < N:
        raise ValueError(f"cannot step from absorbing state {state}")
    u = rng.random()
    if action == 1:
        if u < theta.p_g:
            nxt = state + 1
            return nxt, theta.r_b + (theta.r_g if nxt == N else 0.0)
        return state, theta.r_b
    if state == 0:
        if u < theta.p_d0:
            return N + 1, theta.r_d
        return 0, 0.0
    if u < theta.p_d:
        return N + 1, theta.r_d
    if u < theta.p_d + theta.p_l:
        return state - 1, theta.r_l
    return state, 0.0


def _bellman_terms(theta: ChainworldParams):
    T = transition_tensor(theta)
    R = expected_rewards(theta)
    N = theta.n_states
    term = np.zeros(N + 2, dtype=bool)
    term[N:] = True
    term_v = np.zeros(N + 2)
    term_v[N], term_v[N + 1] = theta.r_g, theta.r_d
    return T, R, term, term_v


def policy_evaluation_oracle(theta: ChainworldParams, policy, tol: float = 1e-10,
                             max_iter: int = 1_000_000) -> np.ndarray:
    """Iterated Bellman backups of a fixed deterministic policy over progress states."""
    if theta.gamma >= 1:
        raise ValueError("policy evaluation does not converge for gamma >= 1")
    T, R, term, term_v = _bellman_terms(theta)
    pol = np.asarray(policy, dtype=int)
    idx = np.arange(theta.n_states)
    v = term_v.copy()
    for _ in range(max_iter):
        new = term_v.copy()
        new[idx] = R[pol, idx] + theta.gamma * np.einsum("ij,j->i", T[pol, idx], v)
        if np.max(np.abs(new - v)) < tol:
            return new
        v = new
    raise RuntimeError("policy evaluation did not converge")


def value_iteration_oracle(theta: ChainworldParams, tol: float = 1e-10,
                           max_iter: int = 1_000_000) -> np.ndarray:
    """Bellman-optimality iteration over all N + 2 states until the sup-norm change < tol."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if theta.gamma >= 1:
        raise ValueError("value iteration does not converge for gamma >= 1")
    T, R, term, term_v = _bellman_terms(theta)
    N = theta.n_states
    v = term_v.copy()
    for _ in range(max_iter):
        q = R[:, :N] + theta.gamma * (T[:, :N, :] @ v)
        new = term_v.copy()
        new[:N] = q.max(axis=0)
        if np.max(np.abs(new - v)) < tol:
            return new
        v = new
    raise RuntimeError("value iteration did not converge")
