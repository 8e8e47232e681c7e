"""Random world instances for each equivalence family, paired with their chain mappings."""

from __future__ import annotations

import numpy as np

from .chainworld import ChainworldParams
from .worlds import (ChainMapping, GridWorld, GridWorldSpec, MonotonicChainWorld, MultiChainSpec,
                     MultiChainWorld, grid_chain_mapping, multichain_to_chain_mapping,
                     negative_effect_world)


def _human_ranges(rng):
    return dict(r_b=rng.uniform(-1, -0.2), r_d=rng.uniform(0, 1), r_l=rng.uniform(-1, 0),
                r_g=rng.uniform(5, 15), gamma=rng.uniform(0.01, 0.99))


def grid_instance(rng: np.random.Generator, width=None, height=None, goal_offset: int = 0,
                  by: str = "disengage"):
    X = int(rng.integers(2, 9)) if width is None else width
    Y = int(rng.integers(2, 7)) if height is None else height
    spec = GridWorldSpec(width=X, height=Y, move_prob=rng.uniform(0.5, 1.0),
                         r_g=rng.uniform(5 * X / 8, 10 * X / 8), r_d=rng.uniform(0, Y / 5),
                         r_b=rng.uniform(-1, -0.2), gamma=rng.uniform(0.01, 0.99),
                         delta_gamma=0.3, delta_b=0.4, goal_pos=(X - 1, goal_offset))
    world = GridWorld(spec)
    return world, grid_chain_mapping(world, by=by, strict=goal_offset == 0)


def multichain_a_instance(rng: np.random.Generator):
    C = int(rng.integers(2, 5))
    p_dis = tuple(rng.uniform(0, 0.3, size=C - 1))
    keep = float(np.prod(1 - np.asarray(p_dis)))
    h = _human_ranges(rng)
    spec = MultiChainSpec(variant="A", lengths=(int(rng.integers(1, 12)),) + (1,) * (C - 1),
                          p_goal=rng.uniform(0.2, 1), p_dis=p_dis, p_l=rng.uniform(0, keep),
                          delta_gamma=0.3, delta_b=0.4, **h)
    world = MultiChainWorld(spec)
    return world, multichain_to_chain_mapping(spec, world)


def multichain_b_instance(rng: np.random.Generator):
    h = _human_ranges(rng)
    h.update(r_d=0.0, r_l=0.0)
    spec = MultiChainSpec(variant="B", lengths=(int(rng.integers(1, 8)), int(rng.integers(2, 10))),
                          p_goal=1.0, p_dis=(1.0,), p_l=0.0, delta_gamma=0.3, delta_b=0.4, **h)
    world = MultiChainWorld(spec)
    return world, multichain_to_chain_mapping(spec, world)


def monotonic_instance(rng: np.random.Generator):
    N = int(rng.integers(2, 12))
    schedule = np.sort(rng.uniform(0, 0.5, size=N))[::-1]
    theta = ChainworldParams(n_states=N, p_d=0.1, p_d0=0.1, p_l=rng.uniform(0, 0.4), p_g=1.0,
                             delta_gamma=0.3, delta_b=0.4, **_human_ranges(rng))
    world = MonotonicChainWorld(theta, schedule)
    return world, world.chain_mapping()


def negative_effect_instance(rng: np.random.Generator):
    theta = ChainworldParams(n_states=int(rng.integers(2, 12)), p_d=0.2, p_d0=0.3,
                             p_l=rng.uniform(0, 0.4), p_g=1.0, delta_gamma=-rng.uniform(0, 0.5),
                             delta_b=-rng.uniform(0, 0.5), **_human_ranges(rng))
    return negative_effect_world(theta)


def misspecified_grid_instance(rng: np.random.Generator, epsilon: int = 1):
    return grid_instance(rng, width=8, height=5, goal_offset=epsilon, by="goal")


FAMILIES = {
    "grid": grid_instance,
    "multichain_a": multichain_a_instance,
    "multichain_b": multichain_b_instance,
    "monotonic": monotonic_instance,
    "negative_effect": negative_effect_instance,
    "misspecified_grid": misspecified_grid_instance,
}


def random_instance(family: str, rng: np.random.Generator, **kwargs) -> tuple[object, ChainMapping]:
    try:
        make = FAMILIES[family]
    except KeyError:
        raise ValueError(f"family: must be one of {sorted(FAMILIES)}, got {family!r}") from None
    return make(rng, **kwargs)
