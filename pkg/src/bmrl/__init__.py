"""Behavior-model RL: chainworld humans, AI intervention planning and online personalization."""

__version__ = "0.1.0"

from .chainworld import AiAction, ChainworldParams, human_threshold  # noqa: E402
from .planner import AiConfig, solve_ai, three_window_policy  # noqa: E402

__all__ = ["AiAction", "ChainworldParams", "AiConfig", "human_threshold", "solve_ai",
           "three_window_policy", "__version__"]
