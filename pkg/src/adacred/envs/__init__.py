"""Synthetic environments with known ground-truth structure."""

from .keydoor import (DOWN, LEFT, RIGHT, UP, GridState, GridWorldSpec, KeyDoorEnv,
                      render_gridworld, scripted_action)
from .latent import (LatentMDPEnv, LatentMDPSpec, StructuralMasks, make_latent_mdp, observe,
                     step_latent)
from .registry import describe_env, make_env
from .rollout import (History, behavior_policy, collect, epsilon_greedy, latent_greedy,
                      random_policy, rollout, scripted_policy)

__all__ = [
    "UP", "DOWN", "LEFT", "RIGHT", "GridState", "GridWorldSpec", "KeyDoorEnv",
    "render_gridworld", "scripted_action", "LatentMDPEnv", "LatentMDPSpec", "StructuralMasks",
    "make_latent_mdp", "observe", "step_latent", "History", "behavior_policy", "collect",
    "epsilon_greedy", "latent_greedy", "random_policy", "rollout", "scripted_policy",
    "describe_env", "make_env",
]
