"""Episode rollouts and behavior policies for both environments.

A policy is any callable ``policy(history, rng) -> int``. ``history`` holds
everything observed so far, including the env ``info`` dicts, so scripted
policies may read privileged state the learner never sees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset import Trajectory
from ..errors import PolicyError
from .keydoor import KeyDoorEnv, scripted_action
from .latent import LatentMDPEnv


@dataclass
class History:
    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    infos: list = field(default_factory=list)

    @property
    def t(self) -> int:
        return len(self.actions)


def rollout(env, policy, T: int, seed: int, tag: str = "") -> Trajectory:
    """Run exactly ``T`` steps; the environment and policy share one seed.

    The env's own randomness comes from ``seed``; the policy draws from an
    independent stream spawned from the same seed.
    """
    policy_rng = np.random.default_rng([seed, 1])
    obs, info = env.reset(seed)
    hist = History([obs], [], [], [info])
    for t in range(T):
        a = policy(hist, policy_rng)
        if isinstance(a, (bool, np.bool_)) or not isinstance(a, (int, np.integer)) \
                or not 0 <= a < env.n_actions:
            raise PolicyError(f"policy emitted invalid action {a!r} at step {t}")
        obs, r, _, info = env.step(int(a))
        hist.actions.append(int(a))
        hist.rewards.append(r)
        hist.observations.append(obs)
        hist.infos.append(info)
    meta = {"env": env.env_id, "seed": int(seed), "policy": tag}
    if isinstance(env, KeyDoorEnv):
        meta["events"] = [list(e) for e in env.state.events]
    return Trajectory(np.stack(hist.observations), hist.actions, hist.rewards, metadata=meta)


# -- policies -----------------------------------------------------------------

def random_policy(n_actions: int):
    def act(hist, rng):
        return int(rng.integers(n_actions))
    return act


def scripted_policy(spec):
    def act(hist, rng):
        return scripted_action(spec, hist.infos[-1])
    return act


def epsilon_greedy(greedy, n_actions: int, eps: float):
    if not 0.0 <= eps <= 1.0:
        raise PolicyError(f"epsilon must lie in [0, 1], got {eps}")

    def act(hist, rng):
        if rng.random() < eps:
            return int(rng.integers(n_actions))
        return greedy(hist, rng)
    return act


def latent_greedy(spec):
    """One-step lookahead on the noise-free reward map using the true latent.

    Scores ``u_r[a] + gamma * w_r . E[g' | g, a]`` so actions that steer
    reward-relevant dims are preferred even without a direct reward edge.
    """
    w = spec.masked()

    def act(hist, rng):
        g = hist.infos[-1]["latent"]
        base = w["A"] @ g
        scores = []
        for a in range(spec.n_actions):
            g_next = base + w["B"][:, a]
            if spec.nonlinearity == "tanh":
                g_next = np.tanh(g_next)
            scores.append(w["u_r"][a] + spec.gamma * (w["w_r"] @ g_next))
        return int(np.argmax(scores))
    return act


def behavior_policy(env, kind: str, eps: float = 0.0):
    """Policy factory keyed by name: random, scripted, eps-greedy."""
    n = env.n_actions
    if kind == "random":
        return random_policy(n)
    if isinstance(env, KeyDoorEnv):
        greedy = scripted_policy(env.spec)
    elif isinstance(env, LatentMDPEnv):
        greedy = latent_greedy(env.spec)
    else:
        raise PolicyError(f"no greedy policy for {type(env).__name__}")
    if kind == "scripted":
        return greedy
    if kind == "eps-greedy":
        return epsilon_greedy(greedy, n, eps)
    raise PolicyError(f"unknown behavior policy {kind!r}")


def collect(env, n_episodes: int, T: int, seed: int, kind: str = "scripted",
            eps_values=(0.0,)) -> list:
    """Roll out ``n_episodes``, cycling through ``eps_values`` (a mixed-quality corpus)."""
    trajs = []
    seeds = np.random.SeedSequence(seed).generate_state(n_episodes)
    for i in range(n_episodes):
        eps = float(eps_values[i % len(eps_values)])
        pol = behavior_policy(env, kind, eps)
        tag = kind if kind != "eps-greedy" else f"eps-greedy:{eps}"
        trajs.append(rollout(env, pol, T, int(seeds[i]), tag=tag))
    return trajs
