"""Exact check that pruning reward-irrelevant latent dims leaves the optimal action unchanged.

Linear latent dynamics with a linear reward make the optimal action
independent of the state, which would make any pruning test vacuous. The
check therefore works on a sign-quantized tabular abstraction of the model:
each latent dim lives in {-1, +1}, and the next sign of dim i is +1 with
probability ``Phi(pre_i / sigma_g)`` where ``pre`` is the masked transition
pre-activation. The expected reward is the noise-free masked reward map.
Finite-horizon optimal Q-values follow from backward induction over every
joint sign configuration, which is an exhaustive expected-return
enumeration for this model.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ..envs.latent import LatentMDPSpec, StructuralMasks
from ..errors import CapacityError, ContractError, SpecError
from .structure import minimal_sufficient_set

MAX_DIMS = 6
TIE_RTOL = 1e-9


def sign_states(k: int) -> np.ndarray:
    """All ``2**k`` sign vectors, row-major over dims with -1 before +1."""
    if k == 0:
        return np.zeros((1, 0))
    return np.array(list(itertools.product((-1.0, 1.0), repeat=k)))


def tabular_q(spec: LatentMDPSpec, dims, horizon: int) -> np.ndarray:
    """Q[s, a] over sign states of ``dims`` for a ``horizon``-step problem.

    Dims outside ``dims`` are treated as absent: their weights are dropped
    from every transition and reward term.
    """
    dims = list(dims)
    k = len(dims)
    w = spec.masked()
    A = w["A"][np.ix_(dims, dims)]
    B = w["B"][dims]
    w_r = w["w_r"][dims]
    S = sign_states(k)
    n_a = spec.n_actions
    pre_r = S @ w_r
    reward = pre_r[:, None] + w["u_r"][None, :] + spec.b_r
    if spec.nonlinearity == "tanh":
        reward = np.tanh(reward)
    # P[s, a, s'] factorizes over dims
    pre_g = (S @ A.T)[:, None, :] + B.T[None, :, :]                 # (S, K, k)
    if spec.nonlinearity == "tanh":
        pre_g = np.tanh(pre_g)
    if spec.sigma_g > 0:
        p_up = ndtr(pre_g / spec.sigma_g)
    else:
        p_up = (pre_g >= 0).astype(float)
    up = (S > 0)                                                    # (S', k)
    probs = np.where(up[None, None], p_up[:, :, None, :], 1.0 - p_up[:, :, None, :])
    P = probs.prod(axis=-1) if k else np.ones((len(S), n_a, 1))     # (S, K, S')
    V = np.zeros(len(S))
    Q = reward.copy()
    for _ in range(horizon):
        Q = reward + spec.gamma * (P @ V)
        V = Q.max(axis=1)
    return Q


def greedy(Q: np.ndarray) -> np.ndarray:
    """Argmax per row; values within a relative ``TIE_RTOL`` count as ties, lowest id wins."""
    best = Q.max(axis=1, keepdims=True)
    tol = TIE_RTOL * np.maximum(1.0, np.abs(best))
    return np.argmax(Q >= best - tol, axis=1)


def _index(signs: np.ndarray) -> np.ndarray:
    """Row index into :func:`sign_states` for each sign vector."""
    k = signs.shape[1]
    bits = (signs > 0).astype(np.int64)
    return bits @ (1 << np.arange(k - 1, -1, -1)) if k else np.zeros(len(signs), np.int64)


@dataclass
class PruneReport:
    kept: list
    pruned: list
    minimal: list
    horizon: int
    samples: int
    disagreements: int
    touches_minimal: bool
    actions_full: list = field(repr=False)
    actions_pruned: list = field(repr=False)

    @property
    def fraction(self) -> float:
        return self.disagreements / self.samples

    def to_dict(self) -> dict:
        return {"kept": self.kept, "pruned": self.pruned, "minimal": self.minimal,
                "horizon": self.horizon, "samples": self.samples,
                "disagreements": self.disagreements, "disagreement_fraction": self.fraction,
                "pruned_touches_minimal": self.touches_minimal}


def prune_invariance_check(spec: LatentMDPSpec, horizon: int, samples: int, pruned=None,
                           seed: int = 0) -> PruneReport:
    """Compare optimal first actions with the full state against a pruned state.

    ``pruned`` defaults to every dim outside the minimal sufficient set.
    ``samples`` sign states are drawn uniformly; each is scored by the
    fraction whose greedy action differs between the two models.
    """
    d = spec.d
    if d > MAX_DIMS:
        raise CapacityError(f"exact enumeration limited to d <= {MAX_DIMS}, got {d}")
    if spec.masks.c_rg.any():
        raise SpecError("reward feedback (c_rg) makes the tabular state non-Markov; unsupported")
    if horizon < 1 or samples < 1:
        raise ContractError("horizon and samples must be >= 1")
    minimal = sorted(minimal_sufficient_set(spec.masks))
    pruned = sorted(set(range(d)) - set(minimal)) if pruned is None else sorted(set(pruned))
    if any(not 0 <= i < d for i in pruned):
        raise ContractError(f"pruned dims must lie in [0, {d})")
    kept = [i for i in range(d) if i not in pruned]

    a_full = greedy(tabular_q(spec, range(d), horizon))
    a_kept = greedy(tabular_q(spec, kept, horizon))
    rng = np.random.default_rng(seed)
    states = rng.choice([-1.0, 1.0], size=(samples, d))
    act_f = a_full[_index(states)]
    act_p = a_kept[_index(states[:, kept])]
    return PruneReport(kept=kept, pruned=pruned, minimal=minimal, horizon=horizon,
                       samples=samples, disagreements=int((act_f != act_p).sum()),
                       touches_minimal=bool(set(pruned) & set(minimal)),
                       actions_full=act_f.tolist(), actions_pruned=act_p.tolist())


def counterexample_spec(sigma: float = 0.1, gamma: float = 0.9) -> LatentMDPSpec:
    """Two dims where the reward dim decides the best action.

    Reward is ``g0`` plus a small bonus for action 0. Action 1 pushes ``g0``
    towards +1 and is worth taking only while ``g0`` is negative, so an agent
    blind to ``g0`` always takes action 0. Dim 1 is pure noise.
    """
    masks = StructuralMasks(c_gg=[[1, 0], [0, 1]], c_ag=[1, 0], c_rg=[0, 0], c_go=[1, 0],
                            c_gr=[1, 0], c_ar=1)
    return LatentMDPSpec(masks=masks, A=[[1.0, 0.0], [0.0, 0.5]], B=[[0.0, 1.5], [0.0, 0.0]],
                         w_rg=[0.0, 0.0], W_o=[[1.0, 0.0]], b_o=[0.0], w_r=[1.0, 0.0],
                         u_r=[0.1, 0.0], b_r=0.0, sigma_g=sigma, sigma_o=sigma, sigma_r=sigma,
                         gamma=gamma, meta={"name": "prune-counterexample"})
