"""Linear (optionally tanh) latent MDPs with explicit structural masks.

Latent dims evolve as

    g[t+1] = f((c_gg * A) @ g[t] + c_ag * B[:, a] + c_rg * w_rg * r[t-1]) + eps_g
    o[t+1] = f(W_o @ (c_go * g[t+1]) + b_o) + eps_o
    r[t]   = f(w_r . (c_gr * g[t]) + c_ar * u_r[a] + b_r) + eps_r

with ``f`` the identity or ``tanh`` and Gaussian noise. A dimension whose
mask entries are all zero receives only noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import SpecError


@dataclass
class StructuralMasks:
    c_gg: np.ndarray  # (d, d); [i, j] = 1 iff g_j(t) -> g_i(t+1)
    c_ag: np.ndarray  # (d,)
    c_rg: np.ndarray  # (d,)
    c_go: np.ndarray  # (d,)
    c_gr: np.ndarray  # (d,)
    c_ar: int = 0

    def __post_init__(self):
        self.c_gg = np.asarray(self.c_gg, dtype=np.int8)
        d = self.c_gg.shape[0]
        for name in ("c_ag", "c_rg", "c_go", "c_gr"):
            arr = np.asarray(getattr(self, name), dtype=np.int8).reshape(-1)
            if arr.shape != (d,):
                raise SpecError(f"{name} must have length {d}")
            setattr(self, name, arr)
        self.c_ar = int(self.c_ar)
        if self.c_gg.shape != (d, d):
            raise SpecError("c_gg must be square")
        for name, arr in self.arrays().items():
            if not np.isin(arr, (0, 1)).all():
                raise SpecError(f"{name} entries must be 0 or 1")

    @property
    def d(self) -> int:
        return self.c_gg.shape[0]

    def arrays(self) -> dict:
        return {"c_gg": self.c_gg, "c_ag": self.c_ag, "c_rg": self.c_rg, "c_go": self.c_go,
                "c_gr": self.c_gr, "c_ar": np.array(self.c_ar, dtype=np.int8)}

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.arrays().items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "StructuralMasks":
        return cls(**{k: np.asarray(doc[k]) for k in ("c_gg", "c_ag", "c_rg", "c_go", "c_gr", "c_ar")})

    def __eq__(self, other):
        if not isinstance(other, StructuralMasks):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))


@dataclass
class LatentMDPSpec:
    masks: StructuralMasks
    A: np.ndarray          # (d, d) transition weights
    B: np.ndarray          # (d, K) action effects
    w_rg: np.ndarray       # (d,) reward feedback weights
    W_o: np.ndarray        # (d_o, d) observation map
    b_o: np.ndarray        # (d_o,)
    w_r: np.ndarray        # (d,) reward weights
    u_r: np.ndarray        # (K,) action reward
    b_r: float = 0.0
    sigma_g: float = 0.1
    sigma_o: float = 0.1
    sigma_r: float = 0.1
    gamma: float = 0.99
    horizon: int = 50
    nonlinearity: str = "linear"
    init_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.masks.d
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        self.w_rg = np.asarray(self.w_rg, dtype=np.float64)
        self.W_o = np.asarray(self.W_o, dtype=np.float64)
        self.b_o = np.asarray(self.b_o, dtype=np.float64)
        self.w_r = np.asarray(self.w_r, dtype=np.float64)
        self.u_r = np.asarray(self.u_r, dtype=np.float64)
        self.b_r = float(self.b_r)
        if self.A.shape != (d, d) or self.B.shape[0] != d or self.W_o.shape[1] != d:
            raise SpecError("weight shapes disagree with mask dimensionality")
        if self.nonlinearity not in ("linear", "tanh"):
            raise SpecError(f"unknown nonlinearity {self.nonlinearity!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise SpecError("gamma must lie in [0, 1]")

    @property
    def d(self) -> int:
        return self.masks.d

    @property
    def n_actions(self) -> int:
        return self.B.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.W_o.shape[0]

    def masked(self):
        """Effective weights: every entry zero wherever its mask is zero."""
        m = self.masks
        return {
            "A": self.A * m.c_gg,
            "B": self.B * m.c_ag[:, None],
            "w_rg": self.w_rg * m.c_rg,
            "W_o": self.W_o * m.c_go[None, :],
            "w_r": self.w_r * m.c_gr,
            "u_r": self.u_r * m.c_ar,
        }

    def spectral_radius(self) -> float:
        return float(np.abs(np.linalg.eigvals(self.masked()["A"])).max())

    # -- serialization: shortest round-trip float repr via json/repr --------
    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "masks": self.masks.to_dict(),
            "A": self.A.tolist(), "B": self.B.tolist(), "w_rg": self.w_rg.tolist(),
            "W_o": self.W_o.tolist(), "b_o": self.b_o.tolist(), "w_r": self.w_r.tolist(),
            "u_r": self.u_r.tolist(), "b_r": self.b_r,
            "sigma_g": self.sigma_g, "sigma_o": self.sigma_o, "sigma_r": self.sigma_r,
            "gamma": self.gamma, "horizon": self.horizon, "nonlinearity": self.nonlinearity,
            "init_scale": self.init_scale, "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LatentMDPSpec":
        doc = dict(doc)
        doc.pop("d", None)
        masks = StructuralMasks.from_dict(doc.pop("masks"))
        return cls(masks=masks, **doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LatentMDPSpec":
        return cls.from_dict(json.loads(text))


def _weights(rng, shape, low=0.5, high=1.5):
    return rng.uniform(low, high, shape) * rng.choice([-1.0, 1.0], shape)


def make_latent_mdp(seed: int, d: int, edge_density: float, n_actions: int = 2, *,
                    obs_dim: int | None = None, noise: float = 0.1, gamma: float = 0.99,
                    horizon: int = 50, nonlinearity: str = "linear",
                    reward_feedback: bool = False, max_radius: float = 0.9) -> LatentMDPSpec:
    """Sample masks at ``edge_density`` and repair them to satisfy the invariants.

    Repairs: the reward reads at least one latent dimension; for ``d >= 3`` the
    last dimension is made non-compact (no edge to observation, reward or any
    other latent); some action path reaches the reward. Transition weights are
    rescaled so the masked transition matrix has spectral radius <= max_radius.
    """
    if d < 2:
        raise SpecError("latent MDP needs d >= 2")
    if not 0.0 < edge_density <= 1.0:
        raise SpecError("edge_density must lie in (0, 1]")
    if n_actions < 2:
        raise SpecError("need at least two actions")
    rng = np.random.default_rng(seed)
    obs_dim = d if obs_dim is None else obs_dim

    def bern(shape):
        return (rng.random(shape) < edge_density).astype(np.int8)

    c_gg = bern((d, d))
    c_ag = bern(d)
    c_rg = bern(d) if reward_feedback else np.zeros(d, np.int8)
    c_go = bern(d)
    c_gr = bern(d)
    c_ar = int(rng.random() < edge_density)

    free = d - 1 if d >= 3 else None
    if free is not None:
        c_gg[np.arange(d) != free, free] = 0
        c_go[free] = 0
        c_gr[free] = 0
    candidates = [i for i in range(d) if i != free]
    if not c_gr.any():
        c_gr[rng.choice(candidates)] = 1
    if d >= 3 and len(candidates) < 2:
        raise SpecError("cannot keep a non-compact dimension and a reward dimension")
    if not c_ar and not (c_ag[c_gr == 1]).any():
        c_ag[rng.choice(np.flatnonzero(c_gr))] = 1

    A = _weights(rng, (d, d), 0.3, 1.0)
    masked_a = A * c_gg
    radius = np.abs(np.linalg.eigvals(masked_a)).max() if masked_a.any() else 0.0
    if radius > max_radius:
        A = A * (max_radius / radius)
    masks = StructuralMasks(c_gg=c_gg, c_ag=c_ag, c_rg=c_rg, c_go=c_go, c_gr=c_gr, c_ar=c_ar)
    return LatentMDPSpec(
        masks=masks,
        A=A,
        B=_weights(rng, (d, n_actions)),
        w_rg=_weights(rng, d, 0.2, 0.5),
        W_o=_weights(rng, (obs_dim, d)),
        b_o=rng.normal(0.0, 0.1, obs_dim),
        w_r=_weights(rng, d),
        u_r=_weights(rng, n_actions),
        b_r=float(rng.normal(0.0, 0.1)),
        sigma_g=noise, sigma_o=noise, sigma_r=noise,
        gamma=gamma, horizon=horizon, nonlinearity=nonlinearity,
        meta={"seed": seed, "edge_density": edge_density},
    )


def step_latent(spec: LatentMDPSpec, g, a: int, r_prev: float, rng: np.random.Generator):
    """One transition: returns ``(g_next, o_next, r)`` for action ``a`` taken in ``g``.

    Noise draws happen in a fixed order (latent, observation, reward) so a
    seeded generator reproduces the trajectory exactly.
    """
    w = spec.masked()
    g = np.asarray(g, dtype=np.float64)
    act = np.zeros(spec.n_actions)
    act[a] = 1.0
    pre_g = w["A"] @ g + w["B"] @ act + w["w_rg"] * r_prev
    pre_r = w["w_r"] @ g + w["u_r"] @ act + spec.b_r
    if spec.nonlinearity == "tanh":
        pre_g, pre_r = np.tanh(pre_g), np.tanh(pre_r)
    g_next = pre_g + spec.sigma_g * rng.standard_normal(spec.d)
    pre_o = w["W_o"] @ g_next + spec.b_o
    if spec.nonlinearity == "tanh":
        pre_o = np.tanh(pre_o)
    o_next = pre_o + spec.sigma_o * rng.standard_normal(spec.obs_dim)
    r = float(pre_r + spec.sigma_r * rng.standard_normal())
    return g_next, o_next, r


def observe(spec: LatentMDPSpec, g, rng: np.random.Generator):
    pre = spec.masked()["W_o"] @ g + spec.b_o
    if spec.nonlinearity == "tanh":
        pre = np.tanh(pre)
    return pre + spec.sigma_o * rng.standard_normal(spec.obs_dim)


class LatentMDPEnv:
    """Stateful wrapper; ``observe_latents`` exposes g itself (the MDP regime)."""

    env_id = "latent"

    def __init__(self, spec: LatentMDPSpec, observe_latents: bool = False):
        self.spec = spec
        self.observe_latents = observe_latents
        self.n_actions = spec.n_actions

    def reset(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.g = self.spec.init_scale * self.rng.standard_normal(self.spec.d)
        self.r_prev = 0.0
        self.t = 0
        o = observe(self.spec, self.g, self.rng)
        return self._obs(o), self._info()

    def _obs(self, o):
        return (self.g if self.observe_latents else o).astype(np.float32)

    def _info(self):
        return {"latent": self.g.copy(), "t": self.t}

    def step(self, a: int):
        g_next, o_next, r = step_latent(self.spec, self.g, a, self.r_prev, self.rng)
        self.g, self.r_prev = g_next, r
        self.t += 1
        return self._obs(o_next), r, False, self._info()
