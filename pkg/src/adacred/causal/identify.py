"""Recover structural masks from rollouts in which the latent state is observed.

Every mask entry is decided by a conditional-independence test in the
linear-Gaussian regime. Each child variable is regressed on its full set of
candidate parents:

* ``g[t+1]`` on ``g[t]``, the action one-hot and the previous reward
* ``r[t]`` on ``g[t]`` and the action one-hot
* ``o[t]`` on ``g[t]`` (when observations are supplied)

Scalar parents are tested by the partial correlation implied by the OLS
t-statistic, converted with Fisher's z; categorical actions are tested by a
nested-model F-test. All p-values share one Bonferroni correction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..envs.latent import LatentMDPSpec, StructuralMasks, observe, step_latent
from ..errors import ContractError, StatisticalPowerError

# a fit whose residual sum of squares is this small relative to the target's
# total is deterministic
EXACT_RSS = 1e-20


@dataclass
class LatentRollouts:
    """Episodes of observed latents: ``latents`` (N, T+1, d), ``actions``/``rewards`` (N, T)."""

    latents: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    observations: np.ndarray | None = None   # (N, T+1, d_o)
    n_actions: int = 2

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        n, t1, _ = self.latents.shape
        if self.actions.shape != (n, t1 - 1) or self.rewards.shape != (n, t1 - 1):
            raise ContractError("actions and rewards must be (episodes, steps)")
        if self.observations is not None:
            self.observations = np.asarray(self.observations, dtype=np.float64)
            if self.observations.shape[:2] != (n, t1):
                raise ContractError("observations must align with latents")

    @property
    def d(self) -> int:
        return self.latents.shape[2]

    @property
    def n_transitions(self) -> int:
        return self.actions.size


def simulate(spec: LatentMDPSpec, n_transitions: int, seed: int = 0,
             episode_len: int | None = None) -> LatentRollouts:
    """Uniform-random-action rollouts recording latents, observations and rewards.

    Whole episodes are kept, so the transition count is ``n_transitions``
    rounded up to a multiple of the episode length.
    """
    T = episode_len or spec.horizon
    n_ep = max(1, math.ceil(n_transitions / T))
    rng = np.random.default_rng(seed)
    d, k = spec.d, spec.n_actions
    G = np.zeros((n_ep, T + 1, d))
    O = np.zeros((n_ep, T + 1, spec.obs_dim))
    A = rng.integers(0, k, (n_ep, T))
    R = np.zeros((n_ep, T))
    for e in range(n_ep):
        g = spec.init_scale * rng.standard_normal(d)
        G[e, 0], O[e, 0] = g, observe(spec, g, rng)
        r_prev = 0.0
        for t in range(T):
            g, o, r_prev = step_latent(spec, g, int(A[e, t]), r_prev, rng)
            G[e, t + 1], O[e, t + 1], R[e, t] = g, o, r_prev
    return LatentRollouts(G, A, R, O, k)


def _onehot(a, k):
    out = np.zeros((a.size, k - 1))
    rows = np.flatnonzero(a > 0)
    out[rows, a[rows] - 1] = 1.0
    return out


def _ols(X, y):
    """Coefficients, residual sum of squares and residual dof (intercept included)."""
    Xc = np.column_stack([np.ones(len(X)), X])
    beta, _, rank, _ = np.linalg.lstsq(Xc, y, rcond=None)
    resid = y - Xc @ beta
    return beta[1:], float(resid @ resid), len(y) - rank, Xc


def _constant(y) -> bool:
    return float(np.ptp(y)) <= 1e-12 * max(1.0, float(np.abs(y).max()))


def _is_exact(X, y) -> bool:
    if _constant(y):
        return True
    tss = float(((y - y.mean()) ** 2).sum())
    return _ols(X, y)[1] <= EXACT_RSS * tss


def _exact_parents(X, y, groups) -> set:
    """Smallest set of column groups that reproduces ``y`` exactly (edge minimality).

    Without noise the regressors are typically collinear, so partial
    correlations are undefined; the sparsest exact explanation is taken
    instead. Ties in size go to the first subset in index order.
    """
    if _constant(y):
        return set()
    tss = float(((y - y.mean()) ** 2).sum())
    for size in range(1, len(groups) + 1):
        for combo in itertools.combinations(range(len(groups)), size):
            cols = [c for g in combo for c in groups[g]]
            if _ols(X[:, cols], y)[1] <= EXACT_RSS * tss:
                return set(combo)
    return set(range(len(groups)))


def _scalar_pvalues(X, y):
    """Two-sided p-value per column for ``y ⫫ X[:, j] | X[:, rest]`` via Fisher's z."""
    n, p = X.shape
    beta, rss, dof, Xc = _ols(X, y)
    xtx_inv = np.linalg.pinv(Xc.T @ Xc)
    se = np.sqrt(np.maximum(np.diag(xtx_inv)[1:] * rss / dof, 1e-300))
    t = beta / se
    rho = np.clip(t / np.sqrt(t * t + dof), -1 + 1e-15, 1 - 1e-15)
    z = np.arctanh(rho) * math.sqrt(max(n - (p - 1) - 3, 1))
    return 2.0 * stats.norm.sf(np.abs(z))


def _group_pvalue(X, y, cols):
    """Nested-model F-test for dropping ``cols`` from the regression of ``y`` on ``X``."""
    _, rss_full, dof, _ = _ols(X, y)
    _, rss_red, _, _ = _ols(np.delete(X, cols, axis=1), y)
    q = len(cols)
    F = ((rss_red - rss_full) / q) / (rss_full / dof)
    return float(stats.f.sf(max(F, 0.0), q, dof))


def _test_parents(X, y, scalar_cols, group_cols):
    """p-values for each scalar column, then one for the grouped columns."""
    groups = [[c] for c in scalar_cols] + ([list(group_cols)] if len(group_cols) else [])
    if _is_exact(X, y):
        hit = _exact_parents(X, y, groups)
        return np.array([0.0 if g in hit else 1.0 for g in range(len(groups))])
    sp = _scalar_pvalues(X, y)[scalar_cols]
    return np.append(sp, _group_pvalue(X, y, list(group_cols))) if len(group_cols) else sp


def _design(ro: LatentRollouts):
    d, k = ro.d, ro.n_actions
    g_now = ro.latents[:, :-1].reshape(-1, d)
    g_next = ro.latents[:, 1:].reshape(-1, d)
    acts = _onehot(ro.actions.reshape(-1), k)
    r_prev = np.concatenate([np.zeros((ro.rewards.shape[0], 1)), ro.rewards[:, :-1]], axis=1)
    # the first step of each episode has no previous reward; drop it from transition fits
    keep = np.ones(ro.actions.shape, bool)
    keep[:, 0] = False
    keep = keep.reshape(-1)
    return g_now, g_next, acts, r_prev.reshape(-1), ro.rewards.reshape(-1), keep


@dataclass
class StructureEstimate:
    masks: StructuralMasks
    pvalues: dict
    level: float
    n_tests: int
    n_transitions: int

    def to_dict(self) -> dict:
        return {"masks": self.masks.to_dict(),
                "pvalues": {k: np.asarray(v).tolist() for k, v in self.pvalues.items()},
                "level": self.level, "bonferroni_tests": self.n_tests,
                "n_transitions": self.n_transitions}


def identify_structure(ro: LatentRollouts, level: float = 0.01, min_per_param: int = 10) -> StructureEstimate:
    """Estimate every mask entry by conditional-independence testing at a Bonferroni-corrected level.

    Raises :class:`StatisticalPowerError` when fewer than ``min_per_param``
    transitions are available per regression coefficient.
    """
    if not 0.0 < level < 1.0:
        raise ContractError("level must lie in (0, 1)")
    d, k = ro.d, ro.n_actions
    g_now, g_next, acts, r_prev, r_now, keep = _design(ro)
    n_params = d + (k - 1) + 2
    if keep.sum() < min_per_param * n_params:
        raise StatisticalPowerError(
            f"{int(keep.sum())} usable transitions; need >= {min_per_param * n_params} "
            f"for {n_params} coefficients per regression")

    act_cols = list(range(d, d + k - 1))
    X_g = np.column_stack([g_now, acts, r_prev])[keep]
    X_r = np.column_stack([g_now, acts])
    p = {"c_gg": np.ones((d, d)), "c_ag": np.ones(d), "c_rg": np.ones(d), "c_gr": np.ones(d)}
    for i in range(d):
        pv = _test_parents(X_g, g_next[keep, i], list(range(d)) + [d + k - 1], act_cols)
        p["c_gg"][i], p["c_rg"][i], p["c_ag"][i] = pv[:d], pv[d], pv[d + 1]
    pv = _test_parents(X_r, r_now, list(range(d)), act_cols)
    p["c_gr"], p["c_ar"] = pv[:d], np.array(pv[d])
    n_tests = d * d + 3 * d + 1
    if ro.observations is not None:
        obs = ro.observations.reshape(-1, ro.observations.shape[-1])
        g_all = ro.latents.reshape(-1, d)
        per_obs = np.array([_test_parents(g_all, obs[:, j], list(range(d)), [])[:d]
                            for j in range(obs.shape[1])])
        # dim i reaches the observation if any observed channel depends on it
        p["c_go"] = np.minimum(1.0, per_obs.min(axis=0) * obs.shape[1])
        n_tests += d
    else:
        p["c_go"] = np.zeros(d)
    alpha = level / n_tests
    est = {key: (np.asarray(v) < alpha).astype(np.int8) for key, v in p.items()}
    if ro.observations is None:
        est["c_go"] = np.zeros(d, np.int8)
    masks = StructuralMasks(c_gg=est["c_gg"], c_ag=est["c_ag"], c_rg=est["c_rg"],
                            c_go=est["c_go"], c_gr=est["c_gr"], c_ar=int(est["c_ar"]))
    return StructureEstimate(masks, p, level, n_tests, ro.n_transitions)


# -- sparse regularizer and the relaxed-regression variant -------------------------------

def reg_penalty(masks, lam: float, theta=None) -> float:
    """``lam`` times the summed L1 norms of every mask tensor and of ``theta``.

    ``masks`` is a :class:`StructuralMasks`, a dict of arrays, or a sequence
    of arrays (relaxed, real-valued masks are allowed).
    """
    if lam < 0:
        raise ContractError("lambda must be >= 0")
    if isinstance(masks, StructuralMasks):
        arrays = list(masks.arrays().values())
    elif isinstance(masks, dict):
        arrays = list(masks.values())
    else:
        arrays = list(masks)
    total = sum(float(np.abs(np.asarray(a, dtype=np.float64)).sum()) for a in arrays)
    if theta is not None:
        total += float(np.abs(np.asarray(theta, dtype=np.float64)).sum())
    return lam * total


def _lasso(X, y, lam, iters=500):
    """Coordinate descent for ``mean((y - Xw - b)^2) / 2 + lam * |w|_1`` on standardized X."""
    mu, sd = X.mean(0), X.std(0)
    sd = np.where(sd > 0, sd, 1.0)
    Z = (X - mu) / sd
    yc = y - y.mean()
    n, p = Z.shape
    w = np.zeros(p)
    col_sq = (Z * Z).sum(0) / n
    resid = yc.copy()
    for _ in range(iters):
        delta = 0.0
        for j in range(p):
            if col_sq[j] == 0:
                continue
            rho = Z[:, j] @ resid / n + col_sq[j] * w[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            if new != w[j]:
                resid -= Z[:, j] * (new - w[j])
                delta = max(delta, abs(new - w[j]))
                w[j] = new
        if delta < 1e-8:
            break
    return w / sd


@dataclass
class RelaxedEstimate:
    masks: StructuralMasks
    weights: dict        # relaxed (real-valued) masks: fitted coefficients per entry
    lam: float
    threshold: float
    objective: float     # mean squared residual plus the J_reg penalty on the weights

    def to_dict(self) -> dict:
        return {"masks": self.masks.to_dict(), "lam": self.lam, "threshold": self.threshold,
                "objective": self.objective,
                "weights": {k: np.asarray(v).tolist() for k, v in self.weights.items()}}


def identify_structure_relaxed(ro: LatentRollouts, lam: float = 0.0,
                               threshold: float = 0.05) -> RelaxedEstimate:
    """Sparse-regression variant: L1-penalized fits, edges where ``|weight| > threshold``.

    The per-regression L1 term is exactly :func:`reg_penalty` of the relaxed
    masks, so ``lam = 0`` is plain least squares.
    """
    d, k = ro.d, ro.n_actions
    g_now, g_next, acts, r_prev, r_now, keep = _design(ro)
    X_g = np.column_stack([g_now, acts, r_prev])[keep]
    X_r = np.column_stack([g_now, acts])
    W = {"c_gg": np.zeros((d, d)), "c_ag": np.zeros(d), "c_rg": np.zeros(d),
         "c_gr": np.zeros(d), "c_ar": np.zeros(())}
    mse = 0.0
    for i in range(d):
        y = g_next[keep, i]
        w = _lasso(X_g, y, lam)
        W["c_gg"][i], W["c_rg"][i] = w[:d], w[-1]
        W["c_ag"][i] = np.abs(w[d:d + k - 1]).max()
        mse += float(np.mean((y - y.mean() - (X_g - X_g.mean(0)) @ w) ** 2))
    w = _lasso(X_r, r_now, lam)
    W["c_gr"], W["c_ar"] = w[:d], np.abs(w[d:]).max()
    mse += float(np.mean((r_now - r_now.mean() - (X_r - X_r.mean(0)) @ w) ** 2))
    est = {key: (np.abs(v) > threshold).astype(np.int8) for key, v in W.items()}
    masks = StructuralMasks(c_gg=est["c_gg"], c_ag=est["c_ag"], c_rg=est["c_rg"],
                            c_go=np.zeros(d, np.int8), c_gr=est["c_gr"], c_ar=int(est["c_ar"]))
    return RelaxedEstimate(masks, W, lam, threshold, mse + reg_penalty(W, lam))


def edge_f1(estimate: StructuralMasks, truth: StructuralMasks, keys=None) -> float:
    """F1 of predicted edges against the ground-truth masks over the chosen mask tensors."""
    keys = keys or ["c_gg", "c_ag", "c_rg", "c_go", "c_gr", "c_ar"]
    e, t = estimate.arrays(), truth.arrays()
    pred = np.concatenate([np.ravel(e[k]) for k in keys]).astype(bool)
    true = np.concatenate([np.ravel(t[k]) for k in keys]).astype(bool)
    tp = int((pred & true).sum())
    fp = int((pred & ~true).sum())
    fn = int((~pred & true).sum())
    if tp == 0:
        return 1.0 if fp == 0 and fn == 0 else 0.0
    return 2 * tp / (2 * tp + fp + fn)


def false_positives(estimate: StructuralMasks, truth: StructuralMasks, keys=None) -> int:
    keys = keys or ["c_gg", "c_ag", "c_rg", "c_gr", "c_ar"]
    e, t = estimate.arrays(), truth.arrays()
    return int(sum(((np.ravel(e[k]) == 1) & (np.ravel(t[k]) == 0)).sum() for k in keys))
