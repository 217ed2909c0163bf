"""Two-stage training, the action and efficiency losses, and evaluation rollouts.

Stage 1 trains the network with every gate forced open; credit heads are
left out of the optimizer. Stage 2 starts a fresh optimizer over all
parameters and minimizes ``L_action + alpha * L_eff`` with live gates.
"""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import OfflineDataset, normalize_obs, sample_batch
from .errors import ConfigError, ContractError, NumericalError, StateError
from .model import AdaCredModel, load_model, save_model
from .model.network import MaskState
from .numerics import functional as F
from .numerics.optim import AdamConfig, OptimizerState, adam_step
from .numerics.tensor import Tape, Tensor, as_tensor

log = logging.getLogger(__name__)

# Efficiency weight that drives every layer to its keep target within a few
# hundred stage-2 steps on the desk preset; L_eff is a mean of squared
# ratios (~1e-2), so it must be weighted far above L_action (~1).
TUNED_ALPHA = 1000.0


# -- losses --------------------------------------------------------------------

def action_loss(logits, targets, valid=None) -> Tensor:
    """Mean cross-entropy over unpadded positions."""
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ContractError(f"logits {logits.shape} and targets {targets.shape} disagree")
    w = None if valid is None else np.asarray(valid, dtype=logits.dtype)
    if w is not None and not w.any():
        raise ContractError("every position is padded; action loss undefined")
    return F.cross_entropy(logits, targets, w)


@dataclass
class ActivationStats:
    name: str
    active: Tensor      # kept tokens (differentiable through straight-through gates)
    total: float
    target: float
    omega: float

    def __post_init__(self):
        self.active = as_tensor(self.active)
        if self.total <= 0:
            raise ContractError(f"{self.name}: token total must be positive")
        if not self.omega > 0:
            raise ContractError(f"{self.name}: omega must be positive")
        if not 0.0 <= float(self.active.data) <= self.total:
            raise ContractError(f"{self.name}: active count outside [0, total]")

    @property
    def ratio(self) -> float:
        return float(self.active.data) / self.total


def activation_stats(state: MaskState, keep_spatial: float, keep_temporal: float) -> list:
    """Per-layer counts with ``omega = dim / max dim`` and ``target = p * total``."""
    dmax = max(g.dim for g in state.gates)
    out = []
    for g in state.gates:
        p = keep_spatial if g.kind == "spatial" else keep_temporal
        out.append(ActivationStats(f"{g.kind}{g.layer}", g.active, g.total, p * g.total, g.dim / dmax))
    return out


def efficiency_loss(stats) -> Tensor:
    """Mean over layers of ``(omega * (T_activ - T_target) / T_total) ** 2``."""
    if not stats:
        raise ContractError("efficiency loss needs at least one layer")
    terms = []
    for s in stats:
        dev = (s.active - s.target) * (s.omega / s.total)
        terms.append(dev * dev)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


# -- configuration ----------------------------------------------------------------

@dataclass
class TrainConfig:
    stage: int = 1
    steps: int = 1000
    batch_size: int = 16
    alpha: float = 1.0
    lr: float = 6e-4
    betas: tuple = (0.9, 0.95)
    weight_decay: float = 0.1
    grad_clip: float = 1.0
    warmup_tokens: int = 512 * 20
    final_tokens: int | None = None   # None: tokens seen over the whole run
    lr_floor: float = 0.1
    credit_lr_scale: float = 10.0     # learning-rate multiplier for credit heads
    seed: int = 0
    reward_token: str = "rtg"
    checkpoint_every: int = 0         # 0: only at the end
    eval_every: int = 0               # 0: no in-training evaluation
    eval_episodes: int = 10
    eval_rtg: float | None = None     # None: max dataset return
    ratio_window: int = 100
    cold_start: bool = False          # allow stage 2 without a stage-1 model

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.stage not in (1, 2):
            raise ConfigError("stage must be 1 or 2")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.reward_token not in ("rtg", "reward"):
            raise ConfigError("reward_token must be 'rtg' or 'reward'")

    def adam(self, ctx_len: int) -> AdamConfig:
        final = self.final_tokens or max(self.warmup_tokens + 1, self.steps * self.batch_size * ctx_len)
        return AdamConfig(lr=self.lr, betas=self.betas, weight_decay=self.weight_decay,
                          grad_clip=self.grad_clip, warmup_tokens=self.warmup_tokens,
                          final_tokens=final, lr_floor=self.lr_floor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)


# -- trainer ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    rows: list
    checkpoint: str | None
    model: AdaCredModel
    columns: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows if r.get(name, "") != ""], dtype=float)

    def final_keep_ratios(self, window: int = 100) -> dict:
        keys = [c for c in self.columns if c.startswith("keep_")]
        return {k[5:]: float(self.column(k)[-window:].mean()) for k in keys}


def metric_columns(model: AdaCredModel) -> list:
    keep = [f"keep_{kind}{l}" for l in range(model.cfg.layers) for kind in ("spatial", "temporal")]
    return ["step", "stage", "l_action", "l_eff", "l_total", "lr", "grad_norm", *keep,
            "eval_return_mean", "eval_return_std"]


def _fmt(v) -> str:
    if v == "" or v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_metrics(path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def _rng_state(rng) -> dict:
    return rng.bit_generator.state


def _set_rng_state(rng, state: dict) -> None:
    rng.bit_generator.state = state


class Trainer:
    """Owns the optimizer, the two RNG streams and the metric log of one stage."""

    def __init__(self, model: AdaCredModel, ds: OfflineDataset, cfg: TrainConfig,
                 out_dir=None, env=None, episode_len: int | None = None):
        if model.cfg.ctx_len > max(len(t) for t in ds.trajectories):
            raise ConfigError("context length exceeds every trajectory")
        if tuple(ds.obs_shape) != (model.cfg.channels, model.cfg.height, model.cfg.width):
            raise ConfigError(f"dataset frames {ds.obs_shape} do not match model config")
        if cfg.stage == 2 and getattr(model, "stage_completed", 0) < 1 and not cfg.cold_start:
            raise StateError("stage 2 needs a stage-1 model (or cold_start=True)")
        self.model, self.ds, self.cfg = model, ds, cfg
        self.out_dir = out_dir
        self.env = env
        self.episode_len = episode_len
        ss = np.random.SeedSequence([cfg.seed, cfg.stage])
        self.data_rng, self.model_rng = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2))
        params = model.parameters()
        frozen = model.credit_parameters() if cfg.stage == 1 else set()
        self.params = {k: v for k, v in params.items() if k not in frozen}
        self.no_decay = frozenset(model.no_decay_parameters())
        self.lr_scale = {k: cfg.credit_lr_scale for k in model.credit_parameters() if k in self.params}
        self.opt = OptimizerState(cfg.adam(model.cfg.ctx_len))
        self.step = 0
        self.rows = []
        self.columns = metric_columns(model)
        self.rtg_init = cfg.eval_rtg if cfg.eval_rtg is not None else ds.max_return()
        self.last_good = None

    # -- persistence -----------------------------------------------------------
    def checkpoint_path(self) -> str | None:
        return None if self.out_dir is None else os.path.join(self.out_dir, f"stage{self.cfg.stage}.ckpt")

    def save(self, path=None) -> str:
        path = path or self.checkpoint_path()
        if path is None:
            raise ConfigError("no output directory for checkpoints")
        extra = {}
        for name in self.params:
            if name in self.opt.m:
                extra[f"adam_m/{name}"] = self.opt.m[name]
                extra[f"adam_v/{name}"] = self.opt.v[name]
        extra["norm/mean"] = self.ds.obs_mean
        extra["norm/std"] = self.ds.obs_std
        header = {
            "train_config": self.cfg.to_dict(),
            "train_state": {"step": self.step, "opt_step": self.opt.step, "tokens": self.opt.tokens,
                            "data_rng": _rng_state(self.data_rng),
                            "model_rng": _rng_state(self.model_rng)},
            "stage_completed": getattr(self.model, "stage_completed", 0),
            "rows": self.rows,
            "imitation_mode": self.ds.imitation_mode,
            "rtg_init": self.rtg_init,
            "env": self.ds.env,
        }
        save_model(path, self.model, extra, header)
        self.last_good = path
        return path

    def restore(self, path) -> None:
        """Resume mid-stage from a checkpoint written by :meth:`save`."""
        loaded, arrays, header = load_model(path)
        if loaded.cfg != self.model.cfg:
            raise ConfigError("checkpoint model config differs from the current model")
        if header["train_config"]["stage"] != self.cfg.stage:
            raise ConfigError("checkpoint belongs to a different stage")
        for name, p in self.model.parameters().items():
            p.data = loaded.parameters()[name].data
        st = header["train_state"]
        self.step = st["step"]
        self.opt.step, self.opt.tokens = st["opt_step"], st["tokens"]
        self.opt.m = {k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")}
        self.opt.v = {k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")}
        _set_rng_state(self.data_rng, st["data_rng"])
        _set_rng_state(self.model_rng, st["model_rng"])
        self.rows = header["rows"]
        self.model.stage_completed = header.get("stage_completed", 0)

    # -- optimization ----------------------------------------------------------
    def train_step(self) -> dict:
        model, cfg = self.model, self.cfg
        mc = model.cfg
        batch = sample_batch(self.ds, cfg.batch_size, mc.ctx_len, self.data_rng,
                             start_id=mc.start_id, reward_token=cfg.reward_token)
        for p in self.params.values():
            p.grad = None
        with Tape() as tape:
            logits, state = model(batch.observations, batch.prev_actions, batch.rtg, batch.valid,
                                  training=True, rng=self.model_rng, force_ones=cfg.stage == 1)
            la = action_loss(logits, batch.actions, batch.valid)
            if cfg.stage == 2:
                stats = activation_stats(state, mc.keep_spatial, mc.keep_temporal)
                le = efficiency_loss(stats)
                loss = la + le * cfg.alpha
            else:
                le = None
                loss = la
        l_action = float(la.data)
        l_eff = float(le.data) if le is not None else 0.0
        if not (math.isfinite(l_action) and math.isfinite(l_eff)):
            raise NumericalError(f"non-finite loss at step {self.step}")
        tape.backward(loss, leaves=list(self.params.values()))
        grads = {k: p.grad for k, p in self.params.items()}
        info = adam_step(self.params, grads, self.opt, int(batch.valid.sum()), self.no_decay,
                         self.lr_scale)
        self.step += 1
        row = {"step": self.step, "stage": cfg.stage, "l_action": l_action, "l_eff": l_eff,
               "l_total": l_action + cfg.alpha * l_eff, "lr": info["lr"],
               "grad_norm": info["grad_norm"]}
        for g in state.gates:
            row[f"keep_{g.kind}{g.layer}"] = g.ratio
        return row

    def run(self, steps: int | None = None) -> TrainResult:
        """Train up to ``cfg.steps`` (or ``steps`` more); NaN aborts with the last good checkpoint."""
        cfg = self.cfg
        end = cfg.steps if steps is None else min(cfg.steps, self.step + steps)
        if self.out_dir is not None:
            os.makedirs(self.out_dir, exist_ok=True)
            if self.step == 0 and cfg.checkpoint_every:
                self.save()
        while self.step < end:
            try:
                row = self.train_step()
            except NumericalError as exc:
                where = f"; last good checkpoint: {self.last_good}" if self.last_good else ""
                self._flush()
                raise NumericalError(f"training diverged: {exc}{where}") from None
            if cfg.eval_every and self.env is not None and self.step % cfg.eval_every == 0:
                res = evaluate(self.model, self.env, cfg.eval_episodes, self.rtg_init, seed=cfg.seed,
                               norm=(self.ds.obs_mean, self.ds.obs_std), episode_len=self.episode_len,
                               imitation=self.ds.imitation_mode, force_ones=cfg.stage == 1)
                row["eval_return_mean"], row["eval_return_std"] = res.mean, res.std
            self.rows.append(row)
            if self.step % 100 == 0:
                log.info("stage %d step %d l_action %.4f l_eff %.4f", cfg.stage, self.step,
                         row["l_action"], row["l_eff"])
            if cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0 and self.out_dir:
                self.save()
        if self.step >= cfg.steps:
            self.model.stage_completed = max(getattr(self.model, "stage_completed", 0), cfg.stage)
        ckpt = self.save() if self.out_dir is not None else None
        self._flush()
        return TrainResult(self.rows, ckpt, self.model, self.columns)

    def _flush(self):
        if self.out_dir is not None:
            write_metrics(os.path.join(self.out_dir, f"metrics_stage{self.cfg.stage}.csv"),
                          self.columns, self.rows)


def train_stage1(model, ds, cfg: TrainConfig | None = None, out_dir=None, resume=None,
                 env=None, **kw) -> TrainResult:
    cfg = cfg or TrainConfig()
    if cfg.stage != 1:
        raise ConfigError("train_stage1 needs a stage-1 config")
    tr = Trainer(model, ds, cfg, out_dir, env, **kw)
    if resume:
        tr.restore(resume)
    return tr.run()


def train_stage2(model, ds, cfg: TrainConfig, out_dir=None, resume=None, env=None, **kw) -> TrainResult:
    if cfg.stage != 2:
        raise ConfigError("train_stage2 needs a stage-2 config")
    tr = Trainer(model, ds, cfg, out_dir, env, **kw)
    if resume:
        tr.restore(resume)
    return tr.run()


def load_trained(path):
    """Model plus its normalization stats and eval conditioning from a checkpoint."""
    model, arrays, header = load_model(path)
    model.stage_completed = header.get("stage_completed", 0)
    norm = (arrays.get("norm/mean"), arrays.get("norm/std"))
    return model, norm, header


# -- evaluation ------------------------------------------------------------------------

@dataclass
class EvalResult:
    returns: np.ndarray
    actions: np.ndarray       # (episodes, T) decoded actions, the episode traces

    @property
    def mean(self) -> float:
        return float(self.returns.mean())

    @property
    def std(self) -> float:
        return float(self.returns.std())


def evaluate(model: AdaCredModel, env, episodes: int, rtg_init: float, seed: int = 0,
             norm=None, episode_len: int | None = None, imitation: bool = False,
             force_ones: bool = False) -> EvalResult:
    """Greedy closed-loop control of ``episodes`` independent env copies in lockstep.

    The model sees a rolling window of the last ``ctx_len`` steps; the
    return-to-go token starts at ``rtg_init`` and is decremented by each
    observed reward (held at zero in imitation mode).
    """
    mc = model.cfg
    T = episode_len or getattr(getattr(env, "spec", None), "episode_length", None)
    if T is None:
        raise ConfigError("episode length unknown; pass episode_len")
    envs = [copy.deepcopy(env) for _ in range(episodes)]
    seeds = np.random.SeedSequence(seed).generate_state(episodes)
    first = [e.reset(int(s))[0] for e, s in zip(envs, seeds)]
    obs_shape = np.asarray(first[0]).shape
    if obs_shape != (mc.channels, mc.height, mc.width):
        raise ConfigError(f"env observations {obs_shape} do not match model config")
    ctx = mc.ctx_len
    mean, std = norm if norm is not None and norm[0] is not None else (None, None)

    def prep(o):
        o = np.asarray(o, dtype=np.float32)
        return o if mean is None else normalize_obs(o, mean, std, len(obs_shape))

    obs_hist = np.zeros((episodes, T + 1) + obs_shape, dtype=np.float32)
    prev_hist = np.full((episodes, T + 1), mc.start_id, dtype=np.int64)
    rtg_hist = np.zeros((episodes, T + 1), dtype=np.float32)
    obs_hist[:, 0] = prep(np.stack(first))
    rtg = np.full(episodes, 0.0 if imitation else rtg_init, dtype=np.float64)
    rtg_hist[:, 0] = rtg
    returns = np.zeros(episodes)
    actions = np.zeros((episodes, T), dtype=np.int64)
    for t in range(T):
        lo = max(0, t + 1 - ctx)
        n = t + 1 - lo
        ob = np.zeros((episodes, ctx) + obs_shape, dtype=np.float32)
        pa = np.full((episodes, ctx), mc.start_id, dtype=np.int64)
        rt = np.zeros((episodes, ctx), dtype=np.float32)
        valid = np.zeros((episodes, ctx), dtype=bool)
        ob[:, ctx - n:] = obs_hist[:, lo:t + 1]
        pa[:, ctx - n:] = prev_hist[:, lo:t + 1]
        rt[:, ctx - n:] = rtg_hist[:, lo:t + 1]
        valid[:, ctx - n:] = True
        a = model.act(ob, pa, rt, valid, force_ones=force_ones)
        actions[:, t] = a
        for i, e in enumerate(envs):
            o, r, _, _ = e.step(int(a[i]))
            obs_hist[i, t + 1] = prep(o)
            returns[i] += r
            if not imitation:
                rtg[i] -= r
        prev_hist[:, t + 1] = a
        rtg_hist[:, t + 1] = rtg
    return EvalResult(returns, actions)


def evaluate_seeds(model, env, seeds, episodes: int, rtg_init: float, **kw) -> dict:
    """Per-seed means; the headline mean and its std across seeds."""
    per_seed = [evaluate(model, env, episodes, rtg_init, seed=s, **kw) for s in seeds]
    means = np.array([r.mean for r in per_seed])
    all_returns = np.concatenate([r.returns for r in per_seed])
    return {"mean": float(all_returns.mean()), "std": float(all_returns.std()),
            "seed_means": means.tolist(), "sem": float(all_returns.std() / math.sqrt(len(all_returns)))}
