"""Command-line entry point: data generation, training, evaluation, sweeps, masks, causal checks.

Every command writes its artifacts plus one ``manifest.json`` under ``--out``.
Settings resolve as defaults < ``--config`` file (``key = value`` lines) <
flags; ``ADACRED_SEED`` replaces the default seed but loses to an explicit
``--seed`` or a config-file seed. ``replay`` re-executes a manifest.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import AdacredError, ConfigError, DependencyError, RangeError

log = logging.getLogger("adacred")

MIXED_EPS = (0.0, 0.25, 0.5, 1.0)
DEFAULT_GRID = "50:50,50:100,40:80,100:50,100:100"


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _opt_float(v):
    return None if v in (None, "", "none", "None") else float(v)


def _opt_int(v):
    return None if v in (None, "", "none", "None") else int(v)


def _opt_str(v):
    return None if v in (None, "", "none", "None") else str(v)


# name -> list of (dest, type, default, help, choices); bools become --flag / --no-flag
OPTIONS = {
    "gen-data": [
        ("env", str, None, "environment (required)", ("keydoor", "latent")),
        ("episodes", int, 200, "number of episodes", None),
        ("policy", str, "mixed", "behavior policy", ("scripted", "random", "eps-greedy", "mixed")),
        ("eps", float, 0.25, "exploration rate for eps-greedy", None),
        ("episode_len", int, 30, "steps per episode", None),
        ("distractors", _bool, True, "animated distractor strip (keydoor)", None),
        ("delay", int, 5, "steps between key pickup and door payout (keydoor)", None),
        ("imitation", _bool, False, "store zeroed rewards (imitation mode)", None),
        ("gamma", float, 1.0, "discount for returns-to-go", None),
        ("d", int, 4, "latent dims (latent env)", None),
        ("density", float, 0.4, "mask edge density (latent env)", None),
        ("seed", int, 0, "seed", None),
    ],
    "train": [
        ("data", str, None, "dataset file (required)", None),
        ("stage", int, 1, "training stage", (1, 2)),
        ("init", _opt_str, None, "stage-1 checkpoint (required for stage 2)", None),
        ("cold_start", _bool, False, "allow stage 2 without a stage-1 checkpoint", None),
        ("resume", _opt_str, None, "resume mid-stage from this checkpoint", None),
        ("preset", str, "desk", "model preset", ("desk", "atari", "micro")),
        ("ctx", _opt_int, None, "context length (stage 1 default 10; stage 2 inherits)", None),
        ("keep_spatial", float, 75.0, "spatial keep percentage", None),
        ("keep_temporal", float, 75.0, "temporal keep percentage", None),
        ("steps", int, 1000, "optimizer steps", None),
        ("batch", int, 16, "batch size", None),
        ("lr", _opt_float, None, "learning rate (stage 1 default 1e-3, stage 2 1e-4)", None),
        ("alpha", _opt_float, None, "efficiency-loss weight (default: tuned value)", None),
        ("credit_lr_scale", float, 10.0, "learning-rate multiplier for credit heads", None),
        ("reward_token", str, "rtg", "reward token", ("rtg", "reward")),
        ("eval_every", int, 0, "evaluate every N steps (0: never)", None),
        ("eval_episodes", int, 10, "episodes per in-training evaluation", None),
        ("checkpoint_every", int, 0, "checkpoint every N steps (0: at the end)", None),
        ("seed", int, 0, "seed", None),
    ],
    "eval": [
        ("ckpt", str, None, "checkpoint (required)", None),
        ("episodes", int, 10, "episodes per seed", None),
        ("seeds", int, 10, "number of evaluation seeds", None),
        ("rtg", _opt_float, None, "initial return-to-go (default: from checkpoint)", None),
        ("seed", int, 0, "first evaluation seed", None),
    ],
    "sweep": [
        ("data", str, None, "dataset file (required)", None),
        ("init", str, None, "stage-1 checkpoint (required)", None),
        ("grid", str, DEFAULT_GRID, "keep-percentage cells 'ps:pt,...'", None),
        ("steps", int, 1000, "stage-2 steps per cell", None),
        ("lr", float, 1e-4, "stage-2 learning rate", None),
        ("alpha", _opt_float, None, "efficiency-loss weight (default: tuned value)", None),
        ("train", _bool, True, "train missing cells (else evaluate existing ones only)", None),
        ("episodes", int, 10, "episodes per seed", None),
        ("seeds", int, 10, "evaluation seeds", None),
        ("seed", int, 0, "seed", None),
    ],
    "masks": [
        ("ckpt", str, None, "checkpoint (required)", None),
        ("data", str, None, "dataset file (required)", None),
        ("traj", int, 0, "trajectory index", None),
        ("start", int, 0, "first step of the window", None),
        ("layer", int, 0, "layer drawn in the SVG", None),
        ("force_ones", _bool, False, "draw all-ones masks (no pruning)", None),
        ("seed", int, 0, "seed (unused; recorded for the manifest)", None),
    ],
    "causal": [
        ("spec", _opt_str, None, "latent MDP spec JSON (default: generated)", None),
        ("d", int, 4, "latent dims for a generated spec", None),
        ("density", float, 0.4, "edge density for a generated spec", None),
        ("noise", float, 0.1, "noise std for a generated spec", None),
        ("identify", _bool, False, "run structure identification", None),
        ("prune_check", _bool, False, "run the pruning-invariance check", None),
        ("transitions", int, 10000, "transitions for identification", None),
        ("level", float, 0.01, "family-wise significance level", None),
        ("lam", _opt_float, None, "also run the L1-relaxed variant with this lambda", None),
        ("horizon", int, 5, "planning horizon for the pruning check", None),
        ("samples", int, 500, "sampled states for the pruning check", None),
        ("seed", int, 0, "seed", None),
    ],
}

INPUT_KEYS = ("data", "init", "resume", "ckpt", "spec")


# -- config resolution ------------------------------------------------------------------------

def read_config_file(path, command: str) -> dict:
    if not os.path.exists(path):
        raise DependencyError(f"config file {path} not found")
    table = {o[0]: o for o in OPTIONS[command]}
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in table:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for {command}")
            out[key] = _convert(table[key], val)
    return out


def _convert(opt, val):
    dest, typ, _, _, choices = opt
    try:
        v = typ(val)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {val!r} for {dest}") from None
    if choices and v not in choices:
        raise ConfigError(f"{dest} must be one of {list(choices)}, got {v!r}")
    return v


def resolve(command: str, flags: dict, config_path=None, environ=None) -> dict:
    """Materialize every setting: defaults < env seed < config file < flags."""
    environ = os.environ if environ is None else environ
    cfg = {o[0]: o[2] for o in OPTIONS[command]}
    if "ADACRED_SEED" in environ and "seed" in cfg:
        try:
            cfg["seed"] = int(environ["ADACRED_SEED"])
        except ValueError:
            raise ConfigError("ADACRED_SEED must be an integer") from None
    if config_path:
        cfg.update(read_config_file(config_path, command))
    cfg.update({k: v for k, v in flags.items() if k in cfg})
    for key in INPUT_KEYS:
        if cfg.get(key):
            cfg[key] = os.path.abspath(cfg[key])
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adacred", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"adacred {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=f"{name} command")
        p.add_argument("--out", default=None, help="output directory (default: runs/<command>)")
        p.add_argument("--config", default=None, help="key = value settings file")
        for dest, typ, default, help_, choices in opts:
            flag = "--" + dest.replace("_", "-")
            if typ is _bool:
                p.add_argument(flag, dest=dest, action="store_true", default=argparse.SUPPRESS, help=help_)
                p.add_argument("--no-" + dest.replace("_", "-"), dest=dest, action="store_false",
                               default=argparse.SUPPRESS)
            else:
                p.add_argument(flag, dest=dest, type=typ,
                               choices=choices, default=argparse.SUPPRESS,
                               help=f"{help_} (default: {default})")
    rp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    rp.add_argument("manifest")
    rp.add_argument("--out", default=None, help="output directory (default: <run>-replay)")
    return parser


# -- manifest ------------------------------------------------------------------------------------

def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_hash(command: str, cfg: dict) -> str:
    h = hashlib.sha256()
    h.update(command.encode())
    h.update(json.dumps(cfg, sort_keys=True).encode())
    for key in INPUT_KEYS:
        path = cfg.get(key)
        if path and os.path.isfile(path):
            h.update(key.encode())
            h.update(_sha256_file(path).encode())
    return h.hexdigest()


def write_manifest(out: str, command: str, cfg: dict, started: float, artifacts) -> str:
    doc = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "input_hash": input_hash(command, cfg),
        "started": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "version": __version__,
        "artifacts": [{"path": os.path.relpath(p, out), "sha256": _sha256_file(p)}
                      for p in sorted(artifacts)],
    }
    path = os.path.join(out, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


# -- shared helpers ----------------------------------------------------------------------------

def _need(cfg, key, command):
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"{command}: --{key.replace('_', '-')} is required")


def _need_file(path, what):
    if not os.path.isfile(path):
        raise DependencyError(f"{what} {path} not found")


def _load_data(path):
    from .dataset import read_dataset
    _need_file(path, "dataset")
    return read_dataset(path)


def _load_ckpt(path):
    from .training import load_trained
    _need_file(path, "checkpoint")
    return load_trained(path)


def _keep(pct: float, name: str) -> float:
    if not 0.0 < pct <= 100.0:
        raise ConfigError(f"{name} must lie in (0, 100], got {pct}")
    return pct / 100.0


def _parse_grid(text: str) -> list:
    cells = []
    for part in text.split(","):
        try:
            ps, pt = (float(x) for x in part.split(":"))
        except ValueError:
            raise ConfigError(f"bad grid cell {part!r}; expected ps:pt") from None
        cells.append((ps, pt))
    if not cells:
        raise ConfigError("empty sweep grid")
    return cells


def _cell_name(ps, pt) -> str:
    return f"{ps:g}_{pt:g}"


# -- commands --------------------------------------------------------------------------------

def cmd_gen_data(cfg: dict, out: str) -> list:
    from .dataset import OfflineDataset, Trajectory, write_dataset
    from .envs import GridWorldSpec, KeyDoorEnv, LatentMDPEnv, collect, describe_env, make_latent_mdp

    _need(cfg, "env", "gen-data")
    if cfg["episodes"] < 1 or cfg["episode_len"] < 1:
        raise ConfigError("episodes and episode-len must be >= 1")
    if cfg["env"] == "keydoor":
        env = KeyDoorEnv(GridWorldSpec(distractors=cfg["distractors"], delay=cfg["delay"],
                                       episode_length=cfg["episode_len"]))
    else:
        env = LatentMDPEnv(make_latent_mdp(cfg["seed"], cfg["d"], cfg["density"],
                                           horizon=cfg["episode_len"]))
    kind, eps = cfg["policy"], (cfg["eps"],)
    if kind == "mixed":
        kind, eps = "eps-greedy", MIXED_EPS
    trajs = collect(env, cfg["episodes"], cfg["episode_len"], cfg["seed"], kind=kind, eps_values=eps)
    behavior = float(np.mean([t.ret for t in trajs]))
    if cfg["imitation"]:
        trajs = [Trajectory(t.observations, t.actions, np.zeros_like(t.rewards), cfg["gamma"], t.metadata)
                 for t in trajs]
    ds = OfflineDataset(trajs, gamma=cfg["gamma"], imitation_mode=cfg["imitation"], env=describe_env(env))
    path = os.path.join(out, "dataset.adcr")
    write_dataset(ds, path)
    stored = float(np.mean([t.ret for t in trajs]))
    print(f"trajectories: {len(ds)}  mean return: {stored:.4f}"
          + (f"  (behavior return before zeroing: {behavior:.4f})" if cfg["imitation"] else ""))
    return [path]


def cmd_train(cfg: dict, out: str) -> list:
    from .model import AdaCredModel, preset
    from .plots import line_chart, save_svg
    from .training import TUNED_ALPHA, TrainConfig, Trainer
    from .envs import make_env

    _need(cfg, "data", "train")
    ds = _load_data(cfg["data"])
    ks, kt = _keep(cfg["keep_spatial"], "keep-spatial"), _keep(cfg["keep_temporal"], "keep-temporal")
    stage = cfg["stage"]
    env = make_env(ds.env) if ds.env else None
    if stage == 2 and not cfg["cold_start"]:
        if not cfg["init"]:
            raise DependencyError("stage 2 needs --init <stage-1 checkpoint> (or --cold-start)")
        _need_file(cfg["init"], "stage-1 checkpoint")
    if cfg["init"]:
        model, _, header = _load_ckpt(cfg["init"])
        if cfg["ctx"] is not None and cfg["ctx"] != model.cfg.ctx_len:
            raise ConfigError(f"--ctx {cfg['ctx']} differs from the checkpoint's {model.cfg.ctx_len}")
        model.cfg = model.cfg.with_(keep_spatial=ks, keep_temporal=kt)
    else:
        c, h, w = ds.obs_shape
        n_actions = env.n_actions if env is not None else int(max(t.actions.max() for t in ds.trajectories)) + 1
        model = AdaCredModel(preset(cfg["preset"], ctx_len=cfg["ctx"] or 10, channels=c, height=h,
                                    width=w, n_actions=n_actions, keep_spatial=ks, keep_temporal=kt,
                                    seed=cfg["seed"]))
    cfg["ctx"] = model.cfg.ctx_len
    if cfg["lr"] is None:
        # stage 2 fine-tunes a trained model; the credit heads still get credit_lr_scale x this
        cfg["lr"] = 1e-3 if stage == 1 else 1e-4
    if cfg["alpha"] is None:
        cfg["alpha"] = TUNED_ALPHA
    tc = TrainConfig(stage=stage, steps=cfg["steps"], batch_size=cfg["batch"], alpha=cfg["alpha"],
                     lr=cfg["lr"], credit_lr_scale=cfg["credit_lr_scale"], seed=cfg["seed"],
                     reward_token=cfg["reward_token"], eval_every=cfg["eval_every"],
                     eval_episodes=cfg["eval_episodes"], checkpoint_every=cfg["checkpoint_every"],
                     cold_start=cfg["cold_start"])
    tr = Trainer(model, ds, tc, out_dir=out, env=env if cfg["eval_every"] else None)
    if cfg["resume"]:
        _need_file(cfg["resume"], "resume checkpoint")
        tr.restore(cfg["resume"])
    res = tr.run()
    metrics = os.path.join(out, f"metrics_stage{stage}.csv")
    steps = res.column("step")
    series = {"l_action": (steps, res.column("l_action"))}
    if stage == 2:
        series.update({c[5:]: (steps, res.column(c)) for c in res.columns if c.startswith("keep_")})
    plot = os.path.join(out, f"curves_stage{stage}.svg")
    save_svg(plot, line_chart(series, f"stage {stage} training", ylabel="value"))
    last = res.rows[-1] if res.rows else {}
    ratios = res.final_keep_ratios(min(100, max(1, len(res.rows)))) if res.rows else {}
    print(f"stage {stage}: {tr.step} steps  l_action {last.get('l_action', float('nan')):.4f}  "
          + "  ".join(f"{k} {v:.3f}" for k, v in ratios.items()))
    return [res.checkpoint, metrics, plot]


def _evaluate(ckpt, episodes, seeds, rtg, seed0):
    from .envs import make_env
    from .training import evaluate

    model, norm, header = _load_ckpt(ckpt)
    if not header.get("env"):
        raise DependencyError(f"checkpoint {ckpt} does not record its environment")
    env = make_env(header["env"])
    rtg = header.get("rtg_init", 1.0) if rtg is None else rtg
    imitation = bool(header.get("imitation_mode", False))
    # stage-1 models never saw a mask during training
    force_ones = header.get("train_config", {}).get("stage") == 1
    per_seed = []
    for s in range(seeds):
        res = evaluate(model, env, episodes, rtg, seed=seed0 + s, norm=norm, imitation=imitation,
                       force_ones=force_ones)
        per_seed.append(res)
    returns = np.concatenate([r.returns for r in per_seed])
    return per_seed, returns, header


def cmd_eval(cfg: dict, out: str) -> list:
    import csv
    _need(cfg, "ckpt", "eval")
    if cfg["episodes"] < 1 or cfg["seeds"] < 1:
        raise ConfigError("episodes and seeds must be >= 1")
    per_seed, returns, _ = _evaluate(cfg["ckpt"], cfg["episodes"], cfg["seeds"], cfg["rtg"], cfg["seed"])
    path = os.path.join(out, "eval.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "episode", "return"])
        for s, res in enumerate(per_seed):
            for e, r in enumerate(res.returns):
                w.writerow([cfg["seed"] + s, e, repr(float(r))])
    summary = {"episodes": int(returns.size), "mean": float(returns.mean()), "std": float(returns.std()),
               "sem": float(returns.std() / np.sqrt(returns.size)),
               "seed_means": [float(r.mean) for r in per_seed]}
    spath = os.path.join(out, "eval_summary.json")
    with open(spath, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"return {summary['mean']:.4f} ± {summary['std']:.4f} over {summary['episodes']} episodes")
    return [path, spath]


def cmd_sweep(cfg: dict, out: str) -> list:
    import csv
    from .plots import bar_chart, save_svg
    from .training import TUNED_ALPHA

    for key in ("data", "init"):
        _need(cfg, key, "sweep")
    _need_file(cfg["data"], "dataset")
    _need_file(cfg["init"], "stage-1 checkpoint")
    cells = _parse_grid(cfg["grid"])
    if (100.0, 100.0) not in cells:
        cells.append((100.0, 100.0))          # the unpruned reference is always reported
    if cfg["alpha"] is None:
        cfg["alpha"] = TUNED_ALPHA
    rows, artifacts = [], []
    for ps, pt in cells:
        cell_dir = os.path.join(out, f"cell_{_cell_name(ps, pt)}")
        ckpt = os.path.join(cell_dir, "stage2.ckpt")
        row = {"keep_spatial": ps, "keep_temporal": pt, "status": "ok"}
        try:
            if cfg["train"] and not os.path.isfile(ckpt):
                os.makedirs(cell_dir, exist_ok=True)
                train_cfg = resolve("train", {"data": cfg["data"], "stage": 2, "init": cfg["init"],
                                              "keep_spatial": ps, "keep_temporal": pt,
                                              "steps": cfg["steps"], "lr": cfg["lr"],
                                              "alpha": cfg["alpha"], "seed": cfg["seed"]}, environ={})
                artifacts += [p for p in cmd_train(train_cfg, cell_dir) if p]
            per_seed, returns, _ = _evaluate(ckpt, cfg["episodes"], cfg["seeds"], None, cfg["seed"])
            row.update(mean=float(returns.mean()), std=float(returns.std()),
                       sem=float(returns.std() / np.sqrt(returns.size)), episodes=int(returns.size))
        except AdacredError as exc:
            log.warning("cell (%g, %g) absent: %s", ps, pt, exc)
            row.update(status="absent", mean="", std="", sem="", episodes=0)
        rows.append(row)
    path = os.path.join(out, "sweep.csv")
    cols = ["keep_spatial", "keep_temporal", "status", "mean", "std", "sem", "episodes"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in cols])
    labels = [f"({r['keep_spatial']:g},{r['keep_temporal']:g})" for r in rows]
    absent = {lab for lab, r in zip(labels, rows) if r["status"] != "ok"}
    means = [r["mean"] if r["status"] == "ok" else float("nan") for r in rows]
    errs = [r["std"] if r["status"] == "ok" else 0.0 for r in rows]
    plot = os.path.join(out, "sweep.svg")
    save_svg(plot, bar_chart(labels, means, errs, "return by keep percentages (spatial, temporal)",
                             absent=absent))
    for lab, r in zip(labels, rows):
        print(f"{lab:>12} " + (f"{r['mean']:.4f} ± {r['std']:.4f}" if r["status"] == "ok" else "absent"))
    return [path, plot] + artifacts


def cmd_masks(cfg: dict, out: str) -> list:
    from .dataset import normalize_obs, window
    from .numerics import no_grad
    from .plots import mask_overlay, save_svg

    for key in ("ckpt", "data"):
        _need(cfg, key, "masks")
    model, norm, _ = _load_ckpt(cfg["ckpt"])
    ds = _load_data(cfg["data"])
    if not 0 <= cfg["traj"] < len(ds):
        raise RangeError(f"trajectory {cfg['traj']} outside [0, {len(ds)})")
    traj = ds.trajectories[cfg["traj"]]
    ctx = model.cfg.ctx_len
    if cfg["start"] < 0 or cfg["start"] + ctx > len(traj):
        raise RangeError(f"window [{cfg['start']}, {cfg['start'] + ctx}) exceeds trajectory of "
                         f"{len(traj)} steps")
    if not 0 <= cfg["layer"] < model.cfg.layers:
        raise RangeError(f"layer {cfg['layer']} outside [0, {model.cfg.layers})")
    obs, prev, tok, _, valid = window(ds, cfg["traj"], cfg["start"], ctx, model.cfg.start_id)
    mean, std = norm if norm[0] is not None else (ds.obs_mean, ds.obs_std)
    x = normalize_obs(obs, mean, std, len(ds.obs_shape))
    with no_grad():
        _, state = model(x[None], prev[None], tok[None], valid[None], training=False,
                         force_ones=cfg["force_ones"])
    n_p = model.cfg.n_patches
    spatial, temporal = [], []
    for g in state.of("spatial"):
        m = np.ones((ctx, n_p)) if g.mask is None else np.asarray(g.mask.data)[0]
        spatial.append(m.astype(np.int8))
    for g in state.of("temporal"):
        m = np.ones(2 * ctx) if g.mask is None else np.asarray(g.mask.data)[0].reshape(-1)
        temporal.append(m.astype(np.int8))
    events = [(name, int(t) - cfg["start"]) for name, t in traj.metadata.get("events", [])
              if cfg["start"] <= int(t) < cfg["start"] + ctx]
    doc = {"steps": list(range(cfg["start"], cfg["start"] + ctx)),
           "spatial": [m.tolist() for m in spatial],
           "temporal": [m.tolist() for m in temporal],
           "temporal_group": [m[0::2].tolist() for m in temporal],
           "temporal_state": [m[1::2].tolist() for m in temporal],
           "events": [[n, t] for n, t in events],
           "keep_ratios": {k: float(v) for k, v in state.ratios().items()}}
    jpath = os.path.join(out, "masks.json")
    with open(jpath, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    layer = cfg["layer"]
    svg = mask_overlay(obs[:, 0], spatial[layer], temporal[layer][0::2], model.cfg.patch,
                       f"layer {layer} masks, steps {cfg['start']}..{cfg['start'] + ctx - 1}",
                       events=events)
    spath = os.path.join(out, "masks.svg")
    save_svg(spath, svg)
    print("keep ratios: " + "  ".join(f"{k} {v:.3f}" for k, v in doc["keep_ratios"].items()))
    return [jpath, spath]


def cmd_causal(cfg: dict, out: str) -> list:
    from .causal import (compact_partition, edge_f1, identify_structure, identify_structure_relaxed,
                         minimal_sufficient_set, prune_invariance_check, simulate, write_report)
    from .envs import LatentMDPSpec, make_latent_mdp

    if cfg["spec"]:
        _need_file(cfg["spec"], "spec")
        with open(cfg["spec"]) as fh:
            spec = LatentMDPSpec.from_json(fh.read())
    else:
        spec = make_latent_mdp(cfg["seed"], cfg["d"], cfg["density"], noise=cfg["noise"])
    run_id, run_prune = cfg["identify"], cfg["prune_check"]
    if not run_id and not run_prune:
        run_id = run_prune = True
    report = {"spec": spec.to_dict(), "partition": compact_partition(spec.masks),
              "minimal_sufficient_set": minimal_sufficient_set(spec.masks)}
    if run_prune:
        rep = prune_invariance_check(spec, cfg["horizon"], cfg["samples"], seed=cfg["seed"])
        report["prune_check"] = rep
        print(f"pruning check: pruned {rep.pruned}  disagreement fraction {rep.fraction:.4f}")
    if run_id:
        ro = simulate(spec, cfg["transitions"], seed=cfg["seed"])
        est = identify_structure(ro, level=cfg["level"])
        f1 = edge_f1(est.masks, spec.masks)
        report["identify"] = {"estimate": est, "f1": f1}
        print(f"identification: F1 {f1:.4f} over {ro.n_transitions} transitions")
        if cfg["lam"] is not None:
            rel = identify_structure_relaxed(ro, lam=cfg["lam"])
            report["identify_relaxed"] = {"estimate": rel, "f1": edge_f1(rel.masks, spec.masks,
                                          keys=["c_gg", "c_ag", "c_rg", "c_gr", "c_ar"])}
    path = os.path.join(out, "causal.json")
    write_report(path, report)
    return [path]


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "masks": cmd_masks, "causal": cmd_causal}


def run_command(command: str, cfg: dict, out: str) -> str:
    """Execute one command with a fully resolved config; returns the manifest path."""
    os.makedirs(out, exist_ok=True)
    started = time.time()
    artifacts = COMMANDS[command](cfg, out)
    return write_manifest(out, command, cfg, started, [p for p in artifacts if p and os.path.isfile(p)])


def cmd_replay(manifest_path: str, out: str | None) -> int:
    _need_file(manifest_path, "manifest")
    with open(manifest_path) as fh:
        doc = json.load(fh)
    if doc.get("command") not in COMMANDS:
        raise ConfigError(f"manifest names unknown command {doc.get('command')!r}")
    src = os.path.dirname(os.path.abspath(manifest_path))
    out = out or src.rstrip("/") + "-replay"
    cfg = dict(doc["config"])
    new_manifest = run_command(doc["command"], cfg, out)
    with open(new_manifest) as fh:
        new = {a["path"]: a["sha256"] for a in json.load(fh)["artifacts"]}
    mismatched = []
    for art in doc["artifacts"]:
        if art["path"].endswith((".csv", ".json")):
            same = new.get(art["path"]) == art["sha256"]
            print(f"{'identical' if same else 'DIFFERS  '}  {art['path']}")
            if not same:
                mismatched.append(art["path"])
    return 1 if mismatched else 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args.manifest, args.out)
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "out", "config")}
        cfg = resolve(args.command, flags, args.config)
        out = args.out or os.path.join("runs", args.command)
        path = run_command(args.command, cfg, out)
        print(f"manifest: {path}")
        return 0
    except AdacredError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DependencyError.exit_code


if __name__ == "__main__":
    sys.exit(main())
