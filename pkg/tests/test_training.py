import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adacred.dataset import OfflineDataset, sample_batch
from adacred.envs import KeyDoorEnv, collect
from adacred.errors import ConfigError, ContractError, NumericalError, StateError
from adacred.model import AdaCredModel, preset
from adacred.numerics import Tape, Tensor, no_grad
from adacred.training import (TUNED_ALPHA, ActivationStats, TrainConfig, Trainer, action_loss,
                              activation_stats, efficiency_loss, evaluate, load_trained,
                              train_stage1)

SMALL = preset("desk", ctx_len=4, spatial_dim=16, temporal_dim=16, keep_spatial=0.75,
               keep_temporal=0.75)


@pytest.fixture(scope="module")
def env():
    return KeyDoorEnv()


@pytest.fixture(scope="module")
def scripted_ds(env):
    return OfflineDataset(collect(env, 40, 30, seed=0, kind="scripted"), env="keydoor")


@pytest.fixture(scope="module")
def mixed_ds(env):
    trajs = collect(env, 60, 30, seed=1, kind="eps-greedy", eps_values=(0.0, 0.5, 1.0))
    return OfflineDataset(trajs, env="keydoor")


@pytest.fixture(scope="module")
def scripted_run(scripted_ds, tmp_path_factory):
    out = tmp_path_factory.mktemp("s1")
    model = AdaCredModel(SMALL)
    res = train_stage1(model, scripted_ds, TrainConfig(steps=200, lr=1e-3), out_dir=str(out))
    return model, res


@pytest.fixture(scope="module")
def mixed_stage1(mixed_ds):
    model = AdaCredModel(SMALL)
    res = train_stage1(model, mixed_ds, TrainConfig(steps=120, lr=1e-3))
    return model, res


def clone(model):
    twin = AdaCredModel(model.cfg)
    for name, p in twin.parameters().items():
        p.data = model.parameters()[name].data.copy()
    twin.stage_completed = model.stage_completed
    return twin


def credit_checksum(model):
    params = model.parameters()
    return sum(float(np.abs(params[k].data).sum()) for k in sorted(model.credit_parameters()))


# -- action loss -------------------------------------------------------------------

@pytest.mark.parametrize("k", [2, 4, 18])
def test_uniform_logits_give_log_k(k):
    loss = action_loss(np.zeros((3, 5, k)), np.zeros((3, 5), dtype=int))
    assert float(loss.data) == pytest.approx(math.log(k), abs=1e-6)


def test_confident_correct_logits_give_zero_loss():
    targets = np.array([[0, 2, 1]])
    logits = np.full((1, 3, 3), -50.0)
    logits[0, np.arange(3), targets[0]] = 50.0
    assert float(action_loss(logits, targets).data) < 1e-12


def test_action_loss_matches_scalar_loop():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 6, 5))
    targets = rng.integers(0, 5, (4, 6))
    valid = rng.random((4, 6)) < 0.7
    total, n = 0.0, 0
    for i in range(4):
        for t in range(6):
            if valid[i, t]:
                row = logits[i, t]
                lse = math.log(sum(math.exp(v) for v in row))
                total += lse - row[targets[i, t]]
                n += 1
    got = float(action_loss(Tensor(logits), targets, valid).data)
    assert got == pytest.approx(total / n, abs=1e-6)


def test_action_loss_ignores_padded_positions():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(2, 3, 4))
    targets = rng.integers(0, 4, (2, 3))
    valid = np.array([[True, True, False], [True, False, False]])
    base = float(action_loss(logits, targets, valid).data)
    logits[~valid] = 1e3
    assert float(action_loss(logits, targets, valid).data) == pytest.approx(base)


def test_action_loss_errors():
    with pytest.raises(ContractError, match="padded"):
        action_loss(np.zeros((2, 3, 4)), np.zeros((2, 3), dtype=int), np.zeros((2, 3), bool))
    with pytest.raises(ContractError):
        action_loss(np.zeros((2, 3, 4)), np.zeros((2, 4), dtype=int))


# -- efficiency loss ----------------------------------------------------------------

def stat(active, target, total=100.0, omega=1.0, name="x"):
    return ActivationStats(name, Tensor(np.float64(active)), total, target, omega)


def test_efficiency_loss_examples():
    assert float(efficiency_loss([stat(75, 75)]).data) == 0.0
    assert float(efficiency_loss([stat(100, 75)]).data) == pytest.approx(0.0625)
    # mean over layers
    assert float(efficiency_loss([stat(100, 75), stat(75, 75)]).data) == pytest.approx(0.03125)


@given(st.floats(0, 100), st.floats(0, 100), st.floats(0.05, 1.0))
@settings(max_examples=50, deadline=None)
def test_doubling_omega_quadruples(active, target, omega):
    one = float(efficiency_loss([stat(active, target, omega=omega)]).data)
    two = float(efficiency_loss([stat(active, target, omega=2 * omega)]).data)
    assert two == pytest.approx(4 * one, rel=1e-9, abs=1e-15)


def test_activation_stats_invariants():
    with pytest.raises(ContractError):
        stat(120, 75)
    with pytest.raises(ContractError):
        stat(50, 75, omega=0.0)
    with pytest.raises(ContractError):
        stat(0, 0, total=0.0)
    with pytest.raises(ContractError):
        efficiency_loss([])


def test_activation_stats_from_model():
    cfg = SMALL.with_(spatial_dim=32, temporal_dim=16)
    model = AdaCredModel(cfg)
    rng = np.random.default_rng(0)
    obs = rng.random((2, 4, 1, 28, 28)).astype(np.float32)
    _, state = model(obs, np.zeros((2, 4), int), np.zeros((2, 4), np.float32), training=False)
    stats = activation_stats(state, 0.5, 0.25)
    by = {s.name: s for s in stats}
    assert by["spatial0"].omega == 1.0 and by["temporal0"].omega == 0.5
    assert by["spatial0"].target == pytest.approx(0.5 * by["spatial0"].total)
    assert by["temporal1"].target == pytest.approx(0.25 * by["temporal1"].total)


# -- config --------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [{"alpha": -1}, {"stage": 3}, {"batch_size": 0},
                                {"reward_token": "x"}])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_train_config_round_trip():
    cfg = TrainConfig(stage=2, alpha=3.0, betas=(0.8, 0.9))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"nope": 1})


def test_stage2_requires_stage1(mixed_ds):
    with pytest.raises(StateError):
        Trainer(AdaCredModel(SMALL), mixed_ds, TrainConfig(stage=2))
    Trainer(AdaCredModel(SMALL), mixed_ds, TrainConfig(stage=2, cold_start=True))


def test_trainer_rejects_mismatched_frames(mixed_ds):
    with pytest.raises(ConfigError):
        Trainer(AdaCredModel(SMALL.with_(height=14, width=14)), mixed_ds, TrainConfig())


# -- stage 1 --------------------------------------------------------------------------

def test_stage1_step0_loss_is_log_k(scripted_run):
    _, res = scripted_run
    assert res.column("l_action")[0] == pytest.approx(math.log(4), abs=0.05)


def test_stage1_memorizes_scripted_policy(scripted_run, scripted_ds):
    model, _ = scripted_run
    b = sample_batch(scripted_ds, 256, SMALL.ctx_len, np.random.default_rng(9), start_id=SMALL.start_id)
    with no_grad():
        logits, _ = model(b.observations, b.prev_actions, b.rtg, b.valid, training=False,
                          force_ones=True)
    acc = (logits.data.argmax(-1) == b.actions)[b.valid].mean()
    assert acc > 0.9


def test_stage1_marks_completion_and_writes_artifacts(scripted_run):
    model, res = scripted_run
    assert model.stage_completed == 1
    loaded, norm, header = load_trained(res.checkpoint)
    assert loaded.stage_completed == 1 and norm[0] is not None
    assert header["train_state"]["step"] == 200


def test_stage1_freezes_credit_heads(mixed_ds):
    model = AdaCredModel(SMALL)
    before = credit_checksum(model)
    res = train_stage1(model, mixed_ds, TrainConfig(steps=5))
    assert credit_checksum(model) == before
    assert all(res.column(f"keep_{k}")[-1] == 1.0 for k in ("spatial0", "temporal1"))


@pytest.mark.parametrize("stage", [1, 2])
def test_resume_is_bit_exact(mixed_ds, mixed_stage1, tmp_path, stage):
    base = mixed_stage1[0] if stage == 2 else AdaCredModel(SMALL)
    cfg = TrainConfig(stage=stage, steps=6, alpha=10.0, lr=1e-3)
    straight = clone(base)
    full = Trainer(straight, mixed_ds, cfg).run()

    first = clone(base)
    tr = Trainer(first, mixed_ds, cfg, out_dir=str(tmp_path))
    tr.run(steps=3)
    assert first.stage_completed == base.stage_completed
    resumed = clone(base)
    tr2 = Trainer(resumed, mixed_ds, cfg, out_dir=str(tmp_path))
    tr2.restore(tr.checkpoint_path())
    res = tr2.run()
    for name, p in straight.parameters().items():
        assert p.data.tobytes() == resumed.parameters()[name].data.tobytes(), name
    assert res.rows == full.rows
    full_csv = (tmp_path / f"metrics_stage{stage}.csv").read_text()
    assert full_csv.count("\n") == 7


def test_nan_aborts_with_last_checkpoint(mixed_ds, tmp_path):
    model = AdaCredModel(SMALL)
    tr = Trainer(model, mixed_ds, TrainConfig(steps=10, checkpoint_every=2), out_dir=str(tmp_path))
    tr.run(steps=2)
    model.head.weight.data[:] = np.nan
    with pytest.raises(NumericalError, match="stage1.ckpt"):
        tr.run()
    assert (tmp_path / "metrics_stage1.csv").exists()


# -- stage 2 ---------------------------------------------------------------------------

def test_stage2_decomposition_and_credit_gradients(mixed_stage1, mixed_ds):
    model = clone(mixed_stage1[0])
    before = credit_checksum(model)
    cfg = TrainConfig(stage=2, steps=5, alpha=7.5)
    tr = Trainer(model, mixed_ds, cfg)
    res = tr.run()
    for r in res.rows:
        assert r["l_total"] == r["l_action"] + 7.5 * r["l_eff"]
    assert credit_checksum(model) != before
    assert set(model.credit_parameters()) <= set(tr.params)


def test_stage2_efficiency_gradient_reaches_credit_heads(mixed_stage1, mixed_ds):
    model = clone(mixed_stage1[0])
    b = sample_batch(mixed_ds, 8, SMALL.ctx_len, np.random.default_rng(0), start_id=SMALL.start_id)
    with Tape() as tape:
        _, state = model(b.observations, b.prev_actions, b.rtg, b.valid, training=True,
                         rng=np.random.default_rng(1))
        le = efficiency_loss(activation_stats(state, 0.75, 0.75))
    params = model.parameters()
    leaves = [params[k] for k in model.credit_parameters()]
    tape.backward(le, leaves=leaves)
    for k in model.credit_parameters():
        if k.endswith("out.bias"):
            assert np.abs(params[k].grad).sum() > 0, k


def test_alpha_zero_leaves_action_loss_like_stage1(mixed_stage1, mixed_ds):
    s1 = Trainer(clone(mixed_stage1[0]), mixed_ds, TrainConfig(stage=1, steps=60, seed=3)).run()
    s2 = Trainer(clone(mixed_stage1[0]), mixed_ds,
                 TrainConfig(stage=2, steps=60, alpha=0.0, seed=3)).run()
    assert all(r["l_total"] == r["l_action"] for r in s2.rows)
    a, b = s1.column("l_action")[20:], s2.column("l_action")[20:]
    se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    assert abs(a.mean() - b.mean()) <= 4 * se


def test_full_keep_target_opens_every_gate(mixed_stage1, mixed_ds):
    model = clone(mixed_stage1[0])
    model.cfg = model.cfg.with_(keep_spatial=1.0, keep_temporal=1.0)
    cont = Trainer(clone(mixed_stage1[0]), mixed_ds, TrainConfig(stage=1, steps=200, seed=4)).run()
    res = Trainer(model, mixed_ds, TrainConfig(stage=2, steps=200, alpha=TUNED_ALPHA, seed=4)).run()
    ratios = res.final_keep_ratios(20)
    assert min(ratios.values()) > 0.97, ratios
    a, b = cont.column("l_action")[-40:], res.column("l_action")[-40:]
    se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    assert b.mean() <= a.mean() + 4 * se


# -- evaluation ---------------------------------------------------------------------------

def test_scripted_checkpoint_solves_keydoor(scripted_run, scripted_ds, env):
    model, _ = scripted_run
    res = evaluate(model, env, 20, 1.0, seed=3, norm=(scripted_ds.obs_mean, scripted_ds.obs_std))
    assert res.mean == 1.0 and res.std == 0.0


def test_identical_seeds_identical_traces(scripted_run, env):
    model, _ = scripted_run
    a = evaluate(model, env, 5, 1.0, seed=11)
    b = evaluate(model, env, 5, 1.0, seed=11)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.returns, b.returns)


def test_untrained_model_near_random_baseline(env):
    rnd = np.array([t.ret for t in collect(env, 100, 30, seed=5, kind="random")])
    means = np.array([evaluate(AdaCredModel(preset("desk", seed=s)), env, 20, 1.0, seed=s).mean
                      for s in range(10)])
    se = math.sqrt(means.var(ddof=1) / len(means) + rnd.var(ddof=1) / len(rnd))
    assert abs(means.mean() - rnd.mean()) <= 3 * se


def test_evaluate_shape_mismatch(env):
    with pytest.raises(ConfigError):
        evaluate(AdaCredModel(SMALL.with_(height=14, width=14)), env, 1, 1.0)
