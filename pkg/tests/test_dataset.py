import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from adacred.dataset import (OfflineDataset, Trajectory, compute_return_to_go, read_dataset,
                             sample_batch, write_dataset)
from adacred.errors import FormatError, ParameterError, SamplingError


def make_traj(T, seed, obs_shape=(1, 4, 4), gamma=1.0):
    rng = np.random.default_rng(seed)
    return Trajectory(rng.random((T + 1,) + obs_shape, dtype=np.float32),
                      rng.integers(0, 4, T), rng.normal(size=T).astype(np.float32),
                      gamma=gamma, metadata={"env": "test", "seed": seed, "policy": "random"})


def test_rtg_example():
    np.testing.assert_array_equal(compute_return_to_go([1, 0, 2], 1.0), [3, 2, 2])


def test_rtg_zero():
    assert not compute_return_to_go(np.zeros(7), 0.9).any()


def test_rtg_against_double_loop():
    r = np.random.default_rng(0).normal(size=20)
    naive = [sum(0.99 ** (k - t) * r[k] for k in range(t, 20)) for t in range(20)]
    np.testing.assert_allclose(compute_return_to_go(r, 0.99), naive, atol=1e-6)


@pytest.mark.parametrize("gamma", [-0.1, 1.01])
def test_rtg_rejects_gamma(gamma):
    with pytest.raises(ParameterError):
        compute_return_to_go([1.0], gamma)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=30),
       st.floats(0, 1))
def test_rtg_first_step_is_return(rewards, gamma):
    rtg = compute_return_to_go(rewards, gamma)
    ret = sum(gamma ** k * r for k, r in enumerate(rewards))
    assert rtg[0] == pytest.approx(ret, abs=1e-9)
    # recursion
    np.testing.assert_allclose(rtg[:-1], np.asarray(rewards[:-1]) + gamma * rtg[1:], atol=1e-9)


def test_trajectory_length_contract():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), [0, 1, 0], [0.0, 0.0, 0.0])


@pytest.mark.parametrize("byteorder", ["little", "big"])
def test_round_trip_bit_exact(tmp_path, byteorder):
    ds = OfflineDataset([make_traj(T, s) for s, T in enumerate([5, 9, 1])], env="test")
    path = tmp_path / "d.adcr"
    write_dataset(ds, path, byteorder=byteorder)
    back = read_dataset(path)
    assert len(back) == 3 and back.env == "test"
    for a, b in zip(ds.trajectories, back.trajectories):
        assert a.observations.tobytes() == b.observations.tobytes()
        assert a.rewards.tobytes() == b.rewards.tobytes()
        assert np.array_equal(a.actions, b.actions)
        assert a.metadata == b.metadata
        assert a.returns_to_go.tobytes() == b.returns_to_go.tobytes()


def test_big_endian_flag_in_header(tmp_path):
    ds = OfflineDataset([make_traj(3, 0)])
    path = tmp_path / "d.adcr"
    write_dataset(ds, path, byteorder="big")
    raw = path.read_bytes()
    assert raw[6] == 1
    assert struct.unpack(">I", raw[7:11])[0] == 1


def test_corrupt_magic(tmp_path):
    path = tmp_path / "d.adcr"
    write_dataset(OfflineDataset([make_traj(3, 0)]), path)
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as err:
        read_dataset(path)
    assert err.value.offset == 0
    assert "offset 0" in str(err.value)


def test_bad_version(tmp_path):
    path = tmp_path / "d.adcr"
    write_dataset(OfflineDataset([make_traj(3, 0)]), path)
    raw = bytearray(path.read_bytes())
    raw[4:6] = struct.pack("<H", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        read_dataset(path)


@pytest.mark.parametrize("cut", [3, 10, 40, 200, -1])
def test_truncation(tmp_path, cut):
    path = tmp_path / "d.adcr"
    write_dataset(OfflineDataset([make_traj(4, 0), make_traj(2, 1)]), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:cut])
    with pytest.raises(FormatError) as err:
        read_dataset(path)
    assert 0 <= err.value.offset <= len(raw)


def test_crc_detects_flipped_frame_byte(tmp_path):
    path = tmp_path / "d.adcr"
    write_dataset(OfflineDataset([make_traj(4, 0)]), path)
    raw = bytearray(path.read_bytes())
    raw[-30] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="CRC"):
        read_dataset(path)


def test_imitation_mode_zeroes_tokens(tmp_path):
    ds = OfflineDataset([make_traj(8, s) for s in range(3)], imitation_mode=True)
    batch = sample_batch(ds, 32, 4, np.random.default_rng(0))
    assert not batch.rtg.any()
    batch = sample_batch(ds, 32, 4, np.random.default_rng(0), reward_token="reward")
    assert not batch.rtg.any()
    path = tmp_path / "d.adcr"
    write_dataset(ds, path)
    back = read_dataset(path)
    assert back.imitation_mode
    assert all(not t.rewards.any() for t in back.trajectories)


def test_context_one_single_step():
    ds = OfflineDataset([make_traj(6, 0)])
    b = sample_batch(ds, 10, 1, np.random.default_rng(0))
    assert b.actions.shape == (10, 1)
    assert b.valid.all()
    assert b.observations.shape == (10, 1, 1, 4, 4)


def test_window_content_matches_source():
    traj = make_traj(12, 3)
    ds = OfflineDataset([traj])
    b = sample_batch(ds, 64, 5, np.random.default_rng(1), start_id=4, normalize=False)
    for k in range(64):
        _, s = b.starts[k]
        for j in range(5):
            t = s + j
            if t < 0:
                assert not b.valid[k, j]
                continue
            assert b.valid[k, j]
            assert np.array_equal(b.observations[k, j], traj.observations[t])
            assert b.actions[k, j] == traj.actions[t]
            assert b.rtg[k, j] == traj.returns_to_go[t]
            assert b.prev_actions[k, j] == (traj.actions[t - 1] if t > 0 else 4)


def test_exactly_one_unpadded_start_when_length_equals_context():
    ds = OfflineDataset([make_traj(10, 0)])
    b = sample_batch(ds, 2000, 10, np.random.default_rng(0))
    unpadded = np.unique(b.starts[b.valid.all(axis=1), 1])
    assert unpadded.tolist() == [0]


def test_start_positions_uniform():
    ds = OfflineDataset([make_traj(T, s) for s, T in enumerate([7, 12, 20])])
    ctx = 5
    b = sample_batch(ds, 100_000, ctx, np.random.default_rng(0))
    keys = b.starts[:, 0] * 100 + b.starts[:, 1]
    _, counts = np.unique(keys, return_counts=True)
    assert len(counts) == 7 + 12 + 20
    assert stats.chisquare(counts).pvalue > 0.01


def test_context_longer_than_every_trajectory():
    ds = OfflineDataset([make_traj(4, 0), make_traj(6, 1)])
    with pytest.raises(SamplingError):
        sample_batch(ds, 4, 7, np.random.default_rng(0))


def test_normalization_from_train_split_only():
    trajs = [make_traj(5, s) for s in range(4)]
    trajs[3].observations[:] += 100.0
    train, val = OfflineDataset(trajs).split(0.25)
    assert len(train) == 3 and len(val) == 1
    assert train.obs_mean[0] < 2.0
    assert np.array_equal(train.obs_mean, val.obs_mean)


def test_reread_and_rebatch_identical(tmp_path):
    ds = OfflineDataset([make_traj(T, s) for s, T in enumerate([9, 11])])
    path = tmp_path / "d.adcr"
    write_dataset(ds, path)
    back = read_dataset(path)
    a = sample_batch(ds, 8, 4, np.random.default_rng(5))
    b = sample_batch(back, 8, 4, np.random.default_rng(5))
    for f in ("observations", "prev_actions", "rtg", "actions", "valid"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
