import json
import os
import subprocess
import sys

import numpy as np
import pytest

from adacred import cli
from adacred.dataset import read_dataset
from adacred.errors import ConfigError


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen-data", "--env", "keydoor", "--episodes", "30", "--seed", "3",
                     "--out", str(root / "data")]) == 0
    assert cli.main(["train", "--data", str(root / "data" / "dataset.adcr"), "--stage", "1",
                     "--steps", "30", "--ctx", "6", "--out", str(root / "s1")]) == 0
    assert cli.main(["train", "--data", str(root / "data" / "dataset.adcr"), "--stage", "2",
                     "--init", str(root / "s1" / "stage1.ckpt"), "--steps", "20",
                     "--keep-spatial", "50", "--keep-temporal", "50", "--out", str(root / "s2")]) == 0
    return root


# -- config resolution -------------------------------------------------------------------

def test_precedence_defaults_env_config_flags(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nsteps = 7\nkeep-spatial=40  # trailing\n")
    base = cli.resolve("train", {}, environ={})
    assert base["steps"] == 1000 and base["seed"] == 0
    assert cli.resolve("train", {}, environ={"ADACRED_SEED": "5"})["seed"] == 5
    r = cli.resolve("train", {"steps": 9}, str(cfg), environ={"ADACRED_SEED": "5"})
    assert (r["steps"], r["keep_spatial"], r["seed"]) == (9, 40.0, 5)
    # an explicit flag beats the environment
    assert cli.resolve("train", {"seed": 1}, environ={"ADACRED_SEED": "5"})["seed"] == 1


@pytest.mark.parametrize("text,match", [
    ("stepz = 3\n", "unknown key"),
    ("steps 3\n", "key = value"),
    ("steps = three\n", "bad value"),
    ("stage = 3\n", "one of"),
    ("cold_start = maybe\n", "bad value|boolean"),
])
def test_bad_config_files(tmp_path, text, match):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    with pytest.raises(ConfigError, match=match):
        cli.resolve("train", {}, str(cfg), environ={})


def test_bad_seed_variable():
    with pytest.raises(ConfigError):
        cli.resolve("eval", {}, environ={"ADACRED_SEED": "x"})


def test_every_command_has_help(capsys):
    for name in list(cli.OPTIONS) + ["replay"]:
        code, out = run([name, "--help"], capsys)
        assert code == 0 and "usage" in out.out


@pytest.mark.parametrize("argv,code", [
    (["nonsense"], 2),
    (["gen-data", "--episodes", "5"], 2),                      # missing --env
    (["gen-data", "--env", "moon"], 2),
    (["train", "--data", "/nonexistent.adcr"], 3),
    (["eval", "--ckpt", "/nonexistent.ckpt"], 3),
    (["causal", "--d", "20", "--prune-check"], 2),
    (["sweep", "--data", "x", "--init", "y", "--grid", "1"], 3),
])
def test_exit_codes(tmp_path, argv, code):
    assert cli.main(argv + ["--out", str(tmp_path)] if argv[0] != "nonsense" else argv) == code


def test_corrupt_dataset_exits_4(tmp_path):
    bad = tmp_path / "bad.adcr"
    bad.write_bytes(b"not a dataset")
    assert cli.main(["train", "--data", str(bad), "--out", str(tmp_path / "o")]) == 4


# -- commands ----------------------------------------------------------------------------

def test_gen_data_writes_dataset_and_manifest(workdir):
    ds = read_dataset(workdir / "data" / "dataset.adcr")
    assert len(ds) == 30 and json.loads(ds.env)["name"] == "keydoor"
    man = json.loads((workdir / "data" / "manifest.json").read_text())
    assert man["command"] == "gen-data" and man["seed"] == 3
    assert {a["path"] for a in man["artifacts"]} == {"dataset.adcr"}
    assert len(man["input_hash"]) == 64


def test_gen_data_imitation_zeroes_rewards(tmp_path, capsys):
    code, out = run(["gen-data", "--env", "latent", "--episodes", "4", "--imitation",
                     "--out", tmp_path], capsys)
    assert code == 0 and "behavior return" in out.out
    ds = read_dataset(tmp_path / "dataset.adcr")
    assert ds.imitation_mode and all(not t.rewards.any() for t in ds.trajectories)


def test_train_outputs(workdir):
    for stage in (1, 2):
        d = workdir / f"s{stage}"
        assert (d / f"stage{stage}.ckpt").is_file() and (d / f"curves_stage{stage}.svg").is_file()
        rows = (d / f"metrics_stage{stage}.csv").read_text().splitlines()
        assert rows[0].startswith("step") and len(rows) > 1
    header = (workdir / "s2" / "metrics_stage2.csv").read_text().splitlines()[0]
    assert "keep_spatial0" in header and "l_eff" in header
    cfg = json.loads((workdir / "s2" / "manifest.json").read_text())["config"]
    assert cfg["ctx"] == 6 and cfg["lr"] == 1e-4      # inherited and stage default


def test_stage2_requires_init_and_matching_ctx(workdir, tmp_path):
    data = workdir / "data" / "dataset.adcr"
    assert cli.main(["train", "--data", str(data), "--stage", "2", "--out", str(tmp_path / "a")]) == 3
    assert cli.main(["train", "--data", str(data), "--stage", "2", "--init",
                     str(workdir / "s1" / "stage1.ckpt"), "--ctx", "8", "--out", str(tmp_path / "b")]) == 2
    assert cli.main(["train", "--data", str(data), "--keep-spatial", "0", "--out", str(tmp_path / "c")]) == 2


def test_eval_outputs(workdir, tmp_path):
    assert cli.main(["eval", "--ckpt", str(workdir / "s2" / "stage2.ckpt"), "--episodes", "2",
                     "--seeds", "3", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "eval.csv").read_text().splitlines()
    assert rows[0] == "seed,episode,return" and len(rows) == 7
    summary = json.loads((tmp_path / "eval_summary.json").read_text())
    assert summary["episodes"] == 6 and len(summary["seed_means"]) == 3
    assert summary["mean"] == pytest.approx(np.mean(summary["seed_means"]))


def test_masks_outputs(workdir, tmp_path):
    assert cli.main(["masks", "--ckpt", str(workdir / "s2" / "stage2.ckpt"), "--data",
                     str(workdir / "data" / "dataset.adcr"), "--traj", "2", "--start", "4",
                     "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "masks.json").read_text())
    assert doc["steps"] == list(range(4, 10))
    assert len(doc["spatial"]) == len(doc["temporal"]) >= 1
    spatial = np.array(doc["spatial"][0])
    assert spatial.shape[0] == 6 and set(np.unique(spatial)) <= {0, 1}
    assert len(doc["temporal"][0]) == 12
    svg = (tmp_path / "masks.svg").read_text()
    assert svg.startswith("<svg") and svg.count('class="dropped"') == int((spatial == 0).sum())


def test_masks_force_ones_and_range_errors(workdir, tmp_path):
    base = ["masks", "--ckpt", str(workdir / "s2" / "stage2.ckpt"), "--data",
            str(workdir / "data" / "dataset.adcr")]
    assert cli.main(base + ["--force-ones", "--out", str(tmp_path / "a")]) == 0
    doc = json.loads((tmp_path / "a" / "masks.json").read_text())
    assert all(np.all(np.array(m) == 1) for m in doc["spatial"] + doc["temporal"])
    assert cli.main(base + ["--start", "28", "--out", str(tmp_path / "b")]) == 2
    assert cli.main(base + ["--traj", "999", "--out", str(tmp_path / "c")]) == 2
    assert cli.main(base + ["--layer", "9", "--out", str(tmp_path / "d")]) == 2


def test_sweep_trains_cells_and_marks_absent_ones(workdir, tmp_path, capsys):
    common = ["sweep", "--data", workdir / "data" / "dataset.adcr", "--init",
              workdir / "s1" / "stage1.ckpt", "--episodes", "2", "--seeds", "2"]
    code, _ = run(common + ["--grid", "50:50", "--steps", "5", "--out", tmp_path], capsys)
    assert code == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("keep_spatial,keep_temporal,status")
    assert [r.split(",")[:3] for r in rows[1:]] == [["50.0", "50.0", "ok"], ["100.0", "100.0", "ok"]]
    code, out = run(common + ["--grid", "50:50,30:60", "--no-train", "--out", tmp_path], capsys)
    assert code == 0 and "absent" in out.out
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[2].split(",")[2] == "absent" and rows[1].split(",")[2] == "ok"
    assert ">absent<" in (tmp_path / "sweep.svg").read_text()


def test_causal_command(tmp_path):
    assert cli.main(["causal", "--d", "3", "--transitions", "3000", "--samples", "50",
                     "--lam", "0.05", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "causal.json").read_text())
    assert {"prune_check", "identify", "identify_relaxed", "partition"} <= set(doc)
    assert 0.0 <= doc["identify"]["f1"] <= 1.0
    assert doc["prune_check"]["disagreement_fraction"] == 0.0


def test_causal_reads_spec_file(tmp_path):
    from adacred.causal import counterexample_spec
    path = tmp_path / "spec.json"
    path.write_text(counterexample_spec().to_json())
    assert cli.main(["causal", "--spec", str(path), "--prune-check", "--samples", "40",
                     "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "causal.json").read_text())
    assert "identify" not in doc and doc["prune_check"]["pruned"] == [1]


def test_replay_is_byte_identical(workdir, tmp_path, capsys):
    code, out = run(["replay", workdir / "s1" / "manifest.json", "--out", tmp_path], capsys)
    assert code == 0 and "identical  metrics_stage1.csv" in out.out
    a = (workdir / "s1" / "metrics_stage1.csv").read_bytes()
    assert (tmp_path / "metrics_stage1.csv").read_bytes() == a


def test_replay_detects_tampering(workdir, tmp_path):
    man = json.loads((workdir / "data" / "manifest.json").read_text())
    man["config"]["episodes"] = 29                 # the run now differs from the recorded hashes
    man["artifacts"].append({"path": "ghost.csv", "sha256": "0" * 64})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(man))
    assert cli.main(["replay", str(path), "--out", str(tmp_path / "r")]) == 1


def test_module_entry_point(tmp_path):
    env = dict(os.environ, ADACRED_SEED="11")
    res = subprocess.run([sys.executable, "-m", "adacred", "causal", "--d", "2", "--identify",
                          "--transitions", "1000", "--out", str(tmp_path)],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0, res.stderr
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 11


def test_context_sweep_script_writes_three_metric_files(workdir, tmp_path):
    script = os.path.join(os.path.dirname(__file__), os.pardir, "scripts", "ctx_sweep.sh")
    res = subprocess.run(["sh", script, str(workdir / "data" / "dataset.adcr"), str(tmp_path), "2"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    for ctx in (10, 20, 30):
        rows = (tmp_path / f"ctx{ctx}" / "metrics_stage1.csv").read_text().splitlines()
        assert len(rows) == 3
        assert json.loads((tmp_path / f"ctx{ctx}" / "manifest.json").read_text())["config"]["ctx"] == ctx
