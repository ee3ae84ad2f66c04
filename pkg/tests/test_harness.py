import csv
import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from midlevel.coverset import affinity_matrix_from_csv, min_delta_cover
from midlevel.featurebank import FEATURES
from midlevel.harness import (
    ConfigError, ExperimentConfig, RunManifest, dumps, load_config, loads, read_eval_csv, sha256_file,
    verify_manifest,
)
from midlevel.harness.cli import default_affinities, main
from midlevel.harness.commands import frames_fraction, parse_grid, UsageError
from midlevel.rl import CurveRow, PPOConfig, curve_csv, read_curve_csv

TINY = """\
split.n_train = 3
split.n_test = 2
task.max_steps = 40
train.budget = 300
train.checkpoint_every = 1
train.eval_every = 1
eval.episodes = 5
ppo.n_on = 2
ppo.n_off = 2
ppo.hidden = 16
ppo.minibatch = 64
pretrain.corpus = 200
pretrain.epochs = 2
grid.budget = 160
"""


def cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def lab(tmp_path_factory):
    root = tmp_path_factory.mktemp("lab")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY + f"paths.worlds = {root / 'worlds'}\npaths.out = {root / 'runs'}\n"
                   f"paths.encoders = {root / 'enc'}\n")
    assert cli("gen-worlds", "--config", cfg) == 0
    for feature, seed in [("depth", 0), ("depth", 1), ("blind", 0), ("blind", 1)]:
        assert cli("train", "--config", cfg, "--feature", feature, "--seed", seed) == 0
        assert cli("eval", "--config", cfg, "--checkpoint", root / "runs" / f"{feature}_s{seed}" / "final.ckpt",
                   "--side", "test") == 0
    assert cli("eval", "--config", cfg, "--random", "--side", "test") == 0
    return root, cfg


# -- config ------------------------------------------------------------------

def test_default_config_round_trips():
    cfg = ExperimentConfig()
    assert loads(dumps(cfg)) == cfg
    assert (cfg.n_train, cfg.n_test, cfg.budget, len(cfg.seeds)) == (8, 3, 500_000, 5)


@settings(max_examples=60, deadline=None)
@given(task=st.sampled_from(["planning", "exploration", "visual_target"]),
       feats=st.lists(st.sampled_from(FEATURES), min_size=1, max_size=5, unique=True),
       lr=st.floats(0, 1, allow_nan=False), clip=st.floats(0.01, 0.99),
       noise=st.floats(0, 10), steps=st.one_of(st.none(), st.integers(1, 10_000)),
       seeds=st.lists(st.integers(0, 10**6), min_size=1, max_size=6, unique=True),
       budget=st.integers(8, 10**9), path=st.from_regex(r"[A-Za-z0-9_./-]{1,20}", fullmatch=True))
def test_config_round_trip_is_lossless(task, feats, lr, clip, noise, steps, seeds, budget, path):
    cfg = ExperimentConfig(task=task, feature_ids=tuple(feats), noise_std=noise, max_steps=steps,
                           seeds=tuple(seeds), budget=budget, out=path,
                           ppo=PPOConfig(lr=lr, clip=clip)).validate()
    text = dumps(cfg)
    assert loads(text) == cfg
    assert dumps(loads(text)) == text


def test_partial_config_keeps_defaults(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# only two keys\nfeatures.ids = depth, semantic_seg\nppo.lr = 1e-4\n")
    cfg = load_config(p)
    assert cfg.feature_ids == ("depth", "semantic_seg") and cfg.ppo.lr == 1e-4
    assert cfg.ppo.clip == 0.2 and cfg.n_train == 8


@pytest.mark.parametrize("text, match", [
    ("ppo.learning_rate = 0.1", "unknown config key"),
    ("ppo.lr = 0.1\nppo.lr = 0.2", "duplicate"),
    ("split.n_train = many", "cannot parse"),
    ("features.ids = depth,sift", "unknown feature"),
    ("features.ids = depth,depth", "twice"),
    ("train.budget = 4", "smaller than one round"),
    ("task.name = flying", "unknown task"),
    ("ppo.clip = 1.5", "clip"),
    ("split.train_subset = 9", "train_subset"),
    ("no equals sign", "expected 'key = value'"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        loads(text)


def test_inline_comments():
    cfg = loads("task.name = exploration   # which task\nsplit.train_subset = 2 # first two\n")
    assert cfg.task == "exploration" and cfg.train_subset == 2


def test_overrides():
    cfg = ExperimentConfig().with_overrides(["ppo.lr=0.001", "features.ids=blind"])
    assert cfg.ppo.lr == 0.001 and cfg.feature_ids == ("blind",)
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(["ppo.lr"])


# -- worlds and manifests ----------------------------------------------------------

def test_gen_worlds_files_and_determinism(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("split.n_train = 4\nsplit.n_test = 2\n")
    assert cli("gen-worlds", "--config", cfg, "--out", tmp_path / "a") == 0
    assert cli("gen-worlds", "--config", cfg, "--out", tmp_path / "b") == 0
    files = sorted(p.name for p in (tmp_path / "a").glob("*.bld"))
    assert len(files) == 6
    split = (tmp_path / "a" / "split.txt").read_text().split("\n")
    train = {l.split()[1] for l in split if l.startswith("train")}
    test = {l.split()[1] for l in split if l.startswith("test")}
    assert len(train) == 4 and len(test) == 2 and not train & test
    for name in files + ["split.txt"]:
        assert sha256_file(tmp_path / "a" / name) == sha256_file(tmp_path / "b" / name)
    assert verify_manifest(tmp_path / "a") == []


def test_full_scale_split(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("split.n_train = 72\nsplit.n_test = 14\n")
    assert cli("gen-worlds", "--config", cfg, "--out", tmp_path / "w") == 0
    man = RunManifest.read(tmp_path / "w")
    assert len(man.extra["train"]) == 72 and len(man.extra["test"]) == 14
    assert not set(man.extra["train"]) & set(man.extra["test"])


def test_manifest_detects_tampering(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"split.n_train = 1\nsplit.n_test = 1\npaths.worlds = {tmp_path / 'w'}\n")
    assert cli("gen-worlds", "--config", cfg) == 0
    victim = next((tmp_path / "w").glob("*.bld"))
    data = bytearray(victim.read_bytes())
    data[-1] ^= 1
    victim.write_bytes(bytes(data))
    assert any("hash mismatch" in p for p in verify_manifest(tmp_path / "w"))
    assert cli("train", "--config", cfg, "--out", tmp_path / "run") == 1
    assert "fail verification" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_every_output_directory_has_verifying_manifest(lab):
    root, _ = lab
    dirs = {p.parent for p in root.rglob("*") if p.is_file() and p.name != "tiny.cfg"}
    dirs = {d for d in dirs if d.name != "checkpoints"}
    assert dirs
    for d in dirs:
        assert (d / "manifest.json").exists(), d
        assert verify_manifest(d) == [], d


# -- train -------------------------------------------------------------------

def test_train_outputs(lab, capsys):
    root, cfg = lab
    run = root / "runs" / "depth_s0"
    curve = read_curve_csv(run / "curve.csv")
    assert curve and curve[-1].frames >= 300
    assert sorted(p.name for p in (run / "checkpoints").iterdir())[0] == "update_000001.ckpt"
    man = RunManifest.read(run)
    assert man.extra["meta"]["feature_ids"] == ["depth"]
    assert cli("train", "--config", cfg, "--seed", 5, "--out", root / "scratch_s5") == 0
    out = capsys.readouterr().out
    assert "final train return" in out


def test_ppo_config_identical_across_features(lab):
    root, _ = lab
    a = RunManifest.read(root / "runs" / "depth_s0").config
    b = RunManifest.read(root / "runs" / "blind_s0").config
    ppo_a = {k: v for k, v in a.items() if k.startswith("ppo.")}
    ppo_b = {k: v for k, v in b.items() if k.startswith("ppo.")}
    assert ppo_a and ppo_a == ppo_b
    assert a["features.ids"] == "depth" and b["features.ids"] == "blind"


def test_resume_continues_curve(lab, tmp_path):
    root, cfg = lab
    src = tmp_path / "run"
    shutil.copytree(root / "runs" / "depth_s0", src)
    first = read_curve_csv(src / "curve.csv")
    ckpt = src / "checkpoints" / "update_000001.ckpt"
    assert cli("train", "--config", cfg, "--feature", "depth", "--seed", 0, "--resume", ckpt,
               "--out", src, "--set", "train.budget=600") == 0
    resumed = read_curve_csv(src / "curve.csv")
    assert resumed[0] == first[0]
    frames = [r.frames for r in resumed]
    updates = [r.update for r in resumed]
    assert updates == list(range(1, len(resumed) + 1))
    assert all(b > a for a, b in zip(frames, frames[1:])) and frames[-1] >= 600
    # wrong feature for this checkpoint
    assert cli("train", "--config", cfg, "--feature", "blind", "--seed", 0, "--resume", ckpt,
               "--out", tmp_path / "x") == 1


def test_learned_feature_needs_pretrained_encoder(lab, tmp_path, capsys):
    root, cfg = lab
    out = tmp_path / "enc"
    assert cli("train", "--config", cfg, "--feature", "autoencoder", "--set", f"paths.encoders={out}",
               "--out", tmp_path / "r") == 1
    assert "pretrain-features" in capsys.readouterr().err
    assert cli("pretrain-features", "--config", cfg, "--out", out) == 0
    assert {p.name for p in out.glob("*.enc")} == {"autoencoder.enc", "vae_light.enc"}
    assert cli("train", "--config", cfg, "--feature", "autoencoder", "--set", f"paths.encoders={out}",
               "--out", tmp_path / "r") == 0
    assert str(out / "autoencoder.enc") in RunManifest.read(tmp_path / "r").inputs


# -- eval --------------------------------------------------------------------

def test_eval_rows_and_sides(lab, tmp_path):
    root, cfg = lab
    ckpt = root / "runs" / "depth_s0" / "final.ckpt"
    split = RunManifest.read(root / "worlds").extra
    rows = read_eval_csv(root / "runs" / "depth_s0" / "eval_test")
    assert len(rows) == 5 and {r["side"] for r in rows} == {"test"}
    assert {r["result"].building_id for r in rows} <= set(split["test"])
    assert cli("eval", "--config", cfg, "--checkpoint", ckpt, "--side", "train", "--out", tmp_path / "tr",
               "--episodes", 7) == 0
    train_rows = read_eval_csv(tmp_path / "tr")
    assert len(train_rows) == 7
    assert {r["result"].building_id for r in train_rows} <= set(split["train"])
    assert not ({r["result"].building_id for r in train_rows} & {r["result"].building_id for r in rows})


def test_eval_is_deterministic(lab, tmp_path):
    root, cfg = lab
    ckpt = root / "runs" / "depth_s1" / "final.ckpt"
    for d in ("a", "b"):
        assert cli("eval", "--config", cfg, "--checkpoint", ckpt, "--side", "test", "--out", tmp_path / d) == 0
    assert (tmp_path / "a" / "episodes.csv").read_bytes() == (tmp_path / "b" / "episodes.csv").read_bytes()
    assert (root / "runs" / "depth_s1" / "eval_test" / "episodes.csv").read_bytes() == \
        (tmp_path / "a" / "episodes.csv").read_bytes()


def test_eval_split_mismatch_and_usage(lab, tmp_path, capsys):
    root, cfg = lab
    other = tmp_path / "w2"
    assert cli("gen-worlds", "--config", cfg, "--out", other, "--seed", 99) == 0
    ckpt = root / "runs" / "depth_s0" / "final.ckpt"
    assert cli("eval", "--config", cfg, "--checkpoint", ckpt, "--side", "test", "--set", f"paths.worlds={other}",
               "--out", tmp_path / "e") == 1
    assert "side/split mismatch" in capsys.readouterr().err
    assert cli("eval", "--config", cfg, "--checkpoint", ckpt, "--side", "validation") == 2
    assert cli("eval", "--config", cfg, "--side", "test") == 2


# -- compare -----------------------------------------------------------------

def test_compare_blind_against_itself(lab, tmp_path):
    root, _ = lab
    blind = [root / "runs" / f"blind_s{s}" / "eval_test" for s in (0, 1)]
    rand = root / "runs" / "random" / "eval_test"
    assert cli("compare", *blind, "--blind", *blind, "--random", rand, "--out", tmp_path / "c") == 0
    with open(tmp_path / "c" / "metrics.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["metric"] == "rr_blind"]
    rr = {r["feature"]: r["value"] for r in rows}
    assert set(rr) == {"blind", "random"}
    assert float(rr["blind"]) == 1.0 and float(rr["random"]) == 0.0
    assert (tmp_path / "c" / "significance.dot").read_text().startswith("digraph")


def write_episodes(path, feature, rewards_by_seed, task="planning"):
    path.mkdir(parents=True)
    with open(path / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "task", "side", "seed_id", "episode", "building_id", "reward", "success",
                    "path_length", "geodesic", "collisions", "steps", "acceleration", "jerk", "trace"])
        k = 0
        for seed, rewards in enumerate(rewards_by_seed):
            for r in rewards:
                w.writerow([feature, task, "test", seed, k, 1, repr(float(r)), 0, 1.0, 2.0, 0, 10, "", "", "[]"])
                k += 1
    return path


def test_compare_recovers_known_ordering(tmp_path):
    rng = np.random.default_rng(0)
    files = {}
    for name, mu in [("good", 3.0), ("mid", 2.0), ("bad", 1.0), ("blind", 0.0)]:
        files[name] = write_episodes(tmp_path / name, name, [rng.normal(mu, 0.3, 20) for _ in range(6)])
    files["random"] = write_episodes(tmp_path / "rand", "random", [rng.normal(-1.0, 0.3, 20)])
    assert cli("compare", files["bad"], files["good"], files["mid"], "--blind", files["blind"],
               "--random", files["random"], "--out", tmp_path / "c") == 0
    report = json.loads((tmp_path / "c" / "report.json").read_text())
    assert report["rankings"]["planning"] == ["good", "mid", "bad", "blind"]
    rr = {m["feature"]: m["value"] for m in report["metrics"] if m["metric"] == "rr_blind"}
    assert rr["good"] > rr["mid"] > rr["bad"] > rr["blind"] == 1.0 > rr["random"] == 0.0
    assert rr["good"] == pytest.approx(4.0, abs=0.2)
    assert len(report["significant"]) == 6        # every pair separated by 3+ SD


def test_compare_errors(tmp_path, capsys):
    f = write_episodes(tmp_path / "b", "blind", [[0.0, 1.0], [1.0, 2.0]])
    assert cli("compare", "--blind", f, "--random", f, "--out", tmp_path / "c") == 2
    assert cli("compare", f, "--blind", f, "--random", tmp_path / "nope", "--out", tmp_path / "c") == 1
    assert "missing baseline" in capsys.readouterr().err
    assert cli("compare", f, "--blind", f) == 2


# -- curves ------------------------------------------------------------------

def write_curve(path, frames_returns):
    rows = [CurveRow(i + 1, f, r, 0.0, 0.0, 0.0) for i, (f, r) in enumerate(frames_returns)]
    path.write_text(curve_csv(rows))
    return path


def test_sample_frames_fraction(tmp_path):
    scratch = write_curve(tmp_path / "pixels.csv", [(k * 5000, k / 20) for k in range(1, 21)])
    fast = write_curve(tmp_path / "depth.csv", [(k * 5000, 0.4 * k) for k in range(1, 21)])
    never = write_curve(tmp_path / "blind.csv", [(k * 5000, 0.1) for k in range(1, 21)])
    assert cli("curves", "--mode", "sample_frames", scratch, fast, never, "--out", tmp_path / "o") == 0
    with open(tmp_path / "o" / "sample_frames.csv") as fh:
        rows = {r["feature"]: r for r in csv.DictReader(fh)}
    # scratch final return 1.0 at 100k frames; depth reaches 1.2 >= 1.0 at 15k
    assert float(rows["depth"]["fraction"]) == pytest.approx(0.15)
    assert float(rows["pixels"]["fraction"]) == 1.0
    assert float(rows["blind"]["fraction"]) > 1 and rows["blind"]["reached"] == "0"
    curve = read_curve_csv(fast)
    assert frames_fraction(curve, 1.0, 100_000) == pytest.approx(0.15)
    assert math.isinf(frames_fraction(curve, 100.0, 100_000))


def test_generalization_curves(lab, tmp_path):
    root, _ = lab
    f = root / "runs" / "depth_s0" / "eval_curve.csv"
    assert cli("curves", "--mode", "generalization", f, "--out", tmp_path / "g") == 0
    with open(tmp_path / "g" / "generalization.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and rows[0]["feature"] == "depth"
    for r in rows:
        assert float(r["gap"]) == pytest.approx(float(r["train_reward"]) - float(r["test_reward"]))
    only_train = tmp_path / "train_only.csv"
    only_train.write_text("update,frames,side,mean_reward,success_rate\n1,80,train,0.5,0.0\n")
    assert cli("curves", "--mode", "generalization", only_train, "--out", tmp_path / "g2") == 1


def test_sample_buildings_requires_nested_runs(lab, tmp_path):
    root, cfg = lab
    for n in (1, 2, 3):
        assert cli("train", "--config", cfg, "--feature", "depth", "--set", f"split.train_subset={n}",
                   "--set", "train.budget=80", "--out", tmp_path / f"n{n}") == 0
    files = [tmp_path / f"n{n}" / "eval_curve.csv" for n in (1, 2, 3)]
    assert cli("curves", "--mode", "sample_buildings", *files, "--out", tmp_path / "o") == 0
    with open(tmp_path / "o" / "sample_buildings.csv") as fh:
        assert [int(r["n_train"]) for r in csv.DictReader(fh)] == [1, 2, 3]
    assert cli("curves", "--mode", "sample_buildings", files[0], "--out", tmp_path / "o2") == 1


# -- select-set --------------------------------------------------------------------

def test_bundled_affinities_cover_the_bank():
    text = default_affinities().read_text()
    assert "NOT measured" in text
    assert affinity_matrix_from_csv(default_affinities()).names == list(FEATURES)


def test_select_set_all_features_and_monotone(tmp_path):
    m = len(FEATURES)
    assert cli("select-set", "--k", f"2,3,4,{m}", "--out", tmp_path) == 0
    sols = {k: json.loads((tmp_path / f"set_k{k}.json").read_text()) for k in (2, 3, 4, m)}
    assert sols[m]["achieved_delta"] == 0.0 and sorted(sols[m]["selected_features"]) == sorted(FEATURES)
    assert sols[2]["achieved_delta"] >= sols[3]["achieved_delta"] >= sols[4]["achieved_delta"]
    for k in (2, 3, 4):
        cfg = load_config(tmp_path / f"set_k{k}.cfg")
        assert list(cfg.feature_ids) == sols[k]["selected_features"] and len(cfg.feature_ids) <= k


def test_select_set_matches_solver_bytes(tmp_path):
    assert cli("select-set", "--k", "3", "--out", tmp_path) == 0
    table = affinity_matrix_from_csv(default_affinities())
    direct = min_delta_cover(table.edges, k=3).to_json(table.names) + "\n"
    assert (tmp_path / "set_k3.json").read_text() == direct


def test_select_set_weighted_and_errors(tmp_path, capsys):
    imp = tmp_path / "imp.csv"
    imp.write_text("feature,importance\n" + "".join(f"{f},{1.0 + i}\n" for i, f in enumerate(FEATURES)))
    assert cli("select-set", "--k", "2", "--delta", "0.5", "--weighted", "--importance", imp,
               "--out", tmp_path / "w") == 0
    assert cli("select-set", "--k", "0", "--out", tmp_path / "z") == 2
    assert cli("select-set", "--k", "two", "--out", tmp_path / "z") == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("source,x,y\nx,1,2\ny,0,1\n")
    assert cli("select-set", "--k", "1", "--affinities", bad, "--out", tmp_path / "z") == 1
    assert "row 'x' column 'y'" in capsys.readouterr().err


# -- grid search ---------------------------------------------------------------------

def test_grid_parsing():
    assert parse_grid(["ppo.lr=1e-4,3e-4", "ppo.clip=0.1"]) == [["ppo.lr=1e-4", "ppo.clip=0.1"],
                                                               ["ppo.lr=3e-4", "ppo.clip=0.1"]]
    for bad in ([], ["ppo.lr="], ["nope=1"], ["features.ids=depth"]):
        with pytest.raises(UsageError):
            parse_grid(bad)


def test_grid_search_ranks_and_is_deterministic(lab, tmp_path):
    _, cfg = lab
    assert cli("grid-search", "--config", cfg, "--grid", "ppo.lr=0.0003", "--out", tmp_path / "one") == 0
    with open(tmp_path / "one" / "ranking.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 1
    for d in ("a", "b"):
        assert cli("grid-search", "--config", cfg, "--grid", "ppo.lr=0.0003,0.003", "--grid", "ppo.clip=0.2",
                   "--out", tmp_path / d) == 0
    assert (tmp_path / "a" / "ranking.csv").read_bytes() == (tmp_path / "b" / "ranking.csv").read_bytes()
    best = load_config(tmp_path / "a" / "best.cfg")
    assert best.ppo.lr in (0.0003, 0.003) and best.feature_ids == ("depth",)
    assert cli("grid-search", "--config", cfg, "--out", tmp_path / "e") == 2


# -- CLI plumbing ----------------------------------------------------------------

def test_features_listing(capsys):
    assert cli("features") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "feature,family,dim" and len(lines) == 13


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("ppo.nonsense = 1\n")
    assert cli("gen-worlds", "--config", bad) == 2
    assert cli("train", "--config", tmp_path / "absent.cfg") == 2
    assert cli("train", "--set", f"paths.worlds={tmp_path / 'none'}", "--out", tmp_path / "r") == 1
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli("gen-worlds", "--out", blocker / "sub") == 1
    assert "not writable" in capsys.readouterr().err
    assert cli() == 2
    assert cli("--seed", 3, "features") == 0
