"""The work behind each CLI subcommand, callable directly from Python."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..coverset import INFEASIBLE, affinity_matrix_from_csv, build_bip, min_delta_cover, solve_bip
from ..featurebank import FEATURES, LEARNED, EncoderWeights, FeatureBank, catalog, pretrain_autoencoder, \
    random_walk_corpus
from ..rl import Checkpoint, CurveRow, FeatureNavEnv, PPOTrainer, curve_csv, evaluate, read_curve_csv
from ..simulator import DatasetSplit, generate_building, load_building, save_building, split_dataset
from ..stats import ComparisonReport, EpisodeResult, behavior_metrics, compare_features, rr_blind, spl
from .config import KEYS, ConfigError, ExperimentConfig, dumps, ensure_writable
from .manifest import RunManifest, verify_manifest

log = logging.getLogger(__name__)

SPLIT_FILE = "split.txt"
EVAL_COLUMNS = ("feature", "task", "side", "seed_id", "episode", "building_id", "reward", "success",
                "path_length", "geodesic", "collisions", "steps", "acceleration", "jerk", "trace")
EVAL_CURVE_COLUMNS = ("update", "frames", "side", "mean_reward", "success_rate")
NEVER = math.inf     # sample_frames fraction for a run that never reaches the threshold


class UsageError(Exception):
    """Bad invocation; the CLI maps it to exit code 2."""


def config_echo(cfg: ExperimentConfig) -> dict:
    out = {}
    for line in dumps(cfg).splitlines():
        if line and not line.startswith("#"):
            k, v = (p.strip() for p in line.split("=", 1))
            out[k] = v
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# -- worlds ------------------------------------------------------------------

def building_file(root, ident: int) -> Path:
    return Path(root) / f"building_{ident}.bld"


def gen_worlds(cfg: ExperimentConfig, out) -> DatasetSplit:
    out = ensure_writable(out)
    split = split_dataset(cfg.n_train, cfg.n_test, cfg.split_seed)
    man = RunManifest("gen-worlds", config_echo(cfg),
                      extra={"train": list(split.train), "test": list(split.test)})
    for ident in split.train + split.test:
        path = building_file(out, ident)
        save_building(generate_building(ident), path)
        man.add(out, path)
    (out / SPLIT_FILE).write_text(split.to_text(), encoding="utf-8")
    man.add(out, out / SPLIT_FILE)
    man.write(out)
    return split


@dataclass
class Worlds:
    root: Path
    split: DatasetSplit
    buildings: dict

    def side(self, name: str, subset: int = 0) -> list:
        ids = self.split.side(name)
        if name == "train" and subset:
            ids = ids[:subset]
        return [self.buildings[i] for i in ids]

    def files(self) -> list[Path]:
        return [self.root / SPLIT_FILE] + [building_file(self.root, i) for i in sorted(self.buildings)]


def load_worlds(root, cfg: Optional[ExperimentConfig] = None) -> Worlds:
    root = Path(root)
    if not (root / SPLIT_FILE).exists():
        raise FileNotFoundError(f"missing artifacts: no worlds in {root} (run gen-worlds first)")
    problems = verify_manifest(root)
    if problems:
        raise RuntimeError(f"world files in {root} fail verification: " + "; ".join(problems))
    split = DatasetSplit.from_text((root / SPLIT_FILE).read_text(encoding="utf-8"))
    if cfg is not None and (len(split.train), len(split.test), split.seed) != (cfg.n_train, cfg.n_test,
                                                                               cfg.split_seed):
        raise RuntimeError(f"worlds in {root} hold a {len(split.train)}/{len(split.test)} split with seed "
                           f"{split.seed}; the config asks for {cfg.n_train}/{cfg.n_test} seed {cfg.split_seed}")
    buildings = {i: load_building(building_file(root, i)) for i in split.train + split.test}
    return Worlds(root, split, buildings)


# -- encoders ----------------------------------------------------------------

def encoder_file(root, name: str) -> Path:
    return Path(root) / f"{name}.enc"


def pretrain_features(cfg: ExperimentConfig, out, seed: int) -> dict:
    out = ensure_writable(out)
    worlds = load_worlds(cfg.worlds, cfg)
    corpus = random_walk_corpus(worlds.side("train"), cfg.pretrain_corpus, seed=seed)
    man = RunManifest("pretrain-features", config_echo(cfg), extra={"seed": seed})
    for p in worlds.files():
        man.add_input(p)
    summary = {}
    for i, name in enumerate(LEARNED):
        w = pretrain_autoencoder(corpus, epochs=cfg.pretrain_epochs, seed=seed + i, name=name,
                                 bottleneck_noise=0.1 if name == "vae_light" else 0.0)
        path = encoder_file(out, name)
        w.save(path)
        man.add(out, path)
        summary[name] = {"initial_mse": w.history[0], "final_mse": w.history[-1], "checksum": w.checksum()}
    man.extra["encoders"] = summary
    man.write(out)
    return summary


def make_bank(cfg: ExperimentConfig, feature_ids: Sequence[str]) -> tuple[FeatureBank, list[Path]]:
    weights, used = {}, []
    for f in feature_ids:
        if f in LEARNED:
            path = encoder_file(cfg.encoders, f)
            if not path.exists():
                raise FileNotFoundError(f"missing artifacts: no frozen encoder for {f!r} at {path} "
                                        "(run pretrain-features first)")
            weights[f] = EncoderWeights.load(path)
            used.append(path)
    bank = FeatureBank(weights, noise_std=cfg.noise_std)
    bank.require_frozen(feature_ids)
    return bank, used


# -- training ----------------------------------------------------------------

def _env(cfg: ExperimentConfig, buildings, bank, feature_ids, rng_seed: int = 0):
    return FeatureNavEnv(buildings, cfg.task, bank, feature_ids, reward_variant=cfg.reward_variant,
                         max_steps=cfg.max_steps, feature_rng_seed=rng_seed)


def _run_meta(cfg: ExperimentConfig, worlds: Worlds, seed: int) -> dict:
    return {"task": cfg.task, "feature_ids": list(cfg.feature_ids), "seed": int(seed),
            "reward_variant": cfg.reward_variant, "max_steps": cfg.max_steps,
            "train_ids": list(worlds.split.side("train")[:cfg.train_subset or None]),
            "split_train": list(worlds.split.train), "split_test": list(worlds.split.test),
            "split_seed": worlds.split.seed}


def fit(cfg: ExperimentConfig, worlds: Worlds, seed: int, bank: FeatureBank,
        checkpoint: Optional[Checkpoint] = None, on_update=None, checkpoint_every: int = 0,
        on_checkpoint=None, budget: Optional[int] = None) -> PPOTrainer:
    train_b = worlds.side("train", cfg.train_subset)
    feats = list(cfg.feature_ids)
    trainer = PPOTrainer(lambda i: _env(cfg, train_b, bank, feats, 1000 * seed + i), cfg.ppo_for(seed),
                         feats, _run_meta(cfg, worlds, seed), checkpoint=checkpoint)
    trainer.run(cfg.budget if budget is None else budget, checkpoint_every,
                on_checkpoint=on_checkpoint, on_update=on_update)
    return trainer


def mean_eval(params, cfg: ExperimentConfig, worlds: Worlds, bank, side: str) -> tuple[float, float]:
    b = worlds.side(side, cfg.train_subset if side == "train" else 0)
    res = evaluate(params, _env(cfg, b, bank, list(cfg.feature_ids)), cfg.eval_episodes, cfg.eval_seed,
                   n_buildings=len(b))
    return float(np.mean([r.reward for r in res])), float(np.mean([r.success for r in res]))


def train(cfg: ExperimentConfig, out, seed: int, resume=None) -> dict:
    """Train one agent; writes checkpoints, curve.csv (and eval_curve.csv) and a manifest."""
    worlds = load_worlds(cfg.worlds, cfg)
    bank, enc_files = make_bank(cfg, cfg.feature_ids)
    out = ensure_writable(out)  # only after inputs check out, so failures leave no empty run dirs
    ckpt, prior, prior_eval = None, [], []
    if resume is not None:
        ckpt = Checkpoint.load(resume)
        want = _run_meta(cfg, worlds, seed)
        for key in ("task", "feature_ids", "train_ids", "seed"):
            if ckpt.meta.get(key) != want[key]:
                raise RuntimeError(f"checkpoint {resume} was trained with {key}={ckpt.meta.get(key)!r}, "
                                   f"config asks for {want[key]!r}")
        run_dir = Path(resume).resolve().parent
        run_dir = run_dir.parent if run_dir.name == "checkpoints" else run_dir
        if (run_dir / "curve.csv").exists():
            prior = [r for r in read_curve_csv(run_dir / "curve.csv") if r.update <= ckpt.update]
        if (run_dir / "eval_curve.csv").exists():
            prior_eval = [r for r in read_eval_curve(run_dir / "eval_curve.csv") if r[0] <= ckpt.update]

    ckpt_dir = out / "checkpoints"
    saved: list[Path] = []

    def on_checkpoint(c: Checkpoint):
        ckpt_dir.mkdir(exist_ok=True)
        path = ckpt_dir / f"update_{c.update:06d}.ckpt"
        c.save(path)
        saved.append(path)

    eval_rows = list(prior_eval)

    def on_update(trainer, row: CurveRow):
        if cfg.eval_every and row.update % cfg.eval_every == 0:
            for side in ("train", "test"):
                m, s = mean_eval(trainer.params, cfg, worlds, bank, side)
                eval_rows.append((row.update, row.frames, side, m, s))

    trainer = fit(cfg, worlds, seed, bank, ckpt, on_update, cfg.checkpoint_every,
                  on_checkpoint if cfg.checkpoint_every else None)
    final = out / "final.ckpt"
    trainer.checkpoint().save(final)
    curve = prior + trainer.curve
    (out / "curve.csv").write_text(curve_csv(curve), encoding="utf-8")
    (out / "config.cfg").write_text(dumps(cfg), encoding="utf-8")

    man = RunManifest("train", config_echo(cfg), extra={"seed": seed, "meta": trainer.meta,
                                                        "resumed_from": str(resume) if resume else None})
    for p in [final, out / "curve.csv", out / "config.cfg"] + saved:
        man.add(out, p)
    if cfg.eval_every:
        _write_csv(out / "eval_curve.csv", EVAL_CURVE_COLUMNS, eval_rows)
        man.add(out, out / "eval_curve.csv")
    for p in worlds.files() + enc_files:
        man.add_input(p)
    man.write(out)
    last = curve[-1] if curve else None
    return {"frames": trainer.frames, "updates": trainer.update,
            "final_train_return": last.mean_return if last else float("nan"), "out": str(out)}


def read_eval_curve(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(int(r["update"]), int(r["frames"]), r["side"], float(r["mean_reward"]),
                 float(r["success_rate"])) for r in csv.DictReader(fh)]


# -- evaluation ----------------------------------------------------------------

def _eval_rows(results: Sequence[EpisodeResult], feature: str, side: str) -> list[list]:
    rows = []
    for k, r in enumerate(results):
        _, acc, jerk = behavior_metrics(r.trace, r.collisions) if r.trace else (0, None, None)
        rows.append([feature, r.task, side, r.seed_id, k, r.building_id, float(r.reward), int(r.success),
                     float(r.path_length), float(r.geodesic), r.collisions, r.steps, acc, jerk,
                     json.dumps([[float(x), float(y)] for x, y in r.trace], separators=(",", ":"))])
    return rows


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint, side: str, n_episodes: int, seed: int,
                        out) -> Path:
    if side not in ("train", "test"):
        raise UsageError(f"side must be 'train' or 'test', got {side!r}")
    if n_episodes < 1:
        raise UsageError("--episodes must be >= 1")
    ckpt = Checkpoint.load(checkpoint)
    meta = ckpt.meta
    worlds = load_worlds(cfg.worlds)
    if (meta.get("split_train") != list(worlds.split.train) or meta.get("split_test") != list(worlds.split.test)):
        raise RuntimeError(f"side/split mismatch: checkpoint {checkpoint} was trained against split "
                           f"train={meta.get('split_train')} test={meta.get('split_test')}, but {worlds.root} "
                           f"holds train={list(worlds.split.train)} test={list(worlds.split.test)}")
    ids = meta["train_ids"] if side == "train" else list(worlds.split.test)
    buildings = [worlds.buildings[i] for i in ids]
    run_cfg = cfg.replace(task=meta["task"], reward_variant=meta["reward_variant"], max_steps=meta["max_steps"])
    bank, enc_files = make_bank(cfg, ckpt.feature_ids)
    env = _env(run_cfg, buildings, bank, ckpt.feature_ids)
    results = evaluate(ckpt.params, env, n_episodes, seed, n_buildings=len(buildings), seed_id=str(meta["seed"]))
    return _write_eval(cfg, out, "+".join(ckpt.feature_ids), side, results, seed,
                       inputs=[Path(checkpoint)] + worlds.files() + enc_files)


def evaluate_random(cfg: ExperimentConfig, side: str, n_episodes: int, seed: int, out) -> Path:
    """The random-actions floor used as r_min in RR_blind."""
    if side not in ("train", "test"):
        raise UsageError(f"side must be 'train' or 'test', got {side!r}")
    worlds = load_worlds(cfg.worlds, cfg)
    buildings = worlds.side(side, cfg.train_subset if side == "train" else 0)
    env = _env(cfg, buildings, FeatureBank(), ["blind"])
    results = evaluate(None, env, n_episodes, seed, n_buildings=len(buildings), seed_id="random")
    return _write_eval(cfg, out, "random", side, results, seed, inputs=worlds.files())


def _write_eval(cfg, out, feature, side, results, seed, inputs) -> Path:
    out = ensure_writable(out)
    path = out / "episodes.csv"
    _write_csv(path, EVAL_COLUMNS, _eval_rows(results, feature, side))
    man = RunManifest("eval", config_echo(cfg), extra={"side": side, "seed": seed, "feature": feature,
                                                       "episodes": len(results)})
    man.add(out, path)
    for p in inputs:
        man.add_input(p)
    man.write(out)
    return path


def read_eval_csv(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "episodes.csv"
    if not path.exists():
        raise FileNotFoundError(f"missing result file {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(EVAL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: not an episode CSV (missing columns {sorted(missing)})")
        for r in reader:
            res = EpisodeResult(float(r["reward"]), r["success"] == "1", float(r["path_length"]),
                                float(r["geodesic"]), int(r["collisions"]), seed_id=r["seed_id"],
                                building_id=int(r["building_id"]), steps=int(r["steps"]), task=r["task"])
            rows.append({"feature": r["feature"], "side": r["side"], "result": res,
                         "acceleration": float(r["acceleration"]) if r["acceleration"] else None,
                         "jerk": float(r["jerk"]) if r["jerk"] else None})
    return rows


# -- comparison ----------------------------------------------------------------

def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def compare(treatments: Sequence, blind: Sequence, random: Sequence, out, q: float = 0.2) -> ComparisonReport:
    if not treatments:
        raise UsageError("compare needs at least one treatment result file")
    if not blind or not random:
        raise UsageError("compare needs --blind and --random baseline files")
    for f in list(blind) + list(random):
        p = Path(f)
        if not (p.exists() and (p.is_file() or (p / "episodes.csv").exists())):
            raise FileNotFoundError(f"missing baseline file {f}")

    def resolved(f):
        p = Path(f).resolve()
        return p / "episodes.csv" if p.is_dir() else p

    baseline_paths = {resolved(f) for f in list(blind) + list(random)}
    data: dict = {}          # task -> label -> rows
    order: list = []

    def add(files, label=None):
        for f in files:
            for row in read_eval_csv(f):
                lab = label or row["feature"]
                task = row["result"].task
                data.setdefault(task, {}).setdefault(lab, []).append(row)
                if lab not in order:
                    order.append(lab)

    add([f for f in treatments if resolved(f) not in baseline_paths])
    add(blind, "blind")
    add(random, "random")
    sides = {row["side"] for t in data.values() for rows in t.values() for row in rows}
    if len(sides) > 1:
        raise ValueError(f"result files mix evaluation sides {sorted(sides)}")

    metrics = []
    for task in sorted(data):
        groups = data[task]
        for base in ("blind", "random"):
            if base not in groups:
                raise ValueError(f"no {base} baseline rows for task {task!r}")
        r_blind = float(np.mean([r["result"].reward for r in groups["blind"]]))
        r_min = float(np.mean([r["result"].reward for r in groups["random"]]))
        for lab in order:
            rows = groups.get(lab)
            if not rows:
                continue
            res = [r["result"] for r in rows]
            mean_r = float(np.mean([r.reward for r in res]))
            vals = {
                "n_seeds": len({r.seed_id for r in res}),
                "n_episodes": len(res),
                "mean_reward": mean_r,
                "rr_blind": rr_blind(mean_r, r_blind, r_min) if r_blind != r_min else None,
                "success_rate": float(np.mean([r.success for r in res])),
                "spl": spl(res) if all(r.geodesic > 0 for r in res) else None,
                "collisions": float(np.mean([r.collisions for r in res])),
                "acceleration": _mean(r["acceleration"] for r in rows),
                "jerk": _mean(r["jerk"] for r in rows),
            }
            for name, v in vals.items():
                metrics.append({"task": task, "feature": lab, "metric": name, "value": v})

    # seed-clustered tests need at least two training seeds per feature
    testable = [lab for lab in order if lab != "random"
                and all(len({r["result"].seed_id for r in data[t].get(lab, [])}) >= 2 for t in data)]
    if len(testable) >= 2:
        report = compare_features({t: {lab: [r["result"] for r in data[t][lab]] for lab in testable}
                                   for t in sorted(data)}, q)
    else:
        tasks = sorted(data)
        means = {t: {lab: float(np.mean([r["result"].reward for r in data[t][lab]])) for lab in testable}
                 for t in tasks}
        report = ComparisonReport(tasks, testable, means, {t: list(testable) for t in tasks}, [], [], [], {},
                                  True, q=q)
    report.metrics = metrics

    out = ensure_writable(out)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    _write_csv(out / "metrics.csv", ("task", "feature", "metric", "value"),
               [(m["task"], m["feature"], m["metric"], m["value"]) for m in metrics])
    (out / "significance.dot").write_text(report.to_dot(), encoding="utf-8")
    man = RunManifest("compare", {}, extra={"treatments": [str(f) for f in treatments],
                                            "blind": [str(f) for f in blind], "random": [str(f) for f in random]})
    for name in ("report.json", "metrics.csv", "significance.dot"):
        man.add(out, out / name)
    for f in list(treatments) + list(blind) + list(random):
        man.add_input(resolved(f))
    man.write(out)
    return report


def metric_table(report: ComparisonReport, metric: str, task: Optional[str] = None) -> dict:
    return {m["feature"]: m["value"] for m in report.metrics
            if m["metric"] == metric and (task is None or m["task"] == task)}


# -- curves ------------------------------------------------------------------

@dataclass
class RunInfo:
    label: str
    seed: str
    n_train: Optional[int]
    train_ids: Optional[list]


def run_info(path) -> RunInfo:
    """Label a curve file by the manifest of the run that wrote it."""
    path = Path(path)
    try:
        man = RunManifest.read(path.parent)
    except FileNotFoundError:
        return RunInfo(path.stem, "0", None, None)
    meta = man.extra.get("meta", {})
    label = "+".join(meta.get("feature_ids", [])) or man.config.get("features.ids", "").replace(",", "+")
    ids = meta.get("train_ids")
    return RunInfo(label or path.stem, str(man.extra.get("seed", "0")), len(ids) if ids else None, ids)


def _smoothed(rows: Sequence[CurveRow], window: int) -> list[tuple[int, float]]:
    out = []
    for i, r in enumerate(rows):
        lo = max(0, i - window + 1)
        out.append((r.frames, float(np.mean([x.mean_return for x in rows[lo:i + 1]]))))
    return out


def frames_fraction(curve: Sequence[CurveRow], threshold: float, scratch_frames: int, window: int = 1) -> float:
    """Fraction of scratch's frames after which ``curve`` first reaches ``threshold``."""
    for frames, v in _smoothed(curve, window):
        if v >= threshold:
            return frames / scratch_frames
    return NEVER


def curves(mode: str, files: Sequence, out, scratch: str = "pixels", window: int = 1) -> Path:
    if mode not in ("generalization", "sample_frames", "sample_buildings"):
        raise UsageError(f"unknown curves mode {mode!r}")
    if not files:
        raise UsageError("curves needs at least one curve CSV")
    if window < 1:
        raise UsageError("--window must be >= 1")
    for f in files:
        if not Path(f).exists():
            raise FileNotFoundError(f"missing curve file {f}")
    out = ensure_writable(out)
    path = out / f"{mode}.csv"
    if mode == "generalization":
        rows = []
        for f in files:
            info = run_info(f)
            pts = read_eval_curve(f)
            by_side = {s: {u: (fr, m) for u, fr, side, m, _ in pts if side == s} for s in ("train", "test")}
            for s in ("train", "test"):
                if not by_side[s]:
                    raise ValueError(f"missing counterpart curve: {f} has no {s}-side evaluations")
            for u in sorted(by_side["train"]):
                if u not in by_side["test"]:
                    raise ValueError(f"missing counterpart curve: {f} update {u} has no test-side point")
                fr, tr = by_side["train"][u]
                te = by_side["test"][u][1]
                rows.append((info.label, info.seed, u, fr, tr, te, tr - te))
        _write_csv(path, ("feature", "seed", "update", "frames", "train_reward", "test_reward", "gap"), rows)
    elif mode == "sample_frames":
        runs = [(run_info(f), read_curve_csv(f)) for f in files]
        base = [c for info, c in runs if info.label == scratch and c]
        if not base:
            raise ValueError(f"missing counterpart curve: no {scratch!r} run among the inputs")
        threshold = float(np.mean([_smoothed(c, window)[-1][1] for c in base]))
        scratch_frames = max(c[-1].frames for c in base)
        rows = []
        for info, c in runs:
            frac = frames_fraction(c, threshold, scratch_frames, window)
            reached = math.isfinite(frac)
            rows.append((info.label, info.seed, threshold, int(round(frac * scratch_frames)) if reached else None,
                         scratch_frames, frac, int(reached)))
        _write_csv(path, ("feature", "seed", "threshold", "frames_to_threshold", "scratch_frames", "fraction",
                          "reached"), rows)
    else:
        per_label: dict = {}
        for f in files:
            info = run_info(f)
            if info.train_ids is None:
                raise ValueError(f"{f}: no run manifest with training building ids")
            test = [m for u, fr, side, m, _ in read_eval_curve(f) if side == "test"]
            if not test:
                raise ValueError(f"missing counterpart curve: {f} has no test-side evaluations")
            per_label.setdefault(info.label, []).append((info.n_train, info.train_ids, info.seed, test[-1]))
        rows = []
        for label, runs in per_label.items():
            runs.sort(key=lambda r: (r[0], r[2]))
            if len({r[0] for r in runs}) < 2:
                raise ValueError(f"{label}: sample_buildings needs runs at two or more training-set sizes")
            for small, big in zip(runs, runs[1:]):
                if not set(small[1]) <= set(big[1]):
                    raise ValueError(f"{label}: training building sets are not nested")
            rows += [(label, seed, n, final) for n, _, seed, final in runs]
        _write_csv(path, ("feature", "seed", "n_train", "final_test_reward"), rows)
    man = RunManifest("curves", {}, extra={"mode": mode, "scratch": scratch, "window": window})
    man.add(out, path)
    for f in files:
        man.add_input(f)
    man.write(out)
    return path


# -- feature-set selection -------------------------------------------------------

def read_importance(path, names: Sequence[str]) -> np.ndarray:
    """``feature,importance`` CSV covering every feature of the affinity table."""
    vals = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#") or row[0].strip() == "feature":
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: importance rows must be feature,value")
            try:
                vals[row[0].strip()] = float(row[1])
            except ValueError:
                raise ValueError(f"{path}: importance of {row[0].strip()!r} is not a number") from None
    missing = [n for n in names if n not in vals]
    if missing:
        raise ValueError(f"{path}: no importance for {missing}")
    return np.array([vals[n] for n in names])


def select_set(cfg: ExperimentConfig, affinities, ks: Sequence[int], out, delta: Optional[float] = None,
               weighted: bool = False, importance=None) -> list[dict]:
    if not ks:
        raise UsageError("--k needs at least one value")
    if any(k < 1 for k in ks):
        raise UsageError("every k must be >= 1")
    table = affinity_matrix_from_csv(affinities)
    imp = read_importance(importance, table.names) if importance else None
    out = ensure_writable(out)
    man = RunManifest("select-set", config_echo(cfg), extra={"ks": list(ks), "delta": delta,
                                                             "weighted": weighted})
    man.add_input(affinities)
    if importance:
        man.add_input(importance)
    summary = []
    for k in ks:
        if delta is None:
            sol = min_delta_cover(table.edges, imp, k=k, weighted=weighted)
        else:
            sol = solve_bip(build_bip(table.edges, imp, delta, k, weighted))
        sol_path = out / f"set_k{k}.json"
        sol_path.write_text(sol.to_json(table.names) + "\n", encoding="utf-8")
        man.add(out, sol_path)
        names = [table.names[i] for i in sol.selected_features]
        entry = {"k": k, "status": sol.status, "delta": sol.achieved_delta, "features": names, "config": None}
        if sol.status != INFEASIBLE and names and all(n in FEATURES for n in names):
            cfg_path = out / f"set_k{k}.cfg"
            cfg_path.write_text(dumps(cfg.replace(feature_ids=tuple(names)).validate()), encoding="utf-8")
            man.add(out, cfg_path)
            entry["config"] = cfg_path.name
        summary.append(entry)
    _write_csv(out / "summary.csv", ("k", "status", "delta", "n_features", "features", "config"),
               [(e["k"], e["status"], e["delta"], len(e["features"]), "+".join(e["features"]), e["config"])
                for e in summary])
    man.add(out, out / "summary.csv")
    man.write(out)
    return summary


# -- hyperparameter search ---------------------------------------------------------

_GRID_FORBIDDEN = {"features.ids", "run.seeds", "paths.worlds", "paths.encoders", "paths.out"}


def parse_grid(items: Sequence[str]) -> list[list[str]]:
    """``key=v1,v2`` strings -> every combination as override lists."""
    axes = []
    for item in items:
        if "=" not in item:
            raise UsageError(f"grid entry {item!r} is not key=v1,v2,...")
        key, raw = (p.strip() for p in item.split("=", 1))
        if key not in KEYS:
            raise UsageError(f"grid entry: unknown config key {key!r}")
        if key in _GRID_FORBIDDEN:
            raise UsageError(f"grid entry: {key} cannot be searched")
        vals = [v.strip() for v in raw.split(",") if v.strip()]
        if not vals:
            raise UsageError(f"grid entry {item!r} has no values")
        axes.append([f"{key}={v}" for v in vals])
    if not axes:
        raise UsageError("empty grid")
    return [list(p) for p in itertools.product(*axes)]


def grid_search(cfg: ExperimentConfig, grid: Sequence[str], out, seed: int,
                budget: Optional[int] = None) -> list[dict]:
    """Train pixels-from-scratch per grid point at a reduced budget; rank by final test reward."""
    points = parse_grid(grid)
    budget = cfg.grid_budget if budget is None else budget
    worlds = load_worlds(cfg.worlds, cfg)
    bank = FeatureBank(noise_std=cfg.noise_std)
    ranking = []
    for i, overrides in enumerate(points):
        try:
            pcfg = cfg.with_overrides(overrides).replace(feature_ids=("pixels",))
        except ConfigError as e:
            raise UsageError(f"grid point {i} ({'; '.join(overrides)}): {e}") from None
        pcfg = pcfg.replace(budget=max(budget, pcfg.ppo.n_on))
        trainer = fit(pcfg, worlds, seed, bank)
        test_reward, _ = mean_eval(trainer.params, pcfg, worlds, bank, "test")
        ranking.append({"point": i, "overrides": overrides, "test_reward": test_reward,
                        "train_return": trainer.curve[-1].mean_return, "frames": trainer.frames})
        log.info("grid point %d %s: test reward %.4f", i, overrides, test_reward)
    ranking.sort(key=lambda r: (-r["test_reward"], r["point"]))
    out = ensure_writable(out)
    _write_csv(out / "ranking.csv", ("rank", "point", "test_reward", "train_return", "frames", "overrides"),
               [(n + 1, r["point"], r["test_reward"], r["train_return"], r["frames"], ";".join(r["overrides"]))
                for n, r in enumerate(ranking)])
    best = cfg.with_overrides(ranking[0]["overrides"])
    (out / "best.cfg").write_text(dumps(best), encoding="utf-8")
    man = RunManifest("grid-search", config_echo(cfg), extra={"grid": list(grid), "budget": budget, "seed": seed})
    man.add(out, out / "ranking.csv")
    man.add(out, out / "best.cfg")
    for p in worlds.files():
        man.add_input(p)
    man.write(out)
    return ranking


def feature_catalog() -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("feature", "family", "dim"))
    w.writerows(catalog())
    return buf.getvalue()
