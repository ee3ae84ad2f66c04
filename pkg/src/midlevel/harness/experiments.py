"""Multi-run recipes built from the CLI commands."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..stats import cluster_rank_sum, rr_blind
from . import commands as C
from .config import ExperimentConfig

log = logging.getLogger(__name__)


@dataclass
class DirectionalResult:
    rr: dict                      # feature -> mean test RR_blind over seeds
    rr_per_seed: dict             # feature -> [RR_blind of each seed's mean reward]
    mean_reward: dict             # feature -> mean test reward
    r_blind: float
    r_min: float
    p_value: dict                 # "a|b" -> two-sided cluster rank-sum p
    curves: dict = field(default_factory=dict)   # "feature_sSEED" -> curve.csv path
    seconds: float = 0.0


def directional_experiment(cfg: ExperimentConfig, root, features: Sequence[str] = ("depth", "pixels", "blind"),
                           pairs: Sequence[tuple] = (("depth", "pixels"),)) -> DirectionalResult:
    """Train every feature on every seed, evaluate test-side, compare against blind and random.

    Equivalent CLI sequence (per feature f and seed s)::

        midlevel gen-worlds; midlevel train --feature f --seed s; midlevel eval --side test ...
        midlevel eval --random --side test; midlevel compare ... --blind ... --random ...
    """
    if "blind" not in features:
        raise ValueError("the directional experiment needs the blind baseline")
    t0 = time.perf_counter()
    root = Path(root)
    cfg = cfg.replace(worlds=str(root / "worlds"), out=str(root / "runs"))
    C.gen_worlds(cfg, cfg.worlds)
    evals = {f: [] for f in features}
    curves = {}
    for f in features:
        fcfg = cfg.replace(feature_ids=(f,)).validate()
        for s in cfg.seeds:
            run = root / "runs" / f"{f}_s{s}"
            summary = C.train(fcfg, run, s)
            log.info("%s seed %s: %d frames, final train return %.3f (%.0fs elapsed)", f, s,
                     summary["frames"], summary["final_train_return"], time.perf_counter() - t0)
            curves[f"{f}_s{s}"] = run / "curve.csv"
            evals[f].append(C.evaluate_checkpoint(fcfg, run / "final.ckpt", "test", cfg.eval_episodes,
                                                  cfg.eval_seed, run / "eval_test"))
    floor = C.evaluate_random(cfg, "test", cfg.eval_episodes, cfg.eval_seed, root / "runs" / "random" / "eval_test")
    treatments = [p for f in features if f != "blind" for p in evals[f]]
    C.compare(treatments, evals["blind"], [floor], root / "compare")

    rewards = {f: [[r["result"].reward for r in C.read_eval_csv(p)] for p in evals[f]] for f in features}
    r_blind = float(np.mean([x for g in rewards["blind"] for x in g]))
    r_min = float(np.mean([r["result"].reward for r in C.read_eval_csv(floor)]))
    per_seed = {f: [rr_blind(float(np.mean(g)), r_blind, r_min) for g in rewards[f]] for f in features}
    pvals = {f"{a}|{b}": cluster_rank_sum(rewards[a], rewards[b])[1] for a, b in pairs}
    return DirectionalResult(
        rr={f: float(np.mean(v)) for f, v in per_seed.items()}, rr_per_seed=per_seed,
        mean_reward={f: float(np.mean([x for g in rewards[f] for x in g])) for f in features},
        r_blind=r_blind, r_min=r_min, p_value=pvals, curves=curves, seconds=time.perf_counter() - t0)
