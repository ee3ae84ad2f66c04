"""``midlevel`` command line: exit 0 on success, 2 on usage errors, 1 on runtime failures."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..featurebank import FrozenEncoderError
from . import commands as C
from .config import ConfigError, ExperimentConfig, load_config

log = logging.getLogger("midlevel")


def _common(p: argparse.ArgumentParser) -> None:
    # SUPPRESS lets the flags appear before or after the subcommand
    p.add_argument("--config", default=argparse.SUPPRESS, help="experiment config file (key = value lines)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed (meaning depends on command)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                   help="override a config key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="midlevel", description=__doc__)
    _common(parser)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _common(p)
        return p

    add("gen-worlds", "generate train/test building files and the split manifest")
    add("pretrain-features", "pretrain and freeze the learned encoders on train-side random walks")
    p = add("train", "train one agent on the configured features")
    p.add_argument("--feature", action="append", help="feature id(s) overriding features.ids")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = add("eval", "evaluate a checkpoint (or the random-actions agent) on one split side")
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--checkpoint")
    who.add_argument("--random", action="store_true", help="uniformly random actions (the RR_blind floor)")
    p.add_argument("--side", required=True, choices=("train", "test"))
    p.add_argument("--episodes", type=int, help="episode count (default eval.episodes)")

    p = add("compare", "metrics, significance tests and rank lists over evaluation CSVs")
    p.add_argument("results", nargs="*", help="treatment episode CSVs (or eval output directories)")
    p.add_argument("--blind", nargs="+", required=True)
    p.add_argument("--random", nargs="+", required=True)
    p.add_argument("--q", type=float, default=0.2, help="false discovery rate (default 0.2)")

    p = add("curves", "tidy plot data from curve CSVs")
    p.add_argument("files", nargs="*")
    p.add_argument("--mode", required=True, choices=("generalization", "sample_frames", "sample_buildings"))
    p.add_argument("--scratch", default="pixels", help="label of the from-scratch runs (sample_frames)")
    p.add_argument("--window", type=int, default=1, help="moving-average window over updates")

    p = add("select-set", "max-coverage feature sets from an affinity matrix")
    p.add_argument("--affinities", help="affinity CSV (default: bundled illustrative matrix)")
    p.add_argument("--k", required=True, help="comma-separated set sizes, e.g. 2,3,4")
    p.add_argument("--delta", type=float, help="fixed covering distance instead of the minimal one")
    p.add_argument("--weighted", action="store_true", help="maximize importance-weighted transfer quality")
    p.add_argument("--importance", help="feature,importance CSV for --weighted")

    p = add("grid-search", "rank PPO hyperparameters on pixels-from-scratch at a reduced budget")
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2", help="one axis; repeatable")
    p.add_argument("--budget", type=int, help="frames per grid point (default grid.budget)")

    add("features", "list the feature bank")
    return parser


def _config(args) -> ExperimentConfig:
    path = getattr(args, "config", None)
    cfg = load_config(path) if path else ExperimentConfig()
    if getattr(args, "set", None):
        cfg = cfg.with_overrides(args.set)
    return cfg


def _out(args, default) -> Path:
    return Path(getattr(args, "out", None) or default)


def _seed(args, default: int) -> int:
    s = getattr(args, "seed", None)
    return default if s is None else s


def run(args) -> int:
    cfg = _config(args)
    cmd = args.command
    if cmd == "features":
        sys.stdout.write(C.feature_catalog())
    elif cmd == "gen-worlds":
        cfg = cfg.replace(split_seed=_seed(args, cfg.split_seed))
        split = C.gen_worlds(cfg, _out(args, cfg.worlds))
        print(f"wrote {len(split.train)} train and {len(split.test)} test buildings to {_out(args, cfg.worlds)}")
    elif cmd == "pretrain-features":
        summary = C.pretrain_features(cfg, _out(args, cfg.encoders), _seed(args, cfg.seed))
        for name, s in summary.items():
            print(f"{name}: reconstruction mse {s['initial_mse']:.5f} -> {s['final_mse']:.5f}")
    elif cmd == "train":
        if args.feature:
            cfg = cfg.replace(feature_ids=tuple(args.feature)).validate()
        seed = _seed(args, cfg.seed)
        out = _out(args, Path(cfg.out) / f"{cfg.label}_s{seed}")
        s = C.train(cfg, out, seed, resume=args.resume)
        print(f"trained {s['updates']} updates, {s['frames']} frames; final train return "
              f"{s['final_train_return']:.4f}; outputs in {s['out']}")
    elif cmd == "eval":
        seed = _seed(args, cfg.eval_seed)
        n = args.episodes if args.episodes is not None else cfg.eval_episodes
        if args.random:
            path = C.evaluate_random(cfg, args.side, n, seed, _out(args, Path(cfg.out) / "random" / f"eval_{args.side}"))
        else:
            default = Path(args.checkpoint).resolve().parent
            default = default.parent if default.name == "checkpoints" else default
            path = C.evaluate_checkpoint(cfg, args.checkpoint, args.side, n, seed,
                                         _out(args, default / f"eval_{args.side}"))
        print(f"wrote {n} episodes to {path}")
    elif cmd == "compare":
        out = _out(args, Path(cfg.out) / "compare")
        report = C.compare(args.results, args.blind, args.random, out, args.q)
        for t in report.tasks:
            rr = C.metric_table(report, "rr_blind", t)
            print(f"{t}: " + ", ".join(f"{f} RR_blind={v:.3f}" if v is not None else f"{f} RR_blind=n/a"
                                       for f, v in rr.items()))
        print(f"{len(report.significant)} significant of {len(report.tests)} tests; report in {out}")
    elif cmd == "curves":
        path = C.curves(args.mode, args.files, _out(args, Path(cfg.out) / f"curves_{args.mode}"),
                        args.scratch, args.window)
        print(f"wrote {path}")
    elif cmd == "select-set":
        try:
            ks = [int(k) for k in args.k.split(",") if k.strip()]
        except ValueError:
            raise C.UsageError(f"--k must be comma-separated integers, got {args.k!r}") from None
        if args.importance and not args.weighted:
            raise C.UsageError("--importance only applies with --weighted")
        aff = args.affinities or default_affinities()
        out = _out(args, Path(cfg.out) / "select")
        for e in C.select_set(cfg, aff, ks, out, args.delta, args.weighted, args.importance):
            print(f"k={e['k']}: delta={e['delta']} {e['status']} {{{', '.join(e['features'])}}}")
    elif cmd == "grid-search":
        ranking = C.grid_search(cfg, args.grid, _out(args, Path(cfg.out) / "grid"), _seed(args, cfg.seed),
                                args.budget)
        for n, r in enumerate(ranking, 1):
            print(f"{n}. {'; '.join(r['overrides'])}: test reward {r['test_reward']:.4f}")
    return 0


def default_affinities() -> Path:
    from importlib.resources import files

    return Path(str(files("midlevel") / "data" / "affinities_illustrative.csv"))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (C.UsageError, ConfigError) as e:
        print(f"midlevel {args.command}: usage error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError, FrozenEncoderError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"midlevel {args.command}: error: {msg}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
