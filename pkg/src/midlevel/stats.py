"""Navigation metrics and the significance tests used to compare features."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm, rankdata


@dataclass
class EpisodeResult:
    reward: float
    success: bool
    path_length: float
    geodesic: float
    collisions: int
    trace: list = field(default_factory=list)
    seed_id: str = "0"
    building_id: int = -1
    steps: int = 0
    task: str = ""


def spl(results: Sequence[EpisodeResult]) -> float:
    """Success weighted by (normalized inverse) path length."""
    if not results:
        raise ValueError("spl needs at least one episode")
    total = 0.0
    for r in results:
        if not r.geodesic > 0:
            raise ValueError(f"shortest-path length must be positive, got {r.geodesic}")
        if r.success:
            total += r.geodesic / max(r.path_length, r.geodesic)
    return total / len(results)


def rr_blind(r_treatment: float, r_blind: float, r_min: float) -> float:
    """Reward rescaled so the blind agent scores 1 and the floor agent 0."""
    if r_blind == r_min:
        raise ZeroDivisionError("blind reward equals the floor reward")
    return (r_treatment - r_min) / (r_blind - r_min)


def behavior_metrics(trace, collisions: int = 0):
    """(collisions, mean |acceleration|, mean |jerk|) from a per-step position trace.

    Jerk is ``None`` for traces shorter than four positions, acceleration is
    ``None`` below three.
    """
    p = np.asarray(trace, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    acc = jerk = None
    if len(p) >= 3:
        acc = float(np.linalg.norm(np.diff(p, n=2, axis=0), axis=1).mean())
    if len(p) >= 4:
        jerk = float(np.linalg.norm(np.diff(p, n=3, axis=0), axis=1).mean())
    return int(collisions), acc, jerk


@lru_cache(maxsize=64)
def _combinations(n: int, k: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(n), k)), dtype=np.intp)


def mann_whitney_u(a, b, alternative: str = "two-sided", method: str = "auto"):
    """Mann-Whitney U for sample ``a`` against ``b``.

    U counts pairs with a > b (ties count one half). ``method`` is "exact"
    (enumerate every assignment of the pooled midranks), "normal" (tie- and
    continuity-corrected), or "auto": exact when the pooled size is <= 12.
    ``alternative`` is "two-sided", "greater" (a tends larger) or "less".
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise ValueError("both samples must be non-empty")
    n = na + nb
    ranks = rankdata(np.concatenate([a, b]))
    u = float(ranks[:na].sum() - na * (na + 1) / 2)
    mu = na * nb / 2.0
    if method == "auto":
        method = "exact" if n <= 12 else "normal"
    if method == "exact":
        sums = ranks[_combinations(n, na)].sum(axis=1) - na * (na + 1) / 2
        tol = 1e-9
        if alternative == "two-sided":
            p = np.mean(np.abs(sums - mu) >= abs(u - mu) - tol)
        elif alternative == "greater":
            p = np.mean(sums >= u - tol)
        elif alternative == "less":
            p = np.mean(sums <= u + tol)
        else:
            raise ValueError(f"unknown alternative {alternative!r}")
        return u, float(min(1.0, p))
    if method != "normal":
        raise ValueError(f"unknown method {method!r}")
    _, counts = np.unique(ranks, return_counts=True)
    tie = float((counts**3 - counts).sum())
    var = na * nb / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return u, 1.0
    sd = math.sqrt(var)
    if alternative == "two-sided":
        z = max(abs(u - mu) - 0.5, 0.0) / sd
        p = 2.0 * norm.sf(z)
    elif alternative == "greater":
        p = norm.sf((u - mu - 0.5) / sd)
    elif alternative == "less":
        p = norm.cdf((u - mu + 0.5) / sd)
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    return u, float(min(1.0, p))


def bh_fdr(p_values, q: float = 0.2) -> np.ndarray:
    """Benjamini-Hochberg step-up; boolean rejection mask in input order."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    mask = np.zeros(m, dtype=bool)
    if m == 0:
        return mask
    order = np.argsort(p, kind="stable")
    below = p[order] <= q * np.arange(1, m + 1) / m
    if below.any():
        k = np.flatnonzero(below).max()
        mask[order[:k + 1]] = True
    return mask


def bh_adjusted(p_values) -> np.ndarray:
    """BH q-values (smallest FDR level at which each hypothesis is rejected)."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if m == 0:
        return p
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    q = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(q, 1.0)
    return out


def spearman_rho(xs, ys) -> float:
    """Pearson correlation of midranks."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 2:
        raise ValueError("need two equal-length sequences of length >= 2")
    rx = rankdata(xs) - (xs.size + 1) / 2.0
    ry = rankdata(ys) - (ys.size + 1) / 2.0
    denom = math.sqrt(float((rx * rx).sum() * (ry * ry).sum()))
    if denom == 0:
        raise ZeroDivisionError("zero rank variance")
    return float((rx * ry).sum() / denom)


def cluster_rank_sum(groups_a, groups_b, alternative: str = "two-sided", method: str = "auto"):
    """Rank-sum test on per-seed mean rewards (one cluster per training seed)."""
    def means(groups):
        out = []
        for g in groups:
            g = np.asarray(g, dtype=float)
            if g.size == 0:
                raise ValueError("a seed cluster has zero episodes")
            out.append(g.mean())
        return out

    ma, mb = means(groups_a), means(groups_b)
    if len(ma) < 2 or len(mb) < 2:
        raise ValueError("need at least two seeds per side")
    return mann_whitney_u(ma, mb, alternative, method)


def group_by_seed(results) -> list[list[float]]:
    """Per-seed reward lists from EpisodeResults, or pass through nested lists."""
    results = list(results)
    if results and isinstance(results[0], EpisodeResult):
        groups: dict = {}
        for r in results:
            groups.setdefault(str(r.seed_id), []).append(r.reward)
        return [groups[k] for k in sorted(groups)]
    return [list(map(float, g)) for g in results]


@dataclass
class ComparisonReport:
    tasks: list
    features: list
    mean_reward: dict                 # task -> feature -> mean episode reward
    rankings: dict                    # task -> features, best first
    tests: list                       # one dict per (task, feature pair)
    significant: list                 # indices into ``tests``
    reversals: list                   # [feature_a, feature_b, task_a_wins, task_b_wins]
    spearman: dict                    # "t1|t2" -> rho or None
    rho_undefined: bool
    metrics: list = field(default_factory=list)   # flat metric rows from the harness
    q: float = 0.2

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=float)

    def edges(self) -> list[dict]:
        """Significance digraph: winner -> loser per significant test."""
        out = []
        for i in self.significant:
            t = self.tests[i]
            out.append({"winner": t["winner"], "loser": t["loser"], "task": t["task"],
                        "p": t["p"], "q_value": t["q_value"], "alpha": t["alpha"]})
        return out

    def to_dot(self) -> str:
        lines = ["digraph significance {"]
        for e in self.edges():
            lines.append(f'  "{e["winner"]}" -> "{e["loser"]}" '
                         f'[label="{e["task"]} a={e["alpha"]}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


_ALPHA_LEVELS = (0.001, 0.01, 0.05, 0.1, 0.2)


def compare_features(results: Mapping[str, Mapping[str, Sequence]], q: float = 0.2,
                     alternative: str = "two-sided") -> ComparisonReport:
    """Rankings and FDR-corrected pairwise cluster tests for one or more tasks.

    ``results`` maps task -> feature -> per-seed reward lists (or EpisodeResults
    carrying ``seed_id``). Every task must cover the same features.
    """
    tasks = list(results)
    if not tasks:
        raise ValueError("no tasks to compare")
    features = list(results[tasks[0]])
    if len(features) < 2:
        raise ValueError("comparison needs at least two features")
    for t in tasks:
        if set(results[t]) != set(features):
            raise ValueError(f"task {t!r} covers a different feature set")

    groups = {t: {f: group_by_seed(results[t][f]) for f in features} for t in tasks}
    mean_reward = {t: {f: float(np.mean(np.concatenate([np.asarray(g, float) for g in groups[t][f]])))
                       for f in features} for t in tasks}
    rankings = {t: sorted(features, key=lambda f: (-mean_reward[t][f], features.index(f))) for t in tasks}

    tests = []
    for t in tasks:
        for fa, fb in itertools.combinations(features, 2):
            u, p = cluster_rank_sum(groups[t][fa], groups[t][fb], alternative)
            n_a, n_b = len(groups[t][fa]), len(groups[t][fb])
            a_wins = u > n_a * n_b / 2
            tests.append({"task": t, "a": fa, "b": fb, "u": u, "p": p,
                          "winner": fa if a_wins else fb, "loser": fb if a_wins else fa,
                          "tied": u == n_a * n_b / 2})
    pvals = [x["p"] for x in tests]
    mask = bh_fdr(pvals, q)
    qvals = bh_adjusted(pvals)
    for x, qv in zip(tests, qvals):
        x["q_value"] = float(qv)
        x["alpha"] = next((lvl for lvl in _ALPHA_LEVELS if qv <= lvl), None)
    significant = [i for i, m in enumerate(mask) if m and not tests[i]["tied"]]

    wins: dict = {}
    for i in significant:
        x = tests[i]
        wins.setdefault((x["winner"], x["loser"]), []).append(x["task"])
    reversals = []
    for fa, fb in itertools.combinations(features, 2):
        if (fa, fb) in wins and (fb, fa) in wins:
            reversals.append([fa, fb, wins[(fa, fb)], wins[(fb, fa)]])

    spearman = {}
    undefined = False
    for t1, t2 in itertools.combinations(tasks, 2):
        xs = [mean_reward[t1][f] for f in features]
        ys = [mean_reward[t2][f] for f in features]
        try:
            spearman[f"{t1}|{t2}"] = spearman_rho(xs, ys)
        except ZeroDivisionError:
            spearman[f"{t1}|{t2}"] = None
            undefined = True
    return ComparisonReport(tasks, features, mean_reward, rankings, tests, significant,
                            reversals, spearman, undefined, q=q)


def rank_reversal_report(results: Mapping[str, Mapping[str, Sequence]], q: float = 0.2,
                         alternative: str = "two-sided") -> ComparisonReport:
    """Feature pairs where each side significantly wins on a different task."""
    if len(results) < 2:
        raise ValueError("rank reversal needs at least two tasks")
    return compare_features(results, q, alternative)
