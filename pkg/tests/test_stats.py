import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from midlevel.stats import (
    EpisodeResult, behavior_metrics, bh_adjusted, bh_fdr, cluster_rank_sum, mann_whitney_u,
    rank_reversal_report, rr_blind, spearman_rho, spl,
)


def ep(success, path, geo, reward=0.0, seed="0"):
    return EpisodeResult(reward, success, path, geo, 0, seed_id=seed)


def u_by_pairs(a, b):
    return sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in a for y in b)


def permutation_p(a, b):
    """Two-sided p over every reassignment of the pooled values, U counted pairwise."""
    pooled = list(a) + list(b)
    na, n = len(a), len(a) + len(b)
    mu = na * (n - na) / 2
    obs = abs(u_by_pairs(a, b) - mu)
    hits = total = 0
    for idx in itertools.combinations(range(n), na):
        s = set(idx)
        ga = [pooled[i] for i in idx]
        gb = [pooled[i] for i in range(n) if i not in s]
        hits += abs(u_by_pairs(ga, gb) - mu) >= obs - 1e-9
        total += 1
    return hits / total


# -- metrics -----------------------------------------------------------------

def test_spl_examples():
    assert spl([ep(False, 3.0, 2.0), ep(False, 1.0, 1.0)]) == 0.0
    assert spl([ep(True, 2.0, 2.0)]) == 1.0
    assert spl([ep(True, 4.0, 2.0)]) == 0.5
    with pytest.raises(ValueError):
        spl([ep(True, 1.0, 0.0)])
    with pytest.raises(ValueError):
        spl([])


@given(st.lists(st.tuples(st.booleans(), st.floats(0, 100), st.floats(0.01, 50)), min_size=1, max_size=30))
def test_spl_bounds_and_success_rate(rows):
    results = [ep(s, p, g) for s, p, g in rows]
    assert 0.0 <= spl(results) <= 1.0
    geodesic = [ep(s, g, g) for s, _, g in rows]
    assert spl(geodesic) == pytest.approx(np.mean([s for s, _, _ in rows]))


def test_rr_blind():
    assert rr_blind(3.7, 3.7, -2.0) == 1.0
    assert rr_blind(-2.0, 3.7, -2.0) == 0.0
    assert rr_blind(5.0, 2.0, 0.0) == 2.5
    with pytest.raises(ZeroDivisionError):
        rr_blind(1.0, 2.0, 2.0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_rr_blind_identity(blind, floor):
    if blind != floor:
        assert rr_blind(blind, blind, floor) == 1.0


def test_behavior_metrics():
    assert behavior_metrics([(1.0, 2.0)] * 5) == (0, 0.0, 0.0)
    line = [(0.25 * i, 0.5 * i) for i in range(6)]
    assert behavior_metrics(line, 2)[:2] == (2, 0.0)
    # velocities 0.25, 0.25, 0 -> accelerations 0, -0.25 -> jerk -0.25
    _, acc, jerk = behavior_metrics([0.0, 0.25, 0.5, 0.5])
    assert acc == pytest.approx(0.125) and jerk == pytest.approx(0.25)
    assert behavior_metrics([0.0, 1.0, 2.0])[2] is None
    assert behavior_metrics([0.0, 1.0])[1] is None


@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=4, max_size=20),
       st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_behavior_translation_invariant(trace, dx, dy):
    moved = [(x + dx, y + dy) for x, y in trace]
    _, a1, j1 = behavior_metrics(trace)
    _, a2, j2 = behavior_metrics(moved)
    assert a1 == pytest.approx(a2, abs=1e-8) and j1 == pytest.approx(j2, abs=1e-8)


# -- Mann-Whitney ------------------------------------------------------------

def test_mwu_examples():
    u, p = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert u == 0 and p == pytest.approx(0.1)
    _, p = mann_whitney_u([1, 2, 3, 4], [1, 2, 3, 4])
    assert p >= 0.99
    a, b = [3.1, 0.2, 5.5, 2.2], [1.0, 4.4, 6.0, 7.1, 0.5]
    u1, p1 = mann_whitney_u(a, b)
    u2, p2 = mann_whitney_u(b, a)
    assert p1 == p2 and u2 == len(a) * len(b) - u1
    with pytest.raises(ValueError):
        mann_whitney_u([], [1.0])


def test_mwu_exact_matches_permutation_enumeration():
    rng = np.random.default_rng(0)
    for n in range(2, 11):
        for na in range(1, n):
            for _ in range(3):
                vals = rng.integers(0, 6, size=n).astype(float)  # ties on purpose
                a, b = vals[:na], vals[na:]
                u, p = mann_whitney_u(a, b, method="exact")
                assert u == u_by_pairs(a, b)
                assert p == pytest.approx(permutation_p(a, b), abs=1e-12)


def test_mwu_one_sided():
    _, g = mann_whitney_u([7, 8, 9], [1, 2, 3], alternative="greater")
    _, l = mann_whitney_u([7, 8, 9], [1, 2, 3], alternative="less")
    assert g == pytest.approx(0.05) and l == 1.0


def exact_normal_gap(na, nb):
    """Largest |p_exact - p_normal| over every achievable U for tie-free samples."""
    n, gaps = na + nb, {}
    for idx in itertools.combinations(range(n), na):
        u = sum(idx) - na * (na - 1) / 2
        if u in gaps:
            continue
        a = [float(i) for i in idx]
        b = [float(i) for i in range(n) if i not in set(idx)]
        gaps[u] = abs(mann_whitney_u(a, b, method="exact")[1] - mann_whitney_u(a, b, method="normal")[1])
    return max(gaps.values())


def test_mwu_branches_match_reference_implementation():
    # independent route: scipy's exact and continuity-corrected asymptotic tests
    from scipy.stats import mannwhitneyu
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(9, 13))
        na = int(rng.integers(1, n))
        vals = np.round(rng.normal(size=n) * 2) / 2 + np.r_[np.zeros(na), np.full(n - na, rng.uniform(0, 2))]
        a, b = vals[:na], vals[na:]
        assert mann_whitney_u(a, b, method="normal")[1] == pytest.approx(
            mannwhitneyu(a, b, method="asymptotic").pvalue, abs=1e-12)
        if len(set(vals)) == n:
            assert mann_whitney_u(a, b, method="exact")[1] == pytest.approx(
                mannwhitneyu(a, b, method="exact").pvalue, abs=1e-12)


def test_mwu_exact_and_normal_agree_balanced_splits():
    for na, nb in [(5, 5), (5, 6), (4, 7), (5, 7), (6, 6), (4, 8)]:
        assert exact_normal_gap(na, nb) < 0.02, (na, nb)


def test_mwu_exact_and_normal_agree_all_splits():
    # every split with 9 <= n <= 12; small minority groups exceed the bound
    gaps = {(na, n - na): exact_normal_gap(na, n - na) for n in range(9, 13) for na in range(1, n // 2 + 1)}
    worst = max(gaps, key=gaps.get)
    assert gaps[worst] < 0.02, f"split {worst}: |dp| = {gaps[worst]:.4f}"


# -- BH / Spearman -----------------------------------------------------------

def test_bh_examples():
    assert bh_fdr([0.001, 0.02, 0.03, 0.5], 0.2).tolist() == [True, True, True, False]
    assert not bh_fdr([1.0, 1.0, 1.0], 0.2).any()
    assert bh_fdr([0.01], 0.2).tolist() == [True]
    assert bh_fdr([0.5, 0.001, 0.03, 0.02], 0.2).tolist() == [False, True, True, True]
    assert bh_adjusted([0.001, 0.02, 0.03, 0.5]).tolist() == pytest.approx([0.004, 0.04, 0.04, 0.5])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.001, 0.5), st.floats(0.001, 0.5))
def test_bh_monotone_in_q(p, q1, q2):
    lo, hi = sorted((q1, q2))
    small, big = bh_fdr(p, lo), bh_fdr(p, hi)
    assert np.all(big[small])


def test_spearman_examples():
    assert spearman_rho([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
    assert spearman_rho([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert spearman_rho([1, 2, 3], [1, 3, 2]) == 0.5
    with pytest.raises(ZeroDivisionError):
        spearman_rho([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman_rho([1], [1])


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(-400, 400), st.integers(-400, 400)), min_size=3, max_size=15))
def test_spearman_monotone_invariance(pairs):
    # integer grid keeps the transforms strictly monotone in floating point
    xs, ys = (np.array(v, float) / 4 for v in zip(*pairs))
    try:
        rho = spearman_rho(xs, ys)
    except ZeroDivisionError:
        return
    assert spearman_rho(np.exp(xs / 50), ys) == pytest.approx(rho, abs=1e-12)
    assert spearman_rho(xs, ys**3 + 2 * ys) == pytest.approx(rho, abs=1e-12)


# -- cluster test and rank reversal --------------------------------------------

def test_cluster_rank_sum_dominant_side():
    rng = np.random.default_rng(0)
    a = [list(rng.normal(1.0, 1.0, 50)) for _ in range(10)]
    b = [list(rng.normal(0.0, 1.0, 50)) for _ in range(10)]
    u, p = cluster_rank_sum(a, b)
    assert p < 0.05
    # oracle: exact enumeration over per-seed means
    ma, mb = [np.mean(g) for g in a], [np.mean(g) for g in b]
    _, exact = mann_whitney_u(ma, mb, method="exact")
    assert exact < 0.05 and u == u_by_pairs(ma, mb)


def test_cluster_rank_sum_null_and_order():
    same = [[1.0, 2.0], [3.0, 0.0], [1.5, 1.5]]
    _, p = cluster_rank_sum(same, [list(g) for g in same])
    assert p > 0.5
    rng = np.random.default_rng(2)
    a = [list(rng.normal(size=5)) for _ in range(4)]
    b = [list(rng.normal(size=5)) for _ in range(4)]
    shuffled = [list(rng.permutation(g)) for g in a]
    assert cluster_rank_sum(a, b) == cluster_rank_sum(shuffled, b)
    with pytest.raises(ValueError):
        cluster_rank_sum([[1.0], []], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        cluster_rank_sum([[1.0]], [[1.0], [2.0]])


def synthetic(rng, means, seeds=10, episodes=20):
    out = {}
    for task, per_feature in means.items():
        out[task] = {}
        for f, mu in per_feature.items():
            out[task][f] = [list(rng.normal(mu + rng.normal(0, 0.25), 1.0, episodes)) for _ in range(seeds)]
    return out


def test_rank_reversal_flags_constructed_pair():
    rng = np.random.default_rng(0)
    data = synthetic(rng, {"t1": {"A": 1.0, "B": 0.0, "C": -1.0}, "t2": {"A": 0.0, "B": 1.0, "C": -1.0}})
    rep = rank_reversal_report(data)
    assert [r[:2] for r in rep.reversals] == [["A", "B"]]
    assert rep.rankings["t1"][0] == "A" and rep.rankings["t2"][0] == "B"
    assert all(0 <= t["p"] <= 1 for t in rep.tests)
    assert set(rep.significant) <= set(range(len(rep.tests)))
    dot = rep.to_dot()
    assert dot.startswith("digraph") and '"A" -> "B"' in dot and '"B" -> "A"' in dot
    assert '"A"' in rep.to_json()


def test_rank_reversal_identical_everywhere():
    g = [[1.0, 1.0]] * 3
    data = {t: {f: g for f in "AB"} for t in ("t1", "t2")}
    rep = rank_reversal_report(data)
    assert rep.reversals == [] and rep.rho_undefined and rep.spearman["t1|t2"] is None


def test_rank_reversal_preconditions():
    with pytest.raises(ValueError):
        rank_reversal_report({"t1": {"A": [[1.0], [2.0]], "B": [[1.0], [2.0]]}})
    with pytest.raises(ValueError):
        rank_reversal_report({"t1": {"A": [[1.0], [2.0]]}, "t2": {"A": [[1.0], [2.0]]}})


def test_rank_reversal_accepts_episode_results():
    rng = np.random.default_rng(1)
    data = synthetic(rng, {"t1": {"A": 1.0, "B": 0.0}, "t2": {"A": 0.0, "B": 1.0}})
    as_results = {t: {f: [EpisodeResult(r, False, 0, 1, 0, seed_id=str(i)) for i, g in enumerate(groups)
                          for r in g] for f, groups in fs.items()} for t, fs in data.items()}
    a, b = rank_reversal_report(data), rank_reversal_report(as_results)
    assert a.reversals == b.reversals
    for t in a.mean_reward:
        assert a.mean_reward[t] == pytest.approx(b.mean_reward[t])
