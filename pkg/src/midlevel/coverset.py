"""Max-coverage feature sets: a boolean integer program solved by branch-and-bound.

Every feature must receive exactly one incoming transfer whose sources are all
selected. Selecting feature t is the self-transfer ({t}, t) at distance 0.
Transfers farther than the covering distance delta are dropped from the
program, and ``min_delta_cover`` binary-searches the smallest delta for which
a cover of at most k features exists.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class TransferEdge:
    sources: tuple
    target: int
    affinity: float

    def __post_init__(self):
        src = tuple(sorted({int(s) for s in self.sources}))
        if not src:
            raise ValueError("a transfer needs at least one source")
        if not 0.0 <= self.affinity <= 1.0:
            raise ValueError(f"affinity {self.affinity} outside [0, 1]")
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "target", int(self.target))
        object.__setattr__(self, "affinity", float(self.affinity))

    @property
    def distance(self) -> float:
        return 1.0 - self.affinity

    @property
    def is_self(self) -> bool:
        return self.sources == (self.target,)

    @classmethod
    def at_distance(cls, sources, target, distance):
        return cls(tuple(sources), target, 1.0 - distance)


def self_edges(m: int) -> list[TransferEdge]:
    return [TransferEdge((t,), t, 1.0) for t in range(m)]


@dataclass
class BIPInstance:
    """Canonical form ``A x <= b``; x = transfer indicators, then feature indicators."""
    n_features: int
    edges: list                 # kept edges (distance <= delta), index = variable
    A: np.ndarray
    b: np.ndarray
    objective: np.ndarray
    sense: str                  # "min" or "max"
    delta: float
    k: Optional[int]
    row_kind: list              # "II", "III", or "cap" per row

    @property
    def n_vars(self) -> int:
        return len(self.edges) + self.n_features


@dataclass
class CoverSolution:
    selected_features: tuple
    selected_transfers: list
    achieved_delta: float
    objective_value: float
    status: str
    x: Optional[np.ndarray] = None
    delta: float = 0.0
    nodes: int = 0

    def to_dict(self, names: Optional[Sequence[str]] = None) -> dict:
        def nm(i):
            return names[i] if names is not None else i
        return {
            "status": self.status,
            "selected_features": [nm(i) for i in self.selected_features],
            "achieved_delta": self.achieved_delta,
            "objective_value": self.objective_value,
            "transfers": [{"sources": [nm(s) for s in e.sources], "target": nm(e.target),
                           "affinity": e.affinity} for e in self.selected_transfers],
        }

    def to_json(self, names=None) -> str:
        return json.dumps(self.to_dict(names), indent=2, sort_keys=True)


def _n_features(edges) -> int:
    return 1 + max(max(max(e.sources), e.target) for e in edges)


def _check_self_edges(edges, m):
    have = {e.target for e in edges if e.is_self and e.distance == 0.0}
    missing = sorted(set(range(m)) - have)
    if missing:
        raise ValueError(f"features without a self-edge: {missing}")


def _importance(importance, m) -> np.ndarray:
    if importance is None:
        return np.ones(m)
    r = np.asarray(importance, dtype=float)
    if r.shape != (m,):
        raise ValueError(f"need {m} importance weights, got shape {r.shape}")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise ValueError("importance weights must be finite and >= 0")
    return r


def build_bip(edges: Sequence[TransferEdge], importance=None, delta: float = 0.0,
              k: Optional[int] = None, weighted: bool = False,
              n_features: Optional[int] = None) -> BIPInstance:
    if delta < 0:
        raise ValueError("delta must be >= 0")
    edges = list(edges)
    m = n_features if n_features is not None else _n_features(edges)
    _check_self_edges(edges, m)
    r = _importance(importance, m)
    kept = [e for e in edges if e.distance <= delta]
    n_e = len(kept)
    rows, b, kind = [], [], []
    for i, e in enumerate(kept):
        row = np.zeros(n_e + m)
        row[i] = len(e.sources)
        for s in e.sources:
            row[n_e + s] = -1.0
        rows.append(row)
        b.append(0.0)
        kind.append("II")
    for t in range(m):
        row = np.zeros(n_e + m)
        for i, e in enumerate(kept):
            if e.target == t:
                row[i] = 1.0
        rows.append(row)
        b.append(1.0)
        rows.append(-row)
        b.append(-1.0)
        kind += ["III", "III"]
    if k is not None:
        row = np.zeros(n_e + m)
        row[n_e:] = 1.0
        rows.append(row)
        b.append(float(k))
        kind.append("cap")
    if weighted:
        obj = np.concatenate([[r[e.target] * e.affinity for e in kept], np.zeros(m)])
        sense = "max"
    else:
        obj = np.ones(n_e + m)
        sense = "min"
    return BIPInstance(m, kept, np.array(rows).reshape(len(rows), n_e + m), np.array(b),
                       obj, sense, float(delta), k, kind)


def solve_bip(inst: BIPInstance) -> CoverSolution:
    """Exact depth-first branch-and-bound over feature indicators.

    For a fixed feature set S the best transfers are independent per target
    (cheapest, or highest weight in weighted mode), so only S is searched.
    Features are decided in index order, include first; ties in objective go
    to the smaller set, then the lexicographically smallest sorted index tuple.
    """
    m, edges = inst.n_features, inst.edges
    weighted = inst.sense == "max"
    cap = m if inst.k is None else max(int(inst.k), -1)
    n_e = len(edges)
    obj = inst.objective

    # per target: (score, edge index, source mask) sorted best first
    by_target: list[list] = [[] for _ in range(m)]
    for i, e in enumerate(edges):
        mask = 0
        for s in e.sources:
            mask |= 1 << s
        score = obj[i] if weighted else -e.distance
        by_target[e.target].append((score, i, mask))
    for lst in by_target:
        lst.sort(key=lambda t: (-t[0], t[1]))

    def assign(S):
        """Best edge per target given selected mask S, or None when some target is uncovered."""
        out = []
        for lst in by_target:
            for score, i, mask in lst:
                if mask & ~S == 0:
                    out.append(i)
                    break
            else:
                return None
        return out

    def value(chosen_edges, size):
        if weighted:
            return float(sum(obj[i] for i in chosen_edges))
        return float(len(chosen_edges) + size)

    best = {"val": None, "S": None, "key": None}
    nodes = 0

    def dfs(j, S, excluded, size):
        nonlocal nodes
        nodes += 1
        # propagation: every target still needs a candidate avoiding excluded features
        ub = 0.0
        for lst in by_target:
            for score, i, mask in lst:
                if mask & excluded == 0:
                    ub += score
                    break
            else:
                return
        key = (size, tuple(i for i in range(j) if S >> i & 1))
        chosen = assign(S)
        if best["val"] is not None:
            # nothing below this node beats the incumbent or wins its tie
            if weighted:
                if ub < best["val"] or (ub == best["val"] and key > best["key"]):
                    return
            else:
                lb = m + size + (0 if chosen is not None else 1)
                if lb > best["val"] or (lb == best["val"] and key > best["key"]):
                    return
        if chosen is not None:
            val = value(chosen, size)
            if (best["val"] is None or (val > best["val"] if weighted else val < best["val"])
                    or (val == best["val"] and key < best["key"])):
                best.update(val=val, S=S, key=key)
            if not weighted:
                return  # supersets only add to the count
        if j == m or size >= cap:
            return
        if size < cap:
            dfs(j + 1, S | (1 << j), excluded, size + 1)
        dfs(j + 1, S, excluded | (1 << j), size)

    if cap >= 0:
        dfs(0, 0, 0, 0)
    if best["val"] is None:
        return CoverSolution((), [], math.nan, math.nan, INFEASIBLE, None, inst.delta, nodes)

    S = best["S"]
    chosen = assign(S)
    feats = tuple(i for i in range(m) if S >> i & 1)
    x = np.zeros(n_e + m, dtype=np.int8)
    x[chosen] = 1
    x[[n_e + f for f in feats]] = 1
    transfers = [edges[i] for i in chosen]
    objective = best["val"]
    achieved = max(e.distance for e in transfers)
    return CoverSolution(feats, transfers, achieved, objective, OPTIMAL, x, inst.delta, nodes)


def min_delta_cover(edges: Sequence[TransferEdge], importance=None, k: int = 1,
                    weighted: bool = False, n_features: Optional[int] = None) -> CoverSolution:
    """Smallest covering distance admitting a cover of at most k features."""
    if k < 1:
        raise ValueError("k must be >= 1")
    edges = list(edges)
    m = n_features if n_features is not None else _n_features(edges)
    deltas = sorted({e.distance for e in edges})

    def probe(d):
        return solve_bip(build_bip(edges, importance, d, k, weighted, m))

    lo, hi = 0, len(deltas) - 1
    top = probe(deltas[hi])
    if top.status != OPTIMAL:
        raise RuntimeError("no covering distance admits a cover of this size")
    found = top
    while lo < hi:
        mid = (lo + hi) // 2
        sol = probe(deltas[mid])
        if sol.status == OPTIMAL:
            hi, found = mid, sol
        else:
            lo = mid + 1
    if found.delta != deltas[lo]:
        found = probe(deltas[lo])
    found.achieved_delta = deltas[lo]
    return found


def verify_cover(solution: CoverSolution, n_features: int, delta: float,
                 k: Optional[int] = None) -> list[str]:
    """Problems with a solution, empty when it is a valid delta-cover."""
    problems = []
    targets = [e.target for e in solution.selected_transfers]
    for t in range(n_features):
        c = targets.count(t)
        if c != 1:
            problems.append(f"feature {t} has {c} incoming transfers")
    chosen = set(solution.selected_features)
    for e in solution.selected_transfers:
        if not set(e.sources) <= chosen:
            problems.append(f"transfer {e.sources}->{e.target} uses unselected sources")
        if e.distance > delta:
            problems.append(f"transfer {e.sources}->{e.target} exceeds delta")
    if k is not None and len(chosen) > k:
        problems.append(f"{len(chosen)} features selected, cap is {k}")
    return problems


@dataclass
class AffinityTable:
    names: list
    edges: list = field(default_factory=list)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown feature name {name!r}") from None


def _affinity(text, where):
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"{where}: not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{where}: affinity {v} outside [0, 1]")
    return v


def affinity_matrix_from_csv(path) -> AffinityTable:
    """Read a source-by-target affinity matrix plus optional multi-source rows.

    The header row names the targets; each of the next rows starts with a
    source name. Extra rows ``a+b,target,affinity`` add multi-source edges.
    Diagonal cells are ignored: every feature gets a self-edge at affinity 1.
    Lines starting with ``#`` are comments.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)
                if r and any(c.strip() for c in r) and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ValueError("empty affinity file")
    names = [c.strip() for c in rows[0][1:]]
    m = len(names)
    if m == 0 or len(set(names)) != m:
        raise ValueError("header must list distinct feature names")
    square, extra = rows[1:1 + m], rows[1 + m:]
    if len(square) != m:
        raise ValueError(f"matrix has {len(square)} rows for {m} columns; must be square")
    table = AffinityTable(names, self_edges(m))
    for r, row in enumerate(square):
        if len(row) != m + 1:
            raise ValueError(f"row {r + 1} ({row[0]!r}) has {len(row) - 1} values, expected {m}")
        s = table.index(row[0].strip())
        if s != r:
            raise ValueError(f"row {r + 1} is {row[0]!r}, expected {names[r]!r}")
        for t in range(m):
            v = _affinity(row[t + 1], f"row {row[0].strip()!r} column {names[t]!r}")
            if s != t:
                table.edges.append(TransferEdge((s,), t, v))
    for row in extra:
        if len(row) != 3:
            raise ValueError(f"multi-source row {row!r} must be sources,target,affinity")
        srcs = tuple(table.index(n.strip()) for n in row[0].split("+"))
        t = table.index(row[1].strip())
        table.edges.append(TransferEdge(srcs, t, _affinity(row[2], f"multi-source row {row[0]!r}")))
    return table
