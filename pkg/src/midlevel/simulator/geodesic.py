"""Shortest paths over the free-cell grid (8-connected, no corner cutting)."""

import math

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .world import BuildingMap

_NEIGHBOURS = [(0, 1, 1.0), (1, 0, 1.0), (1, 1, math.sqrt(2)), (1, -1, math.sqrt(2))]


def _graph(building: BuildingMap):
    cached = building._cache.get("graph")
    if cached is not None:
        return cached
    free = ~building.occupancy
    rows, cols = free.shape
    index = np.arange(rows * cols).reshape(rows, cols)
    src, dst, weight = [], [], []
    for dr, dc, w in _NEIGHBOURS:
        r0, r1 = 0, rows - dr
        c0, c1 = max(0, -dc), cols - max(0, dc)
        a = free[r0:r1, c0:c1]
        b = free[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        ok = a & b
        if dr and dc:
            # diagonal moves need both orthogonal neighbours free
            ok &= free[r0 + dr:r1 + dr, c0:c1] & free[r0:r1, c0 + dc:c1 + dc]
        src.append(index[r0:r1, c0:c1][ok])
        dst.append(index[r0 + dr:r1 + dr, c0 + dc:c1 + dc][ok])
        weight.append(np.full(int(ok.sum()), w * building.cell_size))
    src, dst, weight = map(np.concatenate, (src, dst, weight))
    graph = csr_matrix((np.r_[weight, weight], (np.r_[src, dst], np.r_[dst, src])),
                       shape=(rows * cols, rows * cols))
    building._cache["graph"] = graph
    return graph


def distance_field(building: BuildingMap, cell) -> np.ndarray:
    """Geodesic meters from ``cell`` to every grid cell (inf for walls/unreachable)."""
    r, c = cell
    if building.occupancy[r, c]:
        raise ValueError(f"cell {cell} is inside a wall")
    rows, cols = building.shape
    d = dijkstra(_graph(building), directed=False, indices=r * cols + c)
    return d.reshape(rows, cols)


def geodesic_distance(building: BuildingMap, a, b) -> float:
    """Shortest-path length in meters between the cells holding positions a and b."""
    for p in (a, b):
        if not building.is_free(p):
            raise ValueError(f"position {tuple(p)} is inside a wall")
    ca, cb = building.cell_of(a), building.cell_of(b)
    if ca == cb:
        return 0.0
    return float(distance_field(building, ca)[cb])
