"""Grid raycasting kernels (Amanatides-Woo traversal), compiled with numba."""

import numpy as np
from numba import njit

NO_HIT = -1


@njit(cache=True)
def _cast_one(occ, cell_size, x, y, angle, max_range):
    nrows, ncols = occ.shape
    dx = np.cos(angle)
    dy = np.sin(angle)
    col = int(np.floor(x / cell_size))
    row = int(np.floor(y / cell_size))

    if dx > 0.0:
        step_c = 1
        t_max_x = ((col + 1) * cell_size - x) / dx
        t_delta_x = cell_size / dx
    elif dx < 0.0:
        step_c = -1
        t_max_x = (x - col * cell_size) / -dx
        t_delta_x = cell_size / -dx
    else:
        step_c = 0
        t_max_x = np.inf
        t_delta_x = np.inf
    if dy > 0.0:
        step_r = 1
        t_max_y = ((row + 1) * cell_size - y) / dy
        t_delta_y = cell_size / dy
    elif dy < 0.0:
        step_r = -1
        t_max_y = (y - row * cell_size) / -dy
        t_delta_y = cell_size / -dy
    else:
        step_r = 0
        t_max_y = np.inf
        t_delta_y = np.inf

    while True:
        if t_max_x < t_max_y:
            col += step_c
            t = t_max_x
            t_max_x += t_delta_x
            side = 0
        else:
            row += step_r
            t = t_max_y
            t_max_y += t_delta_y
            side = 1
        if t > max_range:
            return max_range, NO_HIT, NO_HIT, side
        if row < 0 or row >= nrows or col < 0 or col >= ncols:
            return t, NO_HIT, NO_HIT, side
        if occ[row, col]:
            return t, row, col, side


@njit(cache=True)
def cast_rays(occ, cell_size, x, y, angles, max_range):
    """Cast one ray per angle from (x, y).

    Returns hit distance, hit row/col (``NO_HIT`` past ``max_range``) and the
    lateral world coordinate of the hit point along the struck cell face.
    """
    n = angles.shape[0]
    dist = np.empty(n)
    rows = np.empty(n, dtype=np.int64)
    cols = np.empty(n, dtype=np.int64)
    lateral = np.empty(n)
    for i in range(n):
        t, r, c, side = _cast_one(occ, cell_size, x, y, angles[i], max_range)
        dist[i] = t
        rows[i] = r
        cols[i] = c
        if side == 0:
            lateral[i] = y + t * np.sin(angles[i])
        else:
            lateral[i] = x + t * np.cos(angles[i])
    return dist, rows, cols, lateral


@njit(cache=True)
def reveal_cells(revealed, coarse, x, y, angles, lengths):
    """Mark every ``coarse``-sized cell a ray passes through for t in [0, length).

    ``revealed`` is updated in place; returns the number of newly set cells.
    """
    nrows, ncols = revealed.shape
    new = 0
    for i in range(angles.shape[0]):
        length = lengths[i]
        if length <= 0.0:
            continue
        angle = angles[i]
        dx = np.cos(angle)
        dy = np.sin(angle)
        col = int(np.floor(x / coarse))
        row = int(np.floor(y / coarse))
        if dx > 0.0:
            step_c = 1
            t_max_x = ((col + 1) * coarse - x) / dx
            t_delta_x = coarse / dx
        elif dx < 0.0:
            step_c = -1
            t_max_x = (x - col * coarse) / -dx
            t_delta_x = coarse / -dx
        else:
            step_c = 0
            t_max_x = np.inf
            t_delta_x = np.inf
        if dy > 0.0:
            step_r = 1
            t_max_y = ((row + 1) * coarse - y) / dy
            t_delta_y = coarse / dy
        elif dy < 0.0:
            step_r = -1
            t_max_y = (y - row * coarse) / -dy
            t_delta_y = coarse / -dy
        else:
            step_r = 0
            t_max_y = np.inf
            t_delta_y = np.inf
        t = 0.0
        while t < length:
            if 0 <= row < nrows and 0 <= col < ncols and not revealed[row, col]:
                revealed[row, col] = True
                new += 1
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x += t_delta_x
                col += step_c
            else:
                t = t_max_y
                t_max_y += t_delta_y
                row += step_r
    return new


@njit(cache=True)
def render_strips(occ, semantic, texture, cell_size, x, y, angles, max_range,
                  base, freq, phase, distance_falloff):
    """Depth, semantic class and shaded texture per ray in one pass."""
    n = angles.shape[0]
    depth = np.empty(n)
    sem = np.zeros(n, dtype=np.int64)
    tex = np.zeros(n)
    for i in range(n):
        t, r, c, side = _cast_one(occ, cell_size, x, y, angles[i], max_range)
        depth[i] = t
        if r >= 0:
            if side == 0:
                lat = y + t * np.sin(angles[i])
            else:
                lat = x + t * np.cos(angles[i])
            p = texture[r, c]
            sem[i] = semantic[r, c]
            tex[i] = base[p] * (0.6 + 0.4 * np.sin(2.0 * np.pi * freq[p] * lat + phase[p])) \
                / (1.0 + distance_falloff * t)
    return depth, sem, tex
