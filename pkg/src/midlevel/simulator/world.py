"""Procedural buildings, dataset splits and the on-disk world format."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

FLOOR, WALL, DOOR, FURNITURE, CRATE = 0, 1, 2, 3, 4
CLASS_NAMES = ("floor", "wall", "door", "furniture", "crate")
N_PATTERNS = 16
CRATE_PATTERN = 15

MAGIC = b"MLNAV1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sIqdII")


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BuildingParams:
    min_size: float = 8.0
    max_size: float = 14.0
    min_rooms: int = 2
    max_rooms: int = 5
    min_room: float = 3.0
    door_width: float = 1.0
    max_furniture: int = 2
    cell_size: float = 0.25
    max_retries: int = 25


@dataclass(frozen=True, eq=False)
class BuildingMap:
    """Occupancy, semantic and texture grids of one building.

    Grids are indexed ``[row, col]``; world ``x`` runs along columns and ``y``
    along rows, both in meters from the grid origin. Arrays are read-only.
    """

    id: int
    cell_size: float
    occupancy: np.ndarray
    semantic: np.ndarray
    texture: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.occupancy, self.semantic, self.texture):
            arr.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    @property
    def extent(self) -> tuple[float, float]:
        rows, cols = self.shape
        return cols * self.cell_size, rows * self.cell_size

    @property
    def floor_area(self) -> float:
        return float((~self.occupancy).sum()) * self.cell_size**2

    def cell_of(self, pos) -> tuple[int, int]:
        return math.floor(pos[1] / self.cell_size), math.floor(pos[0] / self.cell_size)

    def center_of(self, cell) -> tuple[float, float]:
        return (float(cell[1]) + 0.5) * self.cell_size, (float(cell[0]) + 0.5) * self.cell_size

    def is_free(self, pos) -> bool:
        r, c = self.cell_of(pos)
        rows, cols = self.shape
        return 0 <= r < rows and 0 <= c < cols and not self.occupancy[r, c]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<qd", self.id, self.cell_size))
        h.update(np.asarray(self.shape, dtype="<u4").tobytes())
        for arr in (self.occupancy, self.semantic, self.texture):
            h.update(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())
        return h.hexdigest()

    def with_crate(self, cells) -> "BuildingMap":
        occ = self.occupancy.copy()
        sem = self.semantic.copy()
        tex = self.texture.copy()
        for r, c in cells:
            occ[r, c] = True
            sem[r, c] = CRATE
            tex[r, c] = CRATE_PATTERN
        return BuildingMap(self.id, self.cell_size, occ, sem, tex)


def free_space_connected(occupancy: np.ndarray) -> bool:
    """True when the free cells form a single 4-connected component."""
    _, n = ndimage.label(~occupancy)
    return n == 1


def _split_rooms(rng, rect, n_rooms, min_cells, door_cells, occ, sem, tex):
    rooms = [rect]
    while len(rooms) < n_rooms:
        splittable = []
        for i, (r0, c0, r1, c1) in enumerate(rooms):
            h, w = r1 - r0, c1 - c0
            if max(h, w) >= 2 * min_cells + 1:
                splittable.append((h * w, i))
        if not splittable:
            break
        _, i = max(splittable)
        r0, c0, r1, c1 = rooms.pop(i)
        h, w = r1 - r0, c1 - c0
        pattern = int(rng.integers(0, N_PATTERNS - 1))
        if w >= h:
            wc = int(rng.integers(c0 + min_cells, c1 - min_cells))
            occ[r0:r1, wc] = True
            sem[r0:r1, wc] = WALL
            tex[r0:r1, wc] = pattern
            start = int(rng.integers(r0, r1 - door_cells + 1))
            occ[start:start + door_cells, wc] = False
            sem[start:start + door_cells, wc] = DOOR
            rooms += [(r0, c0, r1, wc), (r0, wc + 1, r1, c1)]
        else:
            wr = int(rng.integers(r0 + min_cells, r1 - min_cells))
            occ[wr, c0:c1] = True
            sem[wr, c0:c1] = WALL
            tex[wr, c0:c1] = pattern
            start = int(rng.integers(c0, c1 - door_cells + 1))
            occ[wr, start:start + door_cells] = False
            sem[wr, start:start + door_cells] = DOOR
            rooms += [(r0, c0, wr, c1), (wr + 1, c0, r1, c1)]
    return rooms


def _add_furniture(rng, rooms, max_items, occ, sem, tex):
    for r0, c0, r1, c1 in rooms:
        for _ in range(int(rng.integers(0, max_items + 1))):
            h = int(rng.integers(2, 7))
            w = int(rng.integers(2, 7))
            if r1 - r0 < h + 4 or c1 - c0 < w + 4:
                continue
            fr = int(rng.integers(r0 + 1, r1 - h - 1))
            fc = int(rng.integers(c0 + 1, c1 - w - 1))
            block = (slice(fr, fr + h), slice(fc, fc + w))
            if occ[block].any():
                continue
            occ[block] = True
            if not free_space_connected(occ):
                occ[block] = False
                continue
            sem[block] = FURNITURE
            tex[block] = int(rng.integers(0, N_PATTERNS - 1))


def generate_building(seed: int, params: BuildingParams | None = None) -> BuildingMap:
    """Generate a walled multi-room building; deterministic in (seed, params)."""
    params = params or BuildingParams()
    cs = params.cell_size
    min_cells = int(np.ceil(params.min_room / cs - 1e-9))
    door_cells = max(1, int(round(params.door_width / cs)))
    lo = int(round(params.min_size / cs))
    hi = int(round(params.max_size / cs))
    if lo < min_cells or hi < lo or params.min_rooms < 1 or door_cells > min_cells:
        raise GenerationError(f"degenerate building params: {params}")

    rng = np.random.default_rng([seed, 0x4D4C])
    for _ in range(params.max_retries):
        rows = int(rng.integers(lo, hi + 1)) + 2
        cols = int(rng.integers(lo, hi + 1)) + 2
        occ = np.zeros((rows, cols), dtype=bool)
        sem = np.full((rows, cols), FLOOR, dtype=np.uint8)
        tex = np.zeros((rows, cols), dtype=np.uint8)
        border = np.zeros_like(occ)
        border[[0, -1], :] = True
        border[:, [0, -1]] = True
        occ[border] = True
        sem[border] = WALL
        side_patterns = rng.integers(0, N_PATTERNS - 1, size=4)
        tex[0, :], tex[-1, :] = side_patterns[0], side_patterns[1]
        tex[:, 0], tex[:, -1] = side_patterns[2], side_patterns[3]

        n_rooms = int(rng.integers(params.min_rooms, params.max_rooms + 1))
        rooms = _split_rooms(rng, (1, 1, rows - 1, cols - 1), n_rooms, min_cells,
                             door_cells, occ, sem, tex)
        if len(rooms) < params.min_rooms:
            continue
        _add_furniture(rng, rooms, params.max_furniture, occ, sem, tex)
        if free_space_connected(occ):
            return BuildingMap(int(seed), cs, occ, sem, tex)
    raise GenerationError(f"no valid building for seed {seed} after {params.max_retries} tries")


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[int, ...]
    test: tuple[int, ...]
    seed: int

    def side(self, name: str) -> tuple[int, ...]:
        if name not in ("train", "test"):
            raise ValueError(f"unknown split side {name!r}")
        return self.train if name == "train" else self.test

    def to_text(self) -> str:
        lines = [f"# split seed={self.seed}"]
        lines += [f"train {i}" for i in self.train]
        lines += [f"test {i}" for i in self.test]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetSplit":
        seed, train, test = 0, [], []
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("# split seed="):
                seed = int(line.split("=", 1)[1])
            elif line and not line.startswith("#"):
                side, ident = line.split()
                (train if side == "train" else test).append(int(ident))
        return cls(tuple(train), tuple(test), seed)


def split_dataset(n_train: int, n_test: int, seed: int) -> DatasetSplit:
    """Draw disjoint train/test building ids."""
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    rng = np.random.default_rng([seed, 0x5350])
    ids = rng.choice(1_000_000, size=n_train + n_test, replace=False)
    return DatasetSplit(tuple(sorted(int(i) for i in ids[:n_train])),
                        tuple(sorted(int(i) for i in ids[n_train:])), int(seed))


def save_building(building: BuildingMap, path) -> None:
    rows, cols = building.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, building.id, building.cell_size, rows, cols))
        for arr in (building.occupancy, building.semantic, building.texture):
            fh.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def load_building(path) -> BuildingMap:
    data = Path(path).read_bytes()
    magic, version, ident, cs, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a building file")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported building format version {version}")
    n = rows * cols
    body = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    if body.size != 3 * n:
        raise ValueError(f"{path}: truncated grid data")
    occ = body[:n].reshape(rows, cols).astype(bool)
    sem = body[n:2 * n].reshape(rows, cols).copy()
    tex = body[2 * n:].reshape(rows, cols).copy()
    return BuildingMap(int(ident), float(cs), occ, sem, tex)
