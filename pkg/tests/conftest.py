import numpy as np
import pytest

from midlevel.simulator import WALL, BuildingMap, generate_building


def room(rows: int, cols: int, ident: int = 0, blocks=()) -> BuildingMap:
    """Walled rectangle of free cells, with optional interior wall cells."""
    occ = np.zeros((rows, cols), dtype=bool)
    occ[[0, -1], :] = True
    occ[:, [0, -1]] = True
    for r, c in blocks:
        occ[r, c] = True
    sem = np.where(occ, WALL, 0).astype(np.uint8)
    tex = np.zeros((rows, cols), dtype=np.uint8)
    return BuildingMap(ident, 0.25, occ, sem, tex)


@pytest.fixture(scope="session")
def buildings():
    return [generate_building(s) for s in (11, 12, 13)]


@pytest.fixture
def open_room():
    return room(42, 42)


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE: dict = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> bool:
    """Remember one acceptance outcome and echo it immediately."""
    line = f"CRITERION {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
