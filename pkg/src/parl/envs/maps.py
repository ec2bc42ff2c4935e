"""Default layouts and parsers for map override files."""
from __future__ import annotations

import numpy as np

from ..core import DomainError
from .kernels import (
    CELL_FROZEN,
    CELL_GOAL,
    CELL_HOLE,
    CELL_START,
    MOVE_EAST,
    MOVE_NORTH,
    MOVE_SOUTH,
    MOVE_WEST,
)

FROZENLAKE_4X4 = ["SFFF", "FHFH", "FFFH", "HFFG"]

TAXI_MAP = [
    "+---------+",
    "|R: | : :G|",
    "| : | : : |",
    "| : : : : |",
    "| | : | : |",
    "|Y| : |B: |",
    "+---------+",
]

# Red, Green, Yellow, Blue
TAXI_LANDMARKS = ((0, 0), (0, 4), (4, 0), (4, 3))
TAXI_LANDMARK_NAMES = ("Red", "Green", "Yellow", "Blue")

_CELL_CODES = {"S": CELL_START, "F": CELL_FROZEN, "H": CELL_HOLE, "G": CELL_GOAL}


def parse_frozenlake(rows: list[str]) -> np.ndarray:
    rows = [r.strip() for r in rows if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise DomainError("FrozenLake map must be a non-empty rectangle")
    grid = np.empty((len(rows), len(rows[0])), dtype=np.int64)
    for i, line in enumerate(rows):
        for j, ch in enumerate(line.upper()):
            if ch not in _CELL_CODES:
                raise DomainError(f"unknown FrozenLake cell {ch!r}")
            grid[i, j] = _CELL_CODES[ch]
    if (grid == CELL_START).sum() != 1:
        raise DomainError("FrozenLake map needs exactly one S cell")
    if (grid == CELL_GOAL).sum() < 1:
        raise DomainError("FrozenLake map needs a G cell")
    return grid


def frozenlake_rows(grid: np.ndarray) -> list[str]:
    inv = {v: k for k, v in _CELL_CODES.items()}
    return ["".join(inv[int(c)] for c in row) for row in grid]


def parse_taxi(lines: list[str]) -> tuple[np.ndarray, tuple[tuple[int, int], ...]]:
    """Move bitmasks and landmark cells (ordered R, G, Y, B) from the ASCII layout."""
    lines = [ln.rstrip("\n") for ln in lines if ln.strip()]
    if len(lines) != 7 or any(len(ln) != 11 for ln in lines):
        raise DomainError("Taxi map must be the 7x11 ASCII layout")
    grid = np.zeros((5, 5), dtype=np.int64)
    marks = {}
    for r in range(5):
        row = lines[r + 1]
        for c in range(5):
            m = 0
            if r < 4:
                m |= MOVE_SOUTH
            if r > 0:
                m |= MOVE_NORTH
            if c < 4 and row[2 * c + 2] == ":":
                m |= MOVE_EAST
            if c > 0 and row[2 * c] == ":":
                m |= MOVE_WEST
            grid[r, c] = m
            ch = row[2 * c + 1]
            if ch in "RGYB":
                marks[ch] = (r, c)
    if set(marks) != set("RGYB"):
        raise DomainError("Taxi map must place landmarks R, G, Y and B")
    return grid, tuple(marks[k] for k in "RGYB")


def read_map_file(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()
