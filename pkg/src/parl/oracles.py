"""Exact dynamic-programming references for sanity-checking learned policies.

These work from the environment rules directly (no sampling), so tests can
compare trained agents and Monte Carlo estimates against known values.
"""
from __future__ import annotations

from collections import deque
from functools import lru_cache

import numpy as np

from .envs.kernels import CELL_GOAL, CELL_HOLE, CELL_START

# infinite deck: ace..9 once each, ten-valued cards four times
CARD_P = {c: (4 / 13 if c == 10 else 1 / 13) for c in range(1, 11)}


@lru_cache(maxsize=None)
def _dealer_final(hard: int, has_ace: bool) -> tuple[tuple[int, float], ...]:
    """Distribution of the dealer's final total (22 = bust) from a hard count."""
    total = hard + 10 if has_ace and hard + 10 <= 21 else hard
    if total > 21:
        return ((22, 1.0),)
    if total >= 17:
        return ((total, 1.0),)
    out: dict[int, float] = {}
    for card, p in CARD_P.items():
        for final, q in _dealer_final(hard + card, has_ace or card == 1):
            out[final] = out.get(final, 0.0) + p * q
    return tuple(sorted(out.items()))


def dealer_distribution(upcard: int) -> dict[int, float]:
    """Final dealer totals given the visible card; the hole card is still unknown."""
    out: dict[int, float] = {}
    for card, p in CARD_P.items():
        for final, q in _dealer_final(upcard + card, upcard == 1 or card == 1):
            out[final] = out.get(final, 0.0) + p * q
    return out


def dealer_bust_probability() -> float:
    return sum(p * dealer_distribution(up).get(22, 0.0) for up, p in CARD_P.items())


def _stick_value(player: int, upcard: int) -> float:
    v = 0.0
    for final, q in dealer_distribution(upcard).items():
        if final > 21 or player > final:
            v += q
        elif player < final:
            v -= q
    return v


def _player_value(hard: int, has_ace: bool, upcard: int, policy: str, memo: dict) -> float:
    key = (hard, has_ace, upcard)
    if key in memo:
        return memo[key]
    total = hard + 10 if has_ace and hard + 10 <= 21 else hard
    stick = _stick_value(total, upcard)
    hit = 0.0
    for card, p in CARD_P.items():
        nh = hard + card
        if nh > 21:
            hit -= p
        else:
            hit += p * _player_value(nh, has_ace or card == 1, upcard, policy, memo)
    if policy == "optimal":
        v = max(stick, hit)
    else:
        v = 0.5 * (stick + hit)
    memo[key] = v
    return v


def blackjack_value(policy: str = "optimal") -> float:
    """Expected return from a fresh deal under the optimal or uniform-random policy."""
    if policy not in ("optimal", "random"):
        raise ValueError(f"unknown policy {policy!r}")
    memo: dict = {}
    v = 0.0
    for up, pu in CARD_P.items():
        for c1, p1 in CARD_P.items():
            for c2, p2 in CARD_P.items():
                v += pu * p1 * p2 * _player_value(c1 + c2, c1 == 1 or c2 == 1, up, policy, memo)
    return v


def frozenlake_value(grid: np.ndarray, slippery: bool = True, horizon: int = 100) -> float:
    """Best achievable success probability from the start cell within ``horizon`` steps."""
    nrows, ncols = grid.shape
    v = np.zeros((nrows, ncols))
    deltas = ((0, -1), (1, 0), (0, 1), (-1, 0))  # left, down, right, up

    def move(r, c, d):
        dr, dc = deltas[d]
        return min(max(r + dr, 0), nrows - 1), min(max(c + dc, 0), ncols - 1)

    for _ in range(horizon):
        nv = np.zeros_like(v)
        for r in range(nrows):
            for c in range(ncols):
                if grid[r, c] in (CELL_HOLE, CELL_GOAL):
                    continue
                best = 0.0
                for a in range(4):
                    dirs = [(a + 3) % 4, a, (a + 1) % 4] if slippery else [a]
                    q = 0.0
                    for d in dirs:
                        nr, nc = move(r, c, d)
                        gain = 1.0 if grid[nr, nc] == CELL_GOAL else v[nr, nc]
                        q += gain / len(dirs)
                    best = max(best, q)
                nv[r, c] = best
        v = nv
    sr, sc = map(int, np.argwhere(grid == CELL_START)[0])
    return float(v[sr, sc])


def frozenlake_shortest_path(grid: np.ndarray) -> list[int]:
    """BFS action sequence (ids 0..3) from start to goal avoiding holes."""
    nrows, ncols = grid.shape
    deltas = ((0, -1), (1, 0), (0, 1), (-1, 0))
    start = tuple(map(int, np.argwhere(grid == CELL_START)[0]))
    prev: dict = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if grid[cell] == CELL_GOAL:
            path = []
            while prev[cell] is not None:
                cell, a = prev[cell]
                path.append(a)
            return path[::-1]
        for a, (dr, dc) in enumerate(deltas):
            nr = min(max(cell[0] + dr, 0), nrows - 1)
            nc = min(max(cell[1] + dc, 0), ncols - 1)
            nxt = (nr, nc)
            if nxt not in prev and grid[nxt] != CELL_HOLE:
                prev[nxt] = (cell, a)
                queue.append(nxt)
    raise ValueError("goal unreachable")
