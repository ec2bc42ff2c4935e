"""Compiled step/reset kernels for the three toy-text environments.

Every environment keeps its mutable state in one int64 vector of length
``STATE_SIZE`` so that training loops can drive any of them through
``env_reset`` / ``env_step`` without Python objects.

Layouts
-------
Blackjack   [phase, n_player, n_dealer, player cards (13 slots), dealer cards (16 slots)]
FrozenLake  [row, col, steps_taken]
Taxi        [taxi_row, taxi_col, passenger_location, destination, steps_taken]

Static data travels in ``grid`` (2-D int64) and ``params`` (1-D int64):
FrozenLake ``grid`` holds cell codes, Taxi ``grid`` holds per-cell move
bitmasks; ``params`` is [max_steps, slippery, 8 landmark coordinates].
"""
import numpy as np

from .._jit import kernel
from ..rng import rng_below

BLACKJACK = 0
FROZENLAKE = 1
TAXI = 2

STATE_SIZE = 32

BJ_PHASE = 0
BJ_NP = 1
BJ_ND = 2
BJ_P0 = 3
BJ_D0 = 16
BJ_PMAX = 13
BJ_DMAX = 16

CELL_START = 0
CELL_FROZEN = 1
CELL_HOLE = 2
CELL_GOAL = 3

# FrozenLake action ids
FL_LEFT = 0
FL_DOWN = 1
FL_RIGHT = 2
FL_UP = 3

# Taxi move bits in grid cells
MOVE_SOUTH = 1
MOVE_NORTH = 2
MOVE_EAST = 4
MOVE_WEST = 8

IN_TAXI = 4


# ---------------------------------------------------------------- blackjack

@kernel
def draw_card(rng):
    # ranks A,2..10,J,Q,K with face cards worth 10
    k = rng_below(rng, 13) + 1
    if k > 10:
        k = 10
    return k


@kernel
def hand_value_kernel(cards, n):
    total = 0
    has_ace = False
    for i in range(n):
        total += cards[i]
        if cards[i] == 1:
            has_ace = True
    if has_ace and total + 10 <= 21:
        return total + 10, True
    return total, False


@kernel
def bj_reset(state, rng):
    for i in range(STATE_SIZE):
        state[i] = 0
    state[BJ_D0] = draw_card(rng)
    state[BJ_D0 + 1] = draw_card(rng)
    state[BJ_P0] = draw_card(rng)
    state[BJ_P0 + 1] = draw_card(rng)
    state[BJ_NP] = 2
    state[BJ_ND] = 2


@kernel
def bj_player_value(state):
    return hand_value_kernel(state[BJ_P0:BJ_P0 + BJ_PMAX], state[BJ_NP])


@kernel
def bj_dealer_value(state):
    return hand_value_kernel(state[BJ_D0:BJ_D0 + BJ_DMAX], state[BJ_ND])


@kernel
def bj_step(state, action, rng):
    """Returns (reward, terminated, truncated, error_code)."""
    if state[BJ_PHASE] != 0:
        return 0.0, False, False, 2
    if action == 1:
        n = state[BJ_NP]
        state[BJ_P0 + n] = draw_card(rng)
        state[BJ_NP] = n + 1
        total, _ = bj_player_value(state)
        if total > 21:
            state[BJ_PHASE] = 1
            return -1.0, True, False, 0
        return 0.0, False, False, 0
    if action == 0:
        state[BJ_PHASE] = 1
        dealer, _ = bj_dealer_value(state)
        while dealer < 17:
            n = state[BJ_ND]
            state[BJ_D0 + n] = draw_card(rng)
            state[BJ_ND] = n + 1
            dealer, _ = bj_dealer_value(state)
        player, _ = bj_player_value(state)
        if dealer > 21 or player > dealer:
            return 1.0, True, False, 0
        if player == dealer:
            return 0.0, True, False, 0
        return -1.0, True, False, 0
    return 0.0, False, False, 1


# --------------------------------------------------------------- frozenlake

@kernel
def fl_move(row, col, direction, nrows, ncols):
    if direction == FL_LEFT:
        col = max(col - 1, 0)
    elif direction == FL_DOWN:
        row = min(row + 1, nrows - 1)
    elif direction == FL_RIGHT:
        col = min(col + 1, ncols - 1)
    else:
        row = max(row - 1, 0)
    return row, col


@kernel
def fl_reset(state, grid):
    for i in range(STATE_SIZE):
        state[i] = 0
    for r in range(grid.shape[0]):
        for c in range(grid.shape[1]):
            if grid[r, c] == CELL_START:
                state[0] = r
                state[1] = c
                return


@kernel
def fl_step(state, action, grid, params, rng):
    if action < 0 or action > 3:
        return 0.0, False, False, 1
    row = state[0]
    col = state[1]
    cell = grid[row, col]
    if cell == CELL_HOLE or cell == CELL_GOAL:
        return 0.0, False, False, 2
    direction = action
    if params[1] != 0:
        direction = (action + 3 + rng_below(rng, 3)) % 4
    row, col = fl_move(row, col, direction, grid.shape[0], grid.shape[1])
    state[0] = row
    state[1] = col
    state[2] += 1
    cell = grid[row, col]
    if cell == CELL_GOAL:
        return 1.0, True, False, 0
    if cell == CELL_HOLE:
        return 0.0, True, False, 0
    if state[2] >= params[0]:
        return 0.0, False, True, 0
    return 0.0, False, False, 0


# --------------------------------------------------------------------- taxi

@kernel
def taxi_encode_kernel(row, col, passenger, destination):
    return ((row * 5 + col) * 5 + passenger) * 4 + destination


@kernel
def taxi_reset(state, rng):
    for i in range(STATE_SIZE):
        state[i] = 0
    state[0] = rng_below(rng, 5)
    state[1] = rng_below(rng, 5)
    passenger = rng_below(rng, 4)
    dest = rng_below(rng, 3)
    if dest >= passenger:
        dest += 1
    state[2] = passenger
    state[3] = dest


@kernel
def taxi_step(state, action, grid, params, rng):
    if action < 0 or action > 5:
        return 0.0, False, False, 1
    row = state[0]
    col = state[1]
    passenger = state[2]
    dest = state[3]
    moves = grid[row, col]
    reward = -1.0
    terminated = False
    if action == 0:
        if moves & MOVE_SOUTH:
            row += 1
    elif action == 1:
        if moves & MOVE_NORTH:
            row -= 1
    elif action == 2:
        if moves & MOVE_EAST:
            col += 1
    elif action == 3:
        if moves & MOVE_WEST:
            col -= 1
    elif action == 4:
        if passenger < IN_TAXI and row == params[2 + 2 * passenger] and col == params[3 + 2 * passenger]:
            passenger = IN_TAXI
        else:
            reward = -10.0
    else:
        at = -1
        for k in range(4):
            if row == params[2 + 2 * k] and col == params[3 + 2 * k]:
                at = k
        if passenger == IN_TAXI and at == dest:
            passenger = dest
            reward = 20.0
            terminated = True
        elif passenger == IN_TAXI and at >= 0:
            passenger = at
        else:
            reward = -10.0
    state[0] = row
    state[1] = col
    state[2] = passenger
    state[4] += 1
    truncated = (not terminated) and state[4] >= params[0]
    return reward, terminated, truncated, 0


# ------------------------------------------------------------------ dispatch

@kernel
def env_reset(kind, state, grid, params, rng):
    if kind == BLACKJACK:
        bj_reset(state, rng)
    elif kind == FROZENLAKE:
        fl_reset(state, grid)
    else:
        taxi_reset(state, rng)


@kernel
def env_step(kind, state, action, grid, params, rng):
    if kind == BLACKJACK:
        return bj_step(state, action, rng)
    if kind == FROZENLAKE:
        return fl_step(state, action, grid, params, rng)
    return taxi_step(state, action, grid, params, rng)


@kernel
def env_features(kind, state, grid, feat):
    """Write the active one-hot positions of the current state into ``feat``.

    Blackjack uses three blocks: player sum (32), dealer card (11), ace (2).
    """
    if kind == BLACKJACK:
        total, ace = bj_player_value(state)
        if total > 31:
            total = 31
        feat[0] = total
        feat[1] = 32 + state[BJ_D0]
        feat[2] = 43 + (1 if ace else 0)
    elif kind == FROZENLAKE:
        feat[0] = state[0] * grid.shape[1] + state[1]
    else:
        feat[0] = taxi_encode_kernel(state[0], state[1], state[2], state[3])


@kernel
def fl_transition_counts(grid, params, row, col, action, n, rng):
    """Histogram of next-state indices over ``n`` sampled steps from (row, col)."""
    nrows = grid.shape[0]
    ncols = grid.shape[1]
    counts = np.zeros(nrows * ncols, dtype=np.int64)
    state = np.zeros(STATE_SIZE, dtype=np.int64)
    for _ in range(n):
        state[0] = row
        state[1] = col
        state[2] = 0
        fl_step(state, action, grid, params, rng)
        counts[state[0] * ncols + state[1]] += 1
    return counts


@kernel
def bj_dealer_bust_count(n, rng):
    """Number of dealer busts over ``n`` fresh two-card dealer hands played to >= 17."""
    busts = 0
    cards = np.zeros(BJ_DMAX + 4, dtype=np.int64)
    max_draws = 0
    for _ in range(n):
        cards[0] = draw_card(rng)
        cards[1] = draw_card(rng)
        m = 2
        total, _ = hand_value_kernel(cards, m)
        while total < 17:
            cards[m] = draw_card(rng)
            m += 1
            total, _ = hand_value_kernel(cards, m)
        if m - 2 > max_draws:
            max_draws = m - 2
        if total > 21:
            busts += 1
    return busts, max_draws
