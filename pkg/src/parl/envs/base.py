"""Environment objects, observations and the pure index helpers."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..core import DomainError, InvalidActionError, ProtocolError, RewardSet
from ..rng import SeededRng
from . import kernels as K
from .maps import (
    FROZENLAKE_4X4,
    TAXI_LANDMARKS,
    TAXI_MAP,
    frozenlake_rows,
    parse_frozenlake,
    parse_taxi,
)

ENV_IDS = ("blackjack", "frozenlake", "taxi")

BLACKJACK_ACTIONS = ("Stick", "Hit")
FROZENLAKE_ACTIONS = ("Left", "Down", "Right", "Up")
# canonical ids; names as written in prompts
TAXI_ACTIONS = ("Down", "Up", "Right", "Left", "Pickup", "Drop-off")


@dataclass(frozen=True)
class BlackjackObs:
    player_sum: int
    dealer_card: int
    usable_ace: bool
    player_cards: tuple[int, ...]
    dealer_visible_card: int


@dataclass(frozen=True)
class DiscreteIndex:
    value: int
    space_size: int

    def __post_init__(self):
        if not 0 <= self.value < self.space_size:
            raise DomainError(f"index {self.value} outside [0, {self.space_size})")


Observation = Union[BlackjackObs, DiscreteIndex]


@dataclass(frozen=True)
class StepOutcome:
    observation: Observation
    reward: float
    terminated: bool
    truncated: bool


@dataclass(frozen=True)
class EnvSpec:
    id: str
    action_count: int
    action_names: tuple[str, ...]
    reward_set: RewardSet
    max_steps: int
    observation_kind: str
    extra: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> str:
        doc = {
            "id": self.id,
            "action_count": self.action_count,
            "action_names": list(self.action_names),
            "reward_set": list(self.reward_set.values),
            "max_steps": self.max_steps,
            "observation_kind": self.observation_kind,
        }
        doc.update(self.extra)
        return json.dumps(doc, sort_keys=True)


def hand_value(cards) -> tuple[int, bool]:
    cards = list(cards)
    if not cards:
        raise DomainError("empty hand")
    if any(not 1 <= int(c) <= 10 for c in cards):
        raise DomainError("cards must lie in 1..10")
    total, ace = K.hand_value_kernel(np.asarray(cards, dtype=np.int64), len(cards))
    return int(total), bool(ace)


def fl_index(row: int, col: int, ncols: int) -> int:
    if row < 0 or not 0 <= col < ncols:
        raise DomainError("position outside the grid")
    return row * ncols + col


def taxi_encode(taxi_row: int, taxi_col: int, passenger_location: int, destination: int) -> int:
    if not (0 <= taxi_row < 5 and 0 <= taxi_col < 5 and 0 <= passenger_location <= 4
            and 0 <= destination <= 3):
        raise DomainError("taxi fields out of range")
    return int(K.taxi_encode_kernel(taxi_row, taxi_col, passenger_location, destination))


def taxi_decode(index: int) -> tuple[int, int, int, int]:
    if not 0 <= index < 500:
        raise DomainError(f"taxi index {index} outside [0, 500)")
    destination = index % 4
    index //= 4
    passenger = index % 5
    index //= 5
    return index // 5, index % 5, passenger, destination


class Env:
    """Seeded, single-owner environment driven by the compiled kernels."""

    kind: int
    spec: EnvSpec

    def __init__(self, grid: np.ndarray, params: np.ndarray):
        self.grid = grid
        self.params = params
        self.state = np.zeros(K.STATE_SIZE, dtype=np.int64)
        self.rng: Optional[SeededRng] = None
        self._done = True

    def reset(self, rng: SeededRng) -> Observation:
        self.rng = rng
        K.env_reset(self.kind, self.state, self.grid, self.params, rng.state)
        self._done = False
        return self.observe()

    def step(self, action: int) -> StepOutcome:
        if self.rng is None or self._done:
            raise ProtocolError("step() called before reset() or after episode end")
        action = int(action)
        if not 0 <= action < self.spec.action_count:
            raise InvalidActionError(f"action {action} not in 0..{self.spec.action_count - 1}")
        reward, terminated, truncated, err = K.env_step(
            self.kind, self.state, action, self.grid, self.params, self.rng.state)
        if err:
            raise ProtocolError("environment is not accepting actions")
        self._done = bool(terminated or truncated)
        return StepOutcome(self.observe(), float(reward), bool(terminated), bool(truncated))

    @property
    def done(self) -> bool:
        return self._done

    def observe(self) -> Observation:
        raise NotImplementedError

    def features(self) -> np.ndarray:
        feat = np.zeros(self.feature_count, dtype=np.int64)
        K.env_features(self.kind, self.state, self.grid, feat)
        return feat

    feature_count = 1
    feature_dim = 0


class Blackjack(Env):
    kind = K.BLACKJACK
    feature_count = 3
    feature_dim = 32 + 11 + 2

    def __init__(self, max_steps: int = 100):
        params = np.array([max_steps, 0] + [0] * 8, dtype=np.int64)
        super().__init__(np.zeros((1, 1), dtype=np.int64), params)
        self.spec = EnvSpec("blackjack", 2, BLACKJACK_ACTIONS, RewardSet((1.0, 0.0, -1.0)),
                            max_steps, "BlackjackTuple")

    @property
    def player_cards(self) -> list[int]:
        n = int(self.state[K.BJ_NP])
        return [int(c) for c in self.state[K.BJ_P0:K.BJ_P0 + n]]

    @property
    def dealer_cards(self) -> list[int]:
        n = int(self.state[K.BJ_ND])
        return [int(c) for c in self.state[K.BJ_D0:K.BJ_D0 + n]]

    def set_hands(self, player, dealer) -> None:
        """Place explicit hands (tests and scripted scenarios)."""
        self.state[:] = 0
        self.state[K.BJ_NP] = len(player)
        self.state[K.BJ_ND] = len(dealer)
        self.state[K.BJ_P0:K.BJ_P0 + len(player)] = player
        self.state[K.BJ_D0:K.BJ_D0 + len(dealer)] = dealer
        self._done = False

    def observe(self) -> BlackjackObs:
        cards = self.player_cards
        total, ace = hand_value(cards)
        visible = int(self.state[K.BJ_D0])
        return BlackjackObs(total, visible, ace, tuple(cards), visible)


class FrozenLake(Env):
    kind = K.FROZENLAKE

    def __init__(self, rows=None, slippery: bool = True, max_steps: int = 100):
        grid = parse_frozenlake(rows or FROZENLAKE_4X4)
        params = np.array([max_steps, 1 if slippery else 0] + [0] * 8, dtype=np.int64)
        super().__init__(grid, params)
        self.slippery = slippery
        self.nrows, self.ncols = grid.shape
        self.feature_dim = self.nrows * self.ncols
        self.spec = EnvSpec("frozenlake", 4, FROZENLAKE_ACTIONS, RewardSet((0.0, 1.0)),
                            max_steps, "DiscreteIndex",
                            {"map": frozenlake_rows(grid), "slippery": slippery})

    def set_position(self, row: int, col: int, steps: int = 0) -> None:
        self.state[:3] = (row, col, steps)
        self._done = False

    def observe(self) -> DiscreteIndex:
        return DiscreteIndex(fl_index(int(self.state[0]), int(self.state[1]), self.ncols),
                             self.nrows * self.ncols)


class Taxi(Env):
    kind = K.TAXI
    feature_dim = 500

    def __init__(self, lines=None, max_steps: int = 100):
        grid, marks = parse_taxi(lines or TAXI_MAP)
        flat = [v for rc in marks for v in rc]
        params = np.array([max_steps, 0] + flat, dtype=np.int64)
        super().__init__(grid, params)
        self.landmarks = marks
        self.spec = EnvSpec("taxi", 6, TAXI_ACTIONS, RewardSet((-1.0, -10.0, 20.0)),
                            max_steps, "DiscreteIndex", {"landmarks": [list(m) for m in marks]})

    def set_state(self, taxi_row, taxi_col, passenger_location, destination, steps=0) -> None:
        self.state[:5] = (taxi_row, taxi_col, passenger_location, destination, steps)
        self._done = False

    def observe(self) -> DiscreteIndex:
        s = self.state
        return DiscreteIndex(taxi_encode(int(s[0]), int(s[1]), int(s[2]), int(s[3])), 500)


def make_env(env_id: str, *, slippery: bool = True, max_steps: Optional[int] = None,
             map_file: Optional[str] = None) -> Env:
    from .maps import read_map_file

    env_id = env_id.lower().replace("_", "").replace("-", "")
    lines = read_map_file(map_file) if map_file else None
    if env_id == "blackjack":
        return Blackjack(max_steps or 100)
    if env_id == "frozenlake":
        return FrozenLake(lines, slippery=slippery, max_steps=max_steps or 100)
    if env_id == "taxi":
        return Taxi(lines or TAXI_MAP, max_steps=max_steps or 100)
    raise DomainError(f"unknown environment id {env_id!r}")


__all__ = [
    "ENV_IDS", "BlackjackObs", "DiscreteIndex", "Observation", "StepOutcome", "EnvSpec",
    "hand_value", "fl_index", "taxi_encode", "taxi_decode", "Env", "Blackjack",
    "FrozenLake", "Taxi", "make_env", "TAXI_LANDMARKS",
]
