"""Shared MDP vocabulary: rewards, step records, episode logs, returns."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .rng import SeededRng, rng_substream  # noqa: F401  (re-exported)


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ProtocolError(RuntimeError):
    """An object was used out of order or with a mismatched partner."""


class InvalidActionError(ValueError):
    pass


def discounted_return(rewards: Iterable[float], gamma: float) -> float:
    """Sum of ``gamma**t * rewards[t]``."""
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {gamma}")
    total = 0.0
    for r in reversed(list(rewards)):
        total = float(r) + gamma * total
    return total


@dataclass(frozen=True)
class RewardSet:
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise DomainError("reward set must be non-empty")
        if len(set(vals)) != len(vals):
            raise DomainError("reward set values must be distinct")
        object.__setattr__(self, "values", vals)

    def __contains__(self, r) -> bool:
        return float(r) in self.values


def format_reward(r: float) -> str:
    r = float(r)
    if r.is_integer():
        return str(int(r))
    return repr(r)


@dataclass(frozen=True)
class StepRecord:
    episode: int
    step: int
    action: int
    action_name: str
    new_state_text: str
    reward: Optional[float]
    terminal: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "episode": self.episode,
            "step": self.step,
            "action": self.action,
            "action_name": self.action_name,
            "state": self.new_state_text,
            "reward": self.reward,
            "terminal": self.terminal,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StepRecord":
        reward = d.get("reward")
        return cls(
            episode=int(d["episode"]),
            step=int(d["step"]),
            action=int(d["action"]),
            action_name=str(d["action_name"]),
            new_state_text=str(d["state"]),
            reward=None if reward is None else float(reward),
            terminal=bool(d["terminal"]),
        )


@dataclass
class EpisodeLog:
    """One episode of the interaction history.

    ``records`` carry the rewards as shown to the agent. ``true_rewards`` and
    ``observations`` are side storage that never reaches a prompt.
    """

    episode: int
    initial_state_text: str
    records: list[StepRecord] = field(default_factory=list)
    true_rewards: list[float] = field(default_factory=list)
    observations: list[Any] = field(default_factory=list)

    def append(self, record: StepRecord, true_reward: float, observation: Any = None) -> None:
        if record.step != len(self.records):
            raise ProtocolError(f"expected step {len(self.records)}, got {record.step}")
        if self.records and self.records[-1].terminal:
            raise ProtocolError("episode already ended")
        self.records.append(record)
        self.true_rewards.append(float(true_reward))
        if observation is not None:
            self.observations.append(observation)

    @property
    def length(self) -> int:
        return len(self.records)

    @property
    def total_reward(self) -> float:
        return float(sum(r.reward for r in self.records if r.reward is not None))

    @property
    def true_total(self) -> float:
        return float(sum(self.true_rewards))

    def to_dict(self) -> dict[str, Any]:
        return {
            "episode": self.episode,
            "initial_state": self.initial_state_text,
            "records": [r.to_dict() for r in self.records],
            "true_rewards": list(self.true_rewards),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EpisodeLog":
        return cls(
            episode=int(d["episode"]),
            initial_state_text=str(d["initial_state"]),
            records=[StepRecord.from_dict(r) for r in d["records"]],
            true_rewards=[float(x) for x in d.get("true_rewards", [])],
        )

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)


def records_from_jsonl(text: str) -> list[StepRecord]:
    return [StepRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def write_jsonl(path, logs: Iterable[EpisodeLog]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for log in logs:
            fh.write(log.to_jsonl())


__all__ = [
    "DomainError",
    "ProtocolError",
    "InvalidActionError",
    "discounted_return",
    "RewardSet",
    "StepRecord",
    "EpisodeLog",
    "SeededRng",
    "rng_substream",
    "format_reward",
    "records_from_jsonl",
    "write_jsonl",
]
