"""Prompt-based agent: the growing prompt, its three history modes, and the
training and inference loops that drive an LLM through it.

The policy is the prompt itself. It consists of the task description
followed by the logged (action, new state, reward) steps; training grows it
episode after episode, inference freezes it and only adds a scratch log for
the episode being played.
"""
from __future__ import annotations

import enum
import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import Optional

from .core import EpisodeLog, RewardSet, StepRecord, format_reward
from .decoding import DecodeMode, render_state
from .envs import Env, EnvSpec
from .llm import STATE_MARKER, ChatMessage, LLMClient, Role
from .metrics import EvalReport, MetricSeries
from .rng import SeededRng

log = logging.getLogger(__name__)

ACTION_REQUEST = "Choose the next action. Reply with exactly one action from the action list."
CURRENT_HEADER = "Current episode:"
INITIAL_PREFIX = "Initial state: "


class HistoryMode(str, enum.Enum):
    FULL = "full"
    RANDOM_REWARDS = "random-rewards"
    NONE = "none"


class TruncationPolicy(str, enum.Enum):
    FAIL_FAST = "fail-fast"
    DROP_OLDEST = "drop-oldest"


class ActionParseError(ValueError):
    pass


class PromptBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskDescription:
    goal_text: str
    actions_text: str
    state_schema_text: str
    rewards_text: str

    def __post_init__(self):
        for name in ("goal_text", "actions_text", "state_schema_text", "rewards_text"):
            if not getattr(self, name).strip():
                raise ValueError(f"{name} must be non-empty")

    def render(self) -> str:
        return (f"Goal: {self.goal_text}\n"
                f"Actions: {self.actions_text}\n"
                f"Observation: {self.state_schema_text}\n"
                f"Rewards: {self.rewards_text}")

    def to_dict(self) -> dict:
        return {"goal": self.goal_text, "actions": self.actions_text,
                "state_schema": self.state_schema_text, "rewards": self.rewards_text}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskDescription":
        return cls(d["goal"], d["actions"], d["state_schema"], d["rewards"])


def _actions_text(spec: EnvSpec) -> str:
    return ", ".join(f"{i}: {name}" for i, name in enumerate(spec.action_names))


def task_description(env: EnvSpec, decode_mode: DecodeMode = DecodeMode.SCRIPT) -> TaskDescription:
    """Fixed goal/actions/observation/rewards texts for one environment."""
    script = DecodeMode(decode_mode) is DecodeMode.SCRIPT
    if env.id == "blackjack":
        return TaskDescription(
            "Blackjack is a card game where the goal is to get as close to 21 as possible "
            "without exceeding it. You play one hand against the dealer and win by finishing "
            "closer to 21 than the dealer.",
            "0: Stick (Stop), 1: Hit (Draw)",
            "A sentence giving the player's hand total, the dealer's visible card and whether "
            "the player holds a usable ace." if script else
            "The player's cards followed by the dealer's visible card, written as "
            "[player cards], [dealer card]. An ace is 1 and face cards count 10.",
            "+1: Win, -1: Lose, 0: Draw.",
        )
    if env.id == "frozenlake":
        rows = env.extra.get("map") or ["????"] * 4
        nrows, ncols = len(rows), len(rows[0])
        slip = (" The ice is slippery: a move can carry the player sideways instead of in the "
                "chosen direction.") if env.extra.get("slippery", True) else ""
        return TaskDescription(
            f"Frozen Lake: cross a frozen lake on a {nrows}x{ncols} grid from the start cell "
            f"(top left) to the goal cell (bottom right) without falling into a hole.{slip}",
            _actions_text(env),
            f"A sentence giving the player's row and column in the {nrows}x{ncols} grid." if script
            else f"A single integer, row * {ncols} + column, counting rows and columns from 0 at "
                 "the top left corner.",
            f"+1: reaching the goal, 0: otherwise. The episode ends in a hole, at the goal, or "
            f"after {env.max_steps} moves.",
        )
    if env.id == "taxi":
        return TaskDescription(
            "Taxi: drive the taxi on a 5x5 grid to the passenger, pick the passenger up, drive "
            "to the destination and drop the passenger off. The four locations are Red (row 0, "
            "column 0), Green (row 0, column 4), Yellow (row 4, column 0) and Blue (row 4, "
            "column 3). Some cells are separated by walls.",
            _actions_text(env),
            "Sentences giving the taxi's row and column, where the passenger is, and the "
            "destination." if script else
            "A single integer, ((taxi_row * 5 + taxi_col) * 5 + passenger_location) * 4 + "
            "destination. Passenger locations: 0 Red, 1 Green, 2 Yellow, 3 Blue, 4 in the taxi. "
            "Destinations: 0 Red, 1 Green, 2 Yellow, 3 Blue.",
            "+20: dropping the passenger off at the destination, -1: each step, "
            f"-10: illegal Pickup or Drop-off. The episode ends after a successful drop-off or "
            f"{env.max_steps} steps.",
        )
    raise ValueError(f"no task description for {env.id}")


def _state_body(text: str) -> str:
    return text[len("State: "):] if text.startswith("State: ") else text


def format_step(record: StepRecord) -> str:
    line = f"Action (taken): {record.action_name}; (new) State: {_state_body(record.new_state_text)}"
    if record.reward is not None:
        line += f"; Reward: {format_reward(record.reward)}"
    return line


@dataclass
class HistoryBuffer:
    """Completed episode logs, the episode in progress, and the history mode."""

    mode: HistoryMode = HistoryMode.FULL
    completed_episodes: list[EpisodeLog] = field(default_factory=list)
    current_episode: Optional[EpisodeLog] = None

    def start_episode(self, episode: int, initial_state_text: str) -> EpisodeLog:
        if self.current_episode is not None:
            raise RuntimeError("previous episode still open")
        self.current_episode = EpisodeLog(episode, initial_state_text)
        return self.current_episode

    def end_episode(self) -> EpisodeLog:
        ep = self.current_episode
        if ep is None:
            raise RuntimeError("no episode in progress")
        self.completed_episodes.append(ep)
        self.current_episode = None
        return ep

    def to_dict(self, task: Optional[TaskDescription] = None) -> dict:
        doc = {"mode": self.mode.value,
               "episodes": [e.to_dict() for e in self.completed_episodes]}
        if task is not None:
            doc["task"] = task.to_dict()
        return doc

    def to_json(self, task: Optional[TaskDescription] = None) -> str:
        return json.dumps(self.to_dict(task), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "HistoryBuffer":
        return cls(HistoryMode(d["mode"]), [EpisodeLog.from_dict(e) for e in d["episodes"]])


def render_episode(ep: EpisodeLog, header: str) -> list[str]:
    lines = [header, INITIAL_PREFIX + _state_body(ep.initial_state_text)]
    lines.extend(format_step(r) for r in ep.records)
    return lines


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass
class PromptSettings:
    max_prompt_tokens: Optional[int] = 120_000
    truncation_policy: TruncationPolicy = TruncationPolicy.DROP_OLDEST
    single_user_message: bool = False


def build_prompt(task: TaskDescription, history: HistoryBuffer, current_state_text: str,
                 settings: Optional[PromptSettings] = None,
                 past: Optional[list[EpisodeLog]] = None,
                 current: Optional[EpisodeLog] = None) -> str:
    """Full prompt text: task, history per mode, current state, action request."""
    msgs = build_messages(task, history, current_state_text, settings, past, current)
    return "\n\n".join(m.content for m in msgs)


def build_messages(task: TaskDescription, history: HistoryBuffer, current_state_text: str,
                   settings: Optional[PromptSettings] = None,
                   past: Optional[list[EpisodeLog]] = None,
                   current: Optional[EpisodeLog] = None) -> list[ChatMessage]:
    """System message with the task, one user message with history and state.

    ``past`` overrides the completed episodes to show (inference passes the
    frozen trained history); ``current`` overrides the open episode.
    """
    settings = settings or PromptSettings()
    if past is None:
        past = history.completed_episodes
    if history.mode is HistoryMode.NONE:
        past = []
    if current is None:
        current = history.current_episode
    tail = []
    if current is not None:
        tail = render_episode(current, CURRENT_HEADER)
    tail.append(f"{STATE_MARKER} {_state_body(current_state_text)}")
    tail.append(ACTION_REQUEST)

    system = task.render()
    blocks = [render_episode(ep, f"Episode {ep.episode}:") for ep in past]
    tail_text = "\n".join(tail)

    def assemble(blocks):
        body = "\n".join(line for b in blocks for line in b)
        user = f"{body}\n{tail_text}" if body else tail_text
        if settings.single_user_message:
            return [ChatMessage(Role.USER, f"{system}\n\n{user}")]
        return [ChatMessage(Role.SYSTEM, system), ChatMessage(Role.USER, user)]

    msgs = assemble(blocks)
    budget = settings.max_prompt_tokens
    if budget is None:
        return msgs
    size = sum(estimate_tokens(m.content) for m in msgs)
    if size <= budget:
        return msgs
    if settings.truncation_policy is TruncationPolicy.FAIL_FAST:
        raise PromptBudgetError(f"prompt needs ~{size} tokens, budget is {budget}")
    # drop whole episodes from the front until the estimate fits
    sizes = [estimate_tokens("\n".join(b)) + 1 for b in blocks]
    drop = 0
    while drop < len(blocks) and size > budget:
        size -= sizes[drop]
        drop += 1
    msgs = assemble(blocks[drop:])
    size = sum(estimate_tokens(m.content) for m in msgs)
    if size > budget:
        raise PromptBudgetError(f"prompt needs ~{size} tokens even without history")
    log.warning("prompt over budget; dropped %d oldest episode(s)", drop)
    return msgs


def randomize_reward(true_reward: float, rs: RewardSet, rng: SeededRng) -> float:
    """Uniform draw from the reward set; ``true_reward`` is deliberately unused."""
    return rs.values[rng.below(len(rs.values))]


_ALIASES = {
    "Drop-off": ("Dropoff", "Drop off"),
    "Pickup": ("Pick-up", "Pick up"),
}


def _action_words(spec: EnvSpec):
    for i, name in enumerate(spec.action_names):
        yield i, name
        for alias in _ALIASES.get(name, ()):
            yield i, alias


def parse_action(reply: str, env: EnvSpec) -> int:
    """Action id from an LLM reply.

    Exact name (case-insensitive) wins, then a bare index, then the action
    name occurring first as a word in the reply.
    """
    text = (reply or "").strip()
    norm = text.strip(" \t\r\n\"'`.,;:!*()[]").lower()
    for i, name in _action_words(env):
        if norm == name.lower():
            return i
    if norm.isdigit() and int(norm) < env.action_count:
        return int(norm)
    best = None
    for i, name in _action_words(env):
        m = re.search(r"(?<![A-Za-z0-9])" + re.escape(name) + r"(?![A-Za-z0-9])", text, re.IGNORECASE)
        if m is None:
            continue
        key = (m.start(), -len(name))
        if best is None or key < best[0]:
            best = (key, i)
    if best is not None:
        return best[1]
    raise ActionParseError(f"no action in reply {reply!r}")


@dataclass
class ParlConfig:
    episodes: int = 100
    decode_mode: DecodeMode = DecodeMode.SCRIPT
    history_mode: HistoryMode = HistoryMode.FULL
    max_parse_retries: int = 3
    truncation_policy: TruncationPolicy = TruncationPolicy.DROP_OLDEST
    seed: int = 0
    max_prompt_tokens: Optional[int] = 120_000
    omit_zero_rewards: bool = False
    include_usable_ace: bool = True
    single_user_message: bool = False
    inference_history: str = "trained+current"

    def __post_init__(self):
        self.decode_mode = DecodeMode(self.decode_mode)
        self.history_mode = HistoryMode(self.history_mode)
        self.truncation_policy = TruncationPolicy(self.truncation_policy)
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.inference_history not in ("trained+current", "current-only"):
            raise ValueError("inference_history must be 'trained+current' or 'current-only'")

    @property
    def prompt_settings(self) -> PromptSettings:
        return PromptSettings(self.max_prompt_tokens, self.truncation_policy,
                              self.single_user_message)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("decode_mode", "history_mode", "truncation_policy"):
            d[k] = d[k].value
        return d


def choose_action(client: LLMClient, messages: list[ChatMessage], spec: EnvSpec,
                  rng: SeededRng, retries: int) -> tuple[int, bool]:
    """Ask, parse, re-ask on failure; fall back to a random legal action."""
    msgs = list(messages)
    for attempt in range(retries + 1):
        reply = client.chat(msgs)
        try:
            return parse_action(reply, spec), False
        except ActionParseError:
            if attempt == retries:
                break
            msgs = msgs + [
                ChatMessage(Role.ASSISTANT, reply.strip() or "(empty reply)"),
                ChatMessage(Role.USER, "That is not a valid action. Reply with exactly one of: "
                            + ", ".join(spec.action_names) + "."),
            ]
    action = rng.below(spec.action_count)
    log.info("unparseable replies; falling back to random action %d", action)
    return action, True


def _play_episode(env: Env, client: LLMClient, task: TaskDescription, buffer: HistoryBuffer,
                  episode: EpisodeLog, past, cfg: ParlConfig, agent_rng: SeededRng, reward_rng: Optional[SeededRng],
                  prompts: Optional[list] = None):
    spec = env.spec
    settings = cfg.prompt_settings
    text = episode.initial_state_text
    fallbacks = 0
    tokens = 0
    step = 0
    while True:
        msgs = build_messages(task, buffer, text, settings, past=past, current=episode)
        if prompts is not None:
            prompts.append(msgs)
        tokens = max(tokens, sum(estimate_tokens(m.content) for m in msgs))
        action, fell_back = choose_action(client, msgs, spec, agent_rng, cfg.max_parse_retries)
        fallbacks += fell_back
        out = env.step(action)
        shown = out.reward
        if reward_rng is not None:
            shown = randomize_reward(out.reward, spec.reward_set, reward_rng)
        if cfg.omit_zero_rewards and shown == 0:
            shown = None
        text = render_state(spec, out.observation, cfg.decode_mode, cfg.include_usable_ace)
        done = out.terminated or out.truncated
        episode.append(StepRecord(episode.episode, step, action, spec.action_names[action], text,
                                  shown, done), out.reward, out.observation)
        step += 1
        if done:
            return fallbacks, tokens


def run_training(env: Env, client: LLMClient, config: ParlConfig,
                 task: Optional[TaskDescription] = None,
                 prompts: Optional[list] = None) -> tuple[HistoryBuffer, MetricSeries]:
    """Play ``config.episodes`` episodes, appending every step to the history.

    Returns the history (the trained policy) and per-episode true-reward metrics.
    ``prompts``, if given, collects every message list sent to the model.
    """
    task = task or task_description(env.spec, config.decode_mode)
    root = SeededRng(config.seed)
    env_rng = root.substream("env")
    agent_rng = root.substream("agent")
    reward_rng = root.substream("reward") if config.history_mode is HistoryMode.RANDOM_REWARDS else None
    buffer = HistoryBuffer(config.history_mode)
    metrics = MetricSeries()
    for n in range(1, config.episodes + 1):
        obs = env.reset(env_rng)
        first = render_state(env.spec, obs, config.decode_mode, config.include_usable_ace)
        ep = buffer.start_episode(n, first)
        fallbacks, tokens = _play_episode(env, client, task, buffer, ep, None, config, agent_rng,
                                          reward_rng, prompts)
        buffer.end_episode()
        metrics.add(ep.true_total, ep.length, fallbacks, tokens)
    return buffer, metrics


def run_inference(env: Env, client: LLMClient, trained: HistoryBuffer, episodes: int,
                  config: Optional[ParlConfig] = None, task: Optional[TaskDescription] = None,
                  prompts: Optional[list] = None) -> tuple[EvalReport, MetricSeries]:
    """Evaluate the frozen prompt; each episode's own steps vanish when it ends."""
    config = config or ParlConfig()
    task = task or task_description(env.spec, config.decode_mode)
    root = SeededRng(config.seed)
    env_rng = root.substream("eval-env")
    agent_rng = root.substream("eval-agent")
    past = list(trained.completed_episodes) if config.inference_history == "trained+current" else []
    view = HistoryBuffer(trained.mode)
    # history is rendered as recorded; no fresh reward substitution at test time
    cfg = replace(config, history_mode=trained.mode)
    metrics = MetricSeries()
    for n in range(1, episodes + 1):
        obs = env.reset(env_rng)
        first = render_state(env.spec, obs, cfg.decode_mode, cfg.include_usable_ace)
        scratch = EpisodeLog(n, first)
        fallbacks, tokens = _play_episode(env, client, task, view, scratch, past, cfg,
                                          agent_rng, None, prompts)
        metrics.add(scratch.true_total, scratch.length, fallbacks, tokens)
    return EvalReport.from_episodes(metrics.rewards, metrics.lengths), metrics


def load_policy(path) -> tuple[HistoryBuffer, Optional[TaskDescription]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    task = TaskDescription.from_dict(doc["task"]) if "task" in doc else None
    return HistoryBuffer.from_dict(doc), task
