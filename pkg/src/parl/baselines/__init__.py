"""DQN, PPO and A2C baselines trained by the compiled loops in :mod:`.loops`."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from ..envs import Env
from ..metrics import EvalReport, MetricSeries
from ..nn import MlpParams
from ..rng import SeededRng
from . import loops
from .losses import a2c_advantage, dqn_target, ppo_objective  # noqa: F401

log = logging.getLogger(__name__)

AGENT_KINDS = ("dqn", "ppo", "a2c")


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainHyper:
    gamma: float = 0.99
    learning_rate: float = 1e-3
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    total_episodes: int = 100_000
    # DQN
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.2
    buffer_size: int = 50_000
    batch_size: int = 64
    learning_starts: int = 1_000
    train_freq: int = 4
    target_sync_interval: int = 1_000
    # PPO / A2C
    clip_epsilon: float = 0.2
    n_steps: int = 2048
    n_epochs: int = 4
    minibatch_size: int = 64
    n_step_return: int = 1
    normalize_advantage: bool = True
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 10.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        for name in ("learning_rate", "total_episodes", "buffer_size", "batch_size", "train_freq",
                     "target_sync_interval", "n_steps", "n_epochs", "minibatch_size",
                     "n_step_return"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHyper":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def default_hyper(agent: str, **overrides) -> TrainHyper:
    """Per-agent defaults; keyword overrides win."""
    base = {
        "dqn": dict(learning_rate=1e-3),
        "ppo": dict(learning_rate=3e-4, n_steps=2048, n_epochs=4, minibatch_size=64,
                    max_grad_norm=0.5, entropy_coef=0.01, n_step_return=1),
        "a2c": dict(learning_rate=1e-3, n_steps=5, n_step_return=5, normalize_advantage=True,
                    max_grad_norm=0.5, entropy_coef=0.01),
    }
    if agent not in base:
        raise ValueError(f"unknown baseline {agent!r}")
    params = dict(base[agent])
    params.update(overrides)
    return TrainHyper(**params)


@dataclass
class MlpAgent:
    """Trained baseline; ``network`` is the Q head (DQN) or the policy head."""

    kind: str
    env_id: str
    network: MlpParams
    value: Optional[MlpParams] = None
    hyper: dict = field(default_factory=dict)

    def act(self, env: Env, obs=None) -> int:
        from ..nn import cache_size, mlp_forward_idx
        feat = env.features().reshape(1, -1)
        cache = np.zeros(cache_size(self.network.sizes, 1))
        out = mlp_forward_idx(self.network.flat, self.network.sizes, self.network.act, feat, cache)
        return int(np.argmax(out[0]))

    def to_dict(self) -> dict:
        doc = {"agent": self.kind, "env": self.env_id, "network": self.network.to_dict(),
               "hyper": self.hyper}
        if self.value is not None:
            doc["value"] = self.value.to_dict()
        return doc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d: dict) -> "MlpAgent":
        value = MlpParams.from_dict(d["value"]) if d.get("value") else None
        return cls(d["agent"], d["env"], MlpParams.from_dict(d["network"]), value, d.get("hyper", {}))

    @classmethod
    def load(cls, path) -> "MlpAgent":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RandomAgent:
    kind = "random"
    n_actions: int
    rng: SeededRng

    def act(self, env: Env, obs=None) -> int:
        return self.rng.below(self.n_actions)


@dataclass
class ScriptedAgent:
    """Fixed observation -> action table; unseen observations take ``default``.

    Keys are discrete state indices, or the player's total for Blackjack.
    """

    kind = "scripted"
    table: dict
    default: int = 0

    @staticmethod
    def key(obs) -> int:
        return int(obs.value if hasattr(obs, "value") else obs.player_sum)

    def act(self, env: Env, obs=None) -> int:
        obs = obs if obs is not None else env.observe()
        return int(self.table.get(self.key(obs), self.default))

    def to_dict(self) -> dict:
        return {"agent": "scripted", "table": {str(k): int(v) for k, v in self.table.items()},
                "default": self.default}

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptedAgent":
        return cls({int(k): int(v) for k, v in d["table"].items()}, int(d.get("default", 0)))


def _sizes(env: Env, hidden, n_out: int) -> np.ndarray:
    return np.array([env.feature_dim, *hidden, n_out], dtype=np.int64)


def _series(rewards, lengths) -> MetricSeries:
    s = MetricSeries()
    for r, n in zip(rewards, lengths):
        s.add(float(r), int(n))
    return s


def _diverged(kind, env, code, losses, rewards, nets) -> TrainingDivergedError:
    ep = int(code)
    dump = {
        "agent": kind,
        "env": env.spec.id,
        "episode": ep,
        "recent_losses": [float(x) for x in losses[max(0, ep - 10):ep]],
        "recent_rewards": [float(x) for x in rewards[max(0, ep - 10):ep]],
        "param_norms": {name: float(np.linalg.norm(p)) for name, p in nets.items()},
    }
    return TrainingDivergedError(f"{kind} loss became non-finite at episode {ep}", dump)


def train_dqn(env: Env, hyper: TrainHyper, rng: SeededRng):
    """Returns (agent, MetricSeries, per-episode mean losses)."""
    sizes = _sizes(env, hyper.hidden, env.spec.action_count)
    online = MlpParams.init(sizes, hyper.activation, rng.substream("init-q"))
    target = online.copy()
    n = hyper.total_episodes
    rewards, lengths, losses = np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros(n)
    m, v = np.zeros_like(online.flat), np.zeros_like(online.flat)
    code = loops.dqn_train_loop(
        env.kind, env.grid, env.params, env.feature_count, sizes, online.act, online.flat,
        target.flat, m, v, np.zeros(1, dtype=np.int64), n, hyper.gamma, hyper.learning_rate,
        hyper.epsilon_start, hyper.epsilon_end, hyper.epsilon_decay_fraction * n,
        hyper.batch_size, hyper.buffer_size, max(hyper.learning_starts, hyper.batch_size),
        hyper.train_freq, hyper.target_sync_interval, hyper.max_grad_norm,
        rng.substream("env").state, rng.substream("explore").state,
        rng.substream("replay").state, rewards, lengths, losses)
    if code:
        raise _diverged("dqn", env, code, losses, rewards, {"online": online.flat})
    agent = MlpAgent("dqn", env.spec.id, online, None, hyper.to_dict())
    return agent, _series(rewards, lengths), losses


def _train_actor_critic(algo: int, kind: str, env: Env, hyper: TrainHyper, rng: SeededRng):
    pi_sizes = _sizes(env, hyper.hidden, env.spec.action_count)
    v_sizes = _sizes(env, hyper.hidden, 1)
    pi = MlpParams.init(pi_sizes, hyper.activation, rng.substream("init-pi"), out_scale=0.01)
    vnet = MlpParams.init(v_sizes, hyper.activation, rng.substream("init-v"))
    n = hyper.total_episodes
    rewards, lengths, losses = np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros(n)
    code = loops.actor_critic_loop(
        algo, env.kind, env.grid, env.params, env.feature_count, pi_sizes, v_sizes, pi.act,
        pi.flat, vnet.flat, np.zeros_like(pi.flat), np.zeros_like(pi.flat),
        np.zeros_like(vnet.flat), np.zeros_like(vnet.flat), np.zeros(1, dtype=np.int64), n,
        hyper.gamma, hyper.learning_rate, hyper.n_steps, hyper.n_epochs, hyper.minibatch_size,
        hyper.clip_epsilon, hyper.entropy_coef, hyper.value_coef, hyper.max_grad_norm,
        hyper.n_step_return, hyper.normalize_advantage, rng.substream("env").state,
        rng.substream("act").state, rng.substream("shuffle").state, rewards, lengths, losses)
    if code:
        raise _diverged(kind, env, code, losses, rewards, {"policy": pi.flat, "value": vnet.flat})
    agent = MlpAgent(kind, env.spec.id, pi, vnet, hyper.to_dict())
    return agent, _series(rewards, lengths), losses


def train_ppo(env: Env, hyper: TrainHyper, rng: SeededRng):
    return _train_actor_critic(loops.ALGO_PPO, "ppo", env, hyper, rng)


def train_a2c(env: Env, hyper: TrainHyper, rng: SeededRng):
    return _train_actor_critic(loops.ALGO_A2C, "a2c", env, hyper, rng)


TRAINERS = {"dqn": train_dqn, "ppo": train_ppo, "a2c": train_a2c}


def rollouts(agent, env: Env, episodes: int, rng: SeededRng) -> tuple[list[float], list[int]]:
    """Per-episode rewards and lengths of greedy (or scripted/random) play."""
    rewards = np.zeros(episodes)
    lengths = np.zeros(episodes, dtype=np.int64)
    env_rng = rng.substream("eval-env")
    act_rng = rng.substream("eval-act")
    if isinstance(agent, (MlpAgent, RandomAgent)):
        if isinstance(agent, MlpAgent):
            net, policy = agent.network, loops.POLICY_GREEDY
        else:
            net = MlpParams(np.array([env.feature_dim, env.spec.action_count]), "relu",
                            np.zeros(env.feature_dim * env.spec.action_count + env.spec.action_count))
            policy = loops.POLICY_RANDOM
            act_rng = agent.rng
        loops.rollout_loop(env.kind, env.grid, env.params, env.feature_count, net.sizes, net.act,
                           net.flat, policy, episodes, env_rng.state, act_rng.state, rewards,
                           lengths)
        return rewards.tolist(), lengths.tolist()
    for ep in range(episodes):
        obs = env.reset(env_rng)
        total, n = 0.0, 0
        while True:
            out = env.step(agent.act(env, obs))
            obs = out.observation
            total += out.reward
            n += 1
            if out.terminated or out.truncated:
                break
        rewards[ep], lengths[ep] = total, n
    return rewards.tolist(), lengths.tolist()


def policy_eval(agent, env: Env, episodes: int = 100, rng: Optional[SeededRng] = None) -> EvalReport:
    rng = rng or SeededRng(0)
    rewards, lengths = rollouts(agent, env, episodes, rng)
    return EvalReport.from_episodes(rewards, lengths)


__all__ = [
    "AGENT_KINDS", "TrainHyper", "default_hyper", "MlpAgent", "RandomAgent", "ScriptedAgent",
    "train_dqn", "train_ppo", "train_a2c", "TRAINERS", "policy_eval", "rollouts",
    "TrainingDivergedError", "dqn_target", "ppo_objective", "a2c_advantage",
]
