"""Run configuration: one environment, one agent family, a list of seeds."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..agent import ParlConfig
from ..baselines import AGENT_KINDS, TrainHyper, default_hyper
from ..envs import ENV_IDS

AGENTS = ("parl", *AGENT_KINDS, "random", "scripted")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


def _norm_env(env_id: str) -> str:
    key = str(env_id).lower().replace("_", "").replace("-", "")
    if key not in ENV_IDS:
        raise ConfigError(f"unknown environment id {env_id!r}; expected one of {', '.join(ENV_IDS)}")
    return key


@dataclass
class RunConfig:
    env: str
    agent: str
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    out: str = "runs"
    eval_episodes: int = 100
    slippery: bool = True
    max_steps: Optional[int] = None
    map_file: Optional[str] = None
    parl: Optional[ParlConfig] = None
    hyper: Optional[TrainHyper] = None
    backend: str = "http"
    model: Optional[str] = None
    temperature: float = 0.0
    scripted_table: Optional[str] = None
    smooth_window: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        self.env = _norm_env(self.env)
        if self.agent not in AGENTS:
            raise ConfigError(f"unknown agent {self.agent!r}; expected one of {', '.join(AGENTS)}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if self.agent == "parl":
            if self.hyper is not None:
                raise ConfigError("a parl run takes [parl] settings, not [train]")
            self.parl = self.parl or ParlConfig()
        elif self.agent in AGENT_KINDS:
            if self.parl is not None:
                raise ConfigError(f"a {self.agent} run takes [train] settings, not [parl]")
            self.hyper = self.hyper or default_hyper(self.agent)
        else:
            if self.hyper is not None:
                raise ConfigError(f"{self.agent} agent takes no [train] settings")
            # random/scripted runs only use the episode count
            self.parl = self.parl or ParlConfig()
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def train_episodes(self) -> int:
        if self.hyper is not None:
            return self.hyper.total_episodes
        return self.parl.episodes

    @property
    def window(self) -> int:
        if self.smooth_window:
            return self.smooth_window
        return 5 if self.train_episodes <= 1000 else 200

    def run_dir(self, seed: int) -> Path:
        return Path(self.out) / f"{self.env}-{self.agent}" / f"seed-{seed}"

    def for_seed(self, seed: int) -> "RunConfig":
        parl = replace(self.parl, seed=seed) if self.parl is not None else None
        return replace(self, seeds=[seed], parl=parl)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["parl"] = self.parl.to_dict() if self.parl is not None else None
        d["hyper"] = self.hyper.to_dict() if self.hyper is not None else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        # written into run snapshots for reference; the backend field decides
        d.pop("replay_backend", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"train"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key in ("env", "agent"):
            if key not in d:
                raise ConfigError(f"missing required key {key!r}")
        try:
            if d.get("parl") is not None:
                d["parl"] = ParlConfig(**d["parl"])
            train = d.pop("train", None)
            hyper = d.get("hyper") if d.get("hyper") is not None else train
            if hyper is not None:
                d["hyper"] = (default_hyper(d["agent"], **hyper) if d["agent"] in AGENT_KINDS
                              else TrainHyper.from_dict(hyper))
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    """Read a TOML file whose top-level keys mirror :class:`RunConfig`."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig.from_dict(doc)
