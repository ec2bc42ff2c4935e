"""Seeded experiment runs: train, evaluate, write per-seed artifacts."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..agent import HistoryBuffer, TaskDescription, run_inference, run_training, task_description
from ..baselines import (AGENT_KINDS, TRAINERS, MlpAgent, RandomAgent, ScriptedAgent,
                         policy_eval, rollouts)
from ..core import ProtocolError
from ..envs import Env, make_env
from ..envs.kernels import CELL_START
from ..envs.maps import frozenlake_rows
from ..llm import LLMClient, backend_from_spec
from ..metrics import EvalReport, MetricSeries, smooth
from ..oracles import frozenlake_shortest_path
from ..rng import SeededRng
from .config import ConfigError, RunConfig
from .svg import write_chart

log = logging.getLogger(__name__)

ARTIFACT = "artifact.json"


def build_env(cfg: RunConfig) -> Env:
    return make_env(cfg.env, slippery=cfg.slippery, max_steps=cfg.max_steps, map_file=cfg.map_file)


def scripted_agent(cfg: RunConfig, env: Env) -> ScriptedAgent:
    """Table from ``cfg.scripted_table``, else a built-in rule for the environment."""
    if cfg.scripted_table:
        with open(cfg.scripted_table, encoding="utf-8") as fh:
            return ScriptedAgent.from_dict(json.load(fh))
    if cfg.env == "frozenlake":
        # follow the shortest path under deterministic moves
        path = frozenlake_shortest_path(env.grid)
        ncols = env.grid.shape[1]
        row, col = map(int, np.argwhere(env.grid == CELL_START)[0])
        deltas = ((0, -1), (1, 0), (0, 1), (-1, 0))
        table = {}
        for a in path:
            table[row * ncols + col] = a
            row, col = row + deltas[a][0], col + deltas[a][1]
        return ScriptedAgent(table, 0)
    if cfg.env == "blackjack":
        return ScriptedAgent({total: 1 for total in range(4, 17)}, 0)
    raise ConfigError(f"scripted agent on {cfg.env} needs a scripted_table file")


def _client(cfg: RunConfig, transcript: Optional[Path]) -> LLMClient:
    backend = backend_from_spec(cfg.backend)
    kwargs = {"temperature": cfg.temperature, "transcript_path": transcript}
    if cfg.model:
        kwargs["model"] = cfg.model
    return LLMClient(backend, **kwargs)


def _env_doc(cfg: RunConfig, env: Env) -> dict:
    doc = {"id": cfg.env, "max_steps": cfg.max_steps}
    if cfg.env == "frozenlake":
        doc.update(slippery=cfg.slippery, map=frozenlake_rows(env.grid))
    return doc


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _plot(path: Path, series: MetricSeries, window: int, title: str) -> None:
    write_chart(path, {"reward": smooth(series.rewards, window)}, title=title, ylabel="Reward",
                footer=f"Trailing moving average, window {window}.")


def run_seed(cfg: RunConfig, seed: int) -> dict:
    """One (config, seed) run. Returns the eval summary written to ``eval.json``."""
    cfg = cfg.for_seed(seed)
    out = cfg.run_dir(seed)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = cfg.to_dict()
    env = build_env(cfg)
    root = SeededRng(seed)
    artifact: dict = {"agent": cfg.agent, "env": _env_doc(cfg, env)}

    if cfg.agent == "parl":
        client = _client(cfg, out / "transcript.jsonl")
        task = task_description(env.spec, cfg.parl.decode_mode)
        buffer, series = run_training(env, client, cfg.parl, task)
        report, eval_series = run_inference(env, client, buffer, cfg.eval_episodes, cfg.parl, task)
        artifact["policy"] = buffer.to_dict(task)
        snapshot["replay_backend"] = f"replay:{out / 'transcript.jsonl'}"
    elif cfg.agent in AGENT_KINDS:
        agent, series, losses = TRAINERS[cfg.agent](env, cfg.hyper, root.substream("train"))
        rewards, lengths = rollouts(agent, env, cfg.eval_episodes, root.substream("eval"))
        report = EvalReport.from_episodes(rewards, lengths)
        eval_series = _series(rewards, lengths)
        artifact["params"] = agent.to_dict()
    else:
        agent = (RandomAgent(env.spec.action_count, root.substream("act")) if cfg.agent == "random"
                 else scripted_agent(cfg, env))
        series = _series(*rollouts(agent, env, cfg.train_episodes, root.substream("train")))
        rewards, lengths = rollouts(agent, env, cfg.eval_episodes, root.substream("eval"))
        report = EvalReport.from_episodes(rewards, lengths)
        eval_series = _series(rewards, lengths)
        if isinstance(agent, ScriptedAgent):
            artifact["params"] = agent.to_dict()

    artifact["config"] = snapshot
    series.write_csv(out / "metrics.csv")
    eval_series.write_csv(out / "eval.csv")
    _write(out / "eval.json", report.to_json() + "\n")
    _write(out / "config.json", json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    _write(out / ARTIFACT, json.dumps(artifact, sort_keys=True) + "\n")
    _plot(out / "curve.svg", series, cfg.window, f"{cfg.env} / {cfg.agent} / seed {seed}")
    log.info("%s %s seed %d: %s", cfg.env, cfg.agent, seed, report.row())
    return {"seed": seed, **json.loads(report.to_json())}


def _series(rewards, lengths) -> MetricSeries:
    s = MetricSeries()
    for r, n in zip(rewards, lengths):
        s.add(r, n)
    return s


def _error_doc(exc: BaseException) -> dict:
    return {"error": type(exc).__name__, "message": str(exc)}


def run_experiment(cfg: RunConfig) -> dict:
    """Run every seed (``cfg.workers`` at a time) and write an aggregate summary.

    A failing seed leaves ``error.json`` in its directory; the first failure is
    re-raised after all seeds finish.
    """
    def one(seed):
        try:
            return run_seed(cfg, seed)
        except Exception as exc:
            d = cfg.run_dir(seed)
            d.mkdir(parents=True, exist_ok=True)
            _write(d / "error.json", json.dumps(_error_doc(exc), indent=2) + "\n")
            return exc

    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, cfg.seeds))
    else:
        results = [one(s) for s in cfg.seeds]
    for r in results:
        if isinstance(r, BaseException):
            raise r
    summary = _aggregate(cfg, results)
    base = Path(cfg.out) / f"{cfg.env}-{cfg.agent}"
    _write(base / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _aggregate(cfg: RunConfig, results: list[dict]) -> dict:
    """Mean curve over seeds plus the spread of per-seed evaluation means."""
    base = Path(cfg.out) / f"{cfg.env}-{cfg.agent}"
    curves = [MetricSeries.read_csv(cfg.run_dir(s) / "metrics.csv").rewards for s in cfg.seeds]
    n = min(len(c) for c in curves)
    mean_curve = np.mean([c[:n] for c in curves], axis=0).tolist()
    lines = ["episode,mean_true_reward"] + [f"{i + 1},{v!r}" for i, v in enumerate(mean_curve)]
    _write(base / "aggregate.csv", "\n".join(lines) + "\n")
    write_chart(base / "aggregate.svg", {"mean reward": smooth(mean_curve, cfg.window)},
                title=f"{cfg.env} / {cfg.agent} ({len(cfg.seeds)} seeds)", ylabel="Reward",
                footer=f"Mean over seeds; trailing moving average, window {cfg.window}.")
    means = [r["mean_reward"] for r in results]
    return {
        "env": cfg.env,
        "agent": cfg.agent,
        "seeds": cfg.seeds,
        "per_seed": results,
        "mean_of_means": float(np.mean(means)),
        "std_of_means": float(np.std(means)),
    }


def load_artifact(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / ARTIFACT
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"artifact not found: {path}") from exc
    if not isinstance(doc, dict) or "agent" not in doc or "env" not in doc:
        raise ProtocolError(f"{path} is not a run artifact")
    return doc


def evaluate(cfg: Optional[RunConfig], artifact_path, episodes: Optional[int] = None,
             seed: Optional[int] = None) -> EvalReport:
    """Greedy evaluation of a saved artifact; ``cfg`` defaults to the artifact's snapshot."""
    doc = load_artifact(artifact_path)
    if cfg is None:
        snap = dict(doc["config"])
        snap.pop("replay_backend", None)
        cfg = RunConfig.from_dict(snap)
    if doc["agent"] != cfg.agent or doc["env"]["id"] != cfg.env:
        raise ProtocolError(f"artifact holds a {doc['agent']} agent for {doc['env']['id']}, "
                            f"config asks for {cfg.agent} on {cfg.env}")
    episodes = episodes or cfg.eval_episodes
    seed = cfg.seeds[0] if seed is None else seed
    env = build_env(cfg)
    rng = SeededRng(seed).substream("eval")
    if cfg.agent == "parl":
        buffer = HistoryBuffer.from_dict(doc["policy"])
        task = TaskDescription.from_dict(doc["policy"]["task"]) if "task" in doc["policy"] else None
        report, _ = run_inference(env, _client(cfg, None), buffer, episodes,
                                  replace(cfg.parl, seed=seed), task)
        return report
    if cfg.agent in AGENT_KINDS:
        agent = MlpAgent.from_dict(doc["params"])
        if agent.network.sizes[-1] != env.spec.action_count or agent.network.sizes[0] != env.feature_dim:
            raise ProtocolError("network shape does not match the environment")
    elif cfg.agent == "random":
        agent = RandomAgent(env.spec.action_count, SeededRng(seed).substream("act"))
    else:
        agent = ScriptedAgent.from_dict(doc["params"])
    return policy_eval(agent, env, episodes, rng)


__all__ = ["ARTIFACT", "build_env", "scripted_agent", "run_seed", "run_experiment",
           "load_artifact", "evaluate"]
