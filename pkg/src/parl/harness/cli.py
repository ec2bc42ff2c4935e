"""Command line: ``train``, ``eval`` and ``plot``.

Failures print one JSON object on stderr and exit nonzero: 2 for bad
configuration, 3 for protocol or parse errors, 4 for model backend errors,
5 for diverged training, 1 otherwise.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional

from ..agent import ActionParseError, ParlConfig, PromptBudgetError
from ..baselines import AGENT_KINDS, TrainingDivergedError, default_hyper
from ..core import DomainError, ProtocolError
from ..llm import LLMConfigError, LLMError
from ..metrics import MetricSeries, smooth
from .config import AGENTS, ConfigError, RunConfig, load_config
from .run import evaluate, run_experiment
from .svg import write_chart


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parl", description="Prompt-history RL agents and baselines.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train and evaluate one configuration over seeds")
    t.add_argument("--config", help="TOML file; flags given explicitly override it")
    t.add_argument("--env")
    t.add_argument("--agent", choices=AGENTS)
    t.add_argument("--history", choices=["full", "random-rewards", "none"])
    t.add_argument("--decode", choices=["self", "script"])
    t.add_argument("--episodes", type=int, help="training episodes")
    t.add_argument("--eval-episodes", type=int)
    t.add_argument("--seed", type=int, nargs="+", help="one or more seeds (default 0..4)")
    t.add_argument("--backend", help="http[:url] | mock:<path> | replay:<path>")
    t.add_argument("--model")
    t.add_argument("--out")
    t.add_argument("--workers", type=int)
    t.add_argument("--deterministic", dest="slippery", action="store_false", default=None,
                   help="non-slippery FrozenLake")
    t.add_argument("--max-steps", type=int)
    t.add_argument("--omit-zero-rewards", action="store_true", default=None)
    t.add_argument("--inference-history", choices=["trained+current", "current-only"])

    e = sub.add_parser("eval", help="evaluate a saved artifact")
    e.add_argument("--artifact", required=True, help="artifact.json or its run directory")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int)
    e.add_argument("--backend", help="override the recorded model backend")

    g = sub.add_parser("plot", help="smoothed reward curve from a metrics CSV")
    g.add_argument("--csv", required=True)
    g.add_argument("--window", type=int, default=5)
    g.add_argument("--svg", required=True)
    g.add_argument("--column", choices=["true_reward", "length"], default="true_reward")
    return p


def _train_config(args) -> RunConfig:
    base = load_config(args.config).to_dict() if args.config else {}
    if args.env:
        base["env"] = args.env
    if args.agent:
        if base.get("agent") != args.agent:
            base.pop("parl", None)
            base.pop("hyper", None)
        base["agent"] = args.agent
    if "env" not in base or "agent" not in base:
        raise ConfigError("train needs --env and --agent (or a --config file)")
    for key, val in (("out", args.out), ("backend", args.backend), ("model", args.model),
                     ("workers", args.workers), ("slippery", args.slippery),
                     ("max_steps", args.max_steps), ("eval_episodes", args.eval_episodes)):
        if val is not None:
            base[key] = val
    if args.seed:
        base["seeds"] = args.seed
    agent = base["agent"]
    if agent in AGENT_KINDS:
        hyper = base.get("hyper") or default_hyper(agent).to_dict()
        if args.episodes:
            hyper["total_episodes"] = args.episodes
        base["hyper"] = hyper
        if args.history or args.decode:
            raise ConfigError(f"--history/--decode apply to parl runs, not {agent}")
    else:
        parl = base.get("parl") or ParlConfig().to_dict()
        for key, val in (("episodes", args.episodes), ("history_mode", args.history),
                         ("decode_mode", args.decode), ("omit_zero_rewards", args.omit_zero_rewards),
                         ("inference_history", args.inference_history)):
            if val is not None:
                parl[key] = val
        base["parl"] = parl
    return RunConfig.from_dict(base)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, DomainError, LLMConfigError)):
        return 2
    if isinstance(exc, (ProtocolError, ActionParseError, PromptBudgetError)):
        return 3
    if isinstance(exc, LLMError):
        return 4
    if isinstance(exc, TrainingDivergedError):
        return 5
    return 1


def _fail(exc: BaseException) -> int:
    code = _exit_code(exc)
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, TrainingDivergedError):
        doc["dump"] = exc.dump
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Optional[list[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            summary = run_experiment(_train_config(args))
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "eval":
            cfg = None
            if args.backend:
                from .run import load_artifact
                snap = dict(load_artifact(args.artifact)["config"])
                snap.pop("replay_backend", None)
                snap["backend"] = args.backend
                cfg = RunConfig.from_dict(snap)
            report = evaluate(cfg, args.artifact, args.episodes, args.seed)
            print(report.to_json())
        else:
            if args.window < 1:
                raise ConfigError("--window must be >= 1")
            series = MetricSeries.read_csv(args.csv)
            ys = series.rewards if args.column == "true_reward" else series.lengths
            write_chart(args.svg, {args.column: smooth(ys, args.window)},
                        ylabel=args.column.replace("_", " "),
                        footer=f"Trailing moving average, window {args.window}.")
    except Exception as exc:  # every failure becomes structured JSON
        if args.verbose:
            logging.exception("command failed")
        return _fail(exc)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
