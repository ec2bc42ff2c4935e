import json
import re
from itertools import cycle
from pathlib import Path

import pytest

from parl.agent import (ACTION_REQUEST, CURRENT_HEADER, ActionParseError, HistoryBuffer,
                        HistoryMode, ParlConfig, PromptBudgetError, PromptSettings,
                        TaskDescription, TruncationPolicy, build_messages, build_prompt,
                        format_step, load_policy, parse_action, randomize_reward, run_inference,
                        run_training, task_description)
from parl.core import EpisodeLog, RewardSet, StepRecord
from parl.envs import make_env
from parl.llm import Backend, LLMClient, ScriptedMock, load_mock
from parl.rng import SeededRng

BFS_MOCK = Path(__file__).resolve().parents[1] / "configs" / "mocks" / "frozenlake_bfs.json"
EPISODE_HEADER = re.compile(r"^Episode (\d+):$")


class CycleMock(Backend):
    """Prompt-independent replies, so two runs see the same action stream."""

    def __init__(self, replies):
        self._it = cycle(replies)

    def complete(self, request):
        return next(self._it)


def client(backend, **kw):
    return LLMClient(backend, model="mock", **kw)


def parse_user(text):
    """Split a user message into {episode: lines}, current-episode lines, state line."""
    past, current, block = {}, None, None
    lines = text.splitlines()
    for line in lines:
        m = EPISODE_HEADER.match(line)
        if m:
            block = past.setdefault(int(m.group(1)), [])
            continue
        if line == CURRENT_HEADER:
            current = block = []
            continue
        if line.startswith("Current state:") or line == ACTION_REQUEST:
            block = None
            continue
        if block is None:
            raise AssertionError(f"stray line {line!r}")
        block.append(line)
    return past, current


def episodes_of(prompts):
    """Group prompts by episode using the current-episode step count."""
    groups = []
    for msgs in prompts:
        _, cur = parse_user(msgs[-1].content)
        if len(cur) == 1:  # only the initial state line
            groups.append([])
        groups[-1].append(msgs)
    return groups


# ---------------------------------------------------------------- texts

def test_blackjack_task_description():
    t = task_description(make_env("blackjack").spec)
    assert t.goal_text.startswith("Blackjack is a card game where the goal is to get as close to 21 "
                                  "as possible without exceeding it.")
    assert "0: Stick (Stop), 1: Hit (Draw)" in t.actions_text
    assert "+1: Win, -1: Lose, 0: Draw." in t.rewards_text
    assert TaskDescription.from_dict(t.to_dict()) == t


@pytest.mark.parametrize("env_id", ["frozenlake", "taxi", "blackjack"])
def test_actions_text_lists_every_action(env_id):
    spec = make_env(env_id).spec
    t = task_description(spec, "self")
    for i, name in enumerate(spec.action_names):
        assert f"{i}: {name}" in t.actions_text
    with pytest.raises(ValueError):
        TaskDescription("g", "a", " ", "r")


def test_format_step_examples():
    assert (format_step(StepRecord(1, 0, 0, "Stick", "[10, 6, 6], [7]", 0))
            == "Action (taken): Stick; (new) State: [10, 6, 6], [7]; Reward: 0")
    assert (format_step(StepRecord(1, 0, 1, "Hit", "[10, 6, 5], [7]", None))
            == "Action (taken): Hit; (new) State: [10, 6, 5], [7]")
    assert (format_step(StepRecord(1, 0, 1, "Down", "State: 10", 0))
            == "Action (taken): Down; (new) State: 10; Reward: 0")
    assert format_step(StepRecord(1, 0, 1, "Down", "5", -1.0)).endswith("Reward: -1")


# ---------------------------------------------------------------- parser

def test_parse_action_precedence():
    bj = make_env("blackjack").spec
    assert parse_action("Hit", bj) == 1
    assert parse_action("  hit. ", bj) == 1
    assert parse_action("1", bj) == 1
    assert parse_action("0", bj) == 0
    assert parse_action("I will stick with 20.", bj) == 0
    assert parse_action("Hit or Stick? Stick.", bj) == 1  # earliest occurrence wins
    assert parse_action("Hitting is bad; Stick", bj) == 0  # word boundary
    with pytest.raises(ActionParseError):
        parse_action("7", bj)
    with pytest.raises(ActionParseError):
        parse_action("no idea", bj)
    taxi = make_env("taxi").spec
    assert parse_action("Drop off", taxi) == taxi.action_names.index("Drop-off")
    assert parse_action("I'd go up now", taxi) == taxi.action_names.index("Up")


def test_fallback_after_retries():
    env = make_env("blackjack")
    backend = ScriptedMock(["??"] * 4 + ["Stick"] * 50)
    c = client(backend)
    cfg = ParlConfig(episodes=1, max_parse_retries=3)
    buf, metrics = run_training(env, c, cfg)
    assert metrics.fallbacks == 1
    first = c.entries[:4]
    # re-asks append the bad reply and a correction to the same conversation
    assert [len(e.request.messages) for e in first] == [2, 4, 6, 8]
    assert first[1].request.messages[2].content == "??"
    assert buf.completed_episodes[0].records[0].action in (0, 1)


# ---------------------------------------------------------------- rewards

def test_randomize_reward_uniform():
    rs = RewardSet((1, 0, -1))
    rng = SeededRng(11)
    draws = [randomize_reward(1.0, rs, rng) for _ in range(100_000)]
    for v in rs.values:
        assert abs(draws.count(v) / len(draws) - 1 / 3) < 0.01
    a = [randomize_reward(0, RewardSet((0, 1)), SeededRng(3)) for _ in range(1)]
    r1, r2 = SeededRng(3), SeededRng(3)
    assert ([randomize_reward(0, RewardSet((0, 1)), r1) for _ in range(50)]
            == [randomize_reward(1, RewardSet((0, 1)), r2) for _ in range(50)])
    assert a[0] in (0.0, 1.0)


def test_random_rewards_prompts_vs_metrics():
    env = make_env("blackjack")
    prompts = []
    cfg = ParlConfig(episodes=30, history_mode="random-rewards", seed=5)
    buf, metrics = run_training(env, client(CycleMock(["Hit", "Stick", "Hit"])), cfg, prompts=prompts)
    full_buf, full_metrics = run_training(env, client(CycleMock(["Hit", "Stick", "Hit"])),
                                          ParlConfig(episodes=30, seed=5))
    assert metrics.rewards == full_metrics.rewards
    assert metrics.lengths == full_metrics.lengths
    # shown rewards are exactly the reward substream's uniform draws
    shown = [r.reward for ep in buf.completed_episodes for r in ep.records]
    rng = SeededRng(5).substream("reward")
    expected = [env.spec.reward_set.values[rng.below(3)] for _ in shown]
    assert shown == expected
    true = [t for ep in buf.completed_episodes for t in ep.true_rewards]
    assert true == [t for ep in full_buf.completed_episodes for t in ep.true_rewards]
    assert shown != true
    # and what the final prompt shows for history is the substituted values
    past, _ = parse_user(prompts[-1][-1].content)
    rendered = [float(line.rsplit("Reward: ", 1)[1]) for lines in past.values()
                for line in lines[1:]]
    n = sum(len(ep.records) for ep in buf.completed_episodes[:-1])
    assert rendered == shown[:n]


# ---------------------------------------------------------------- prompt structure

def test_full_history_has_previous_episodes():
    env = make_env("blackjack")
    prompts = []
    buf, _ = run_training(env, client(CycleMock(["Hit", "Stick"])), ParlConfig(episodes=12, seed=1),
                          prompts=prompts)
    groups = episodes_of(prompts)
    assert len(groups) == 12
    from parl.agent import render_episode
    for n, group in enumerate(groups, 1):
        for msgs in group:
            past, current = parse_user(msgs[-1].content)
            assert sorted(past) == list(range(1, n))
            for k, lines in past.items():
                ep = buf.completed_episodes[k - 1]
                assert lines == render_episode(ep, "")[1:]
            assert msgs[0].content == task_description(env.spec).render()
    # first prompt: task description plus the initial state only
    past, current = parse_user(prompts[0][-1].content)
    assert past == {} and len(current) == 1 and current[0].startswith("Initial state: ")


def test_prompt_monotone_growth():
    env = make_env("frozenlake")
    prompts = []
    run_training(env, client(CycleMock(["Left", "Down", "Right"])), ParlConfig(episodes=8, seed=2),
                 prompts=prompts)
    heads = [g[0][-1].content.split(CURRENT_HEADER)[0] for g in episodes_of(prompts)]
    for a, b in zip(heads, heads[1:]):
        assert b.startswith(a) and len(b) > len(a)


def test_no_history_prompts():
    env = make_env("frozenlake")
    prompts, none_prompts = [], []
    run_training(env, client(CycleMock(["Down", "Right"])), ParlConfig(episodes=1, seed=4),
                 prompts=prompts)
    run_training(env, client(CycleMock(["Down", "Right"])),
                 ParlConfig(episodes=1, seed=4, history_mode="none"), prompts=none_prompts)
    assert prompts == none_prompts  # modes coincide before any history exists

    none_prompts = []
    buf, _ = run_training(env, client(CycleMock(["Down", "Right", "Up"])),
                          ParlConfig(episodes=10, seed=4, history_mode="none"), prompts=none_prompts)
    assert len(buf.completed_episodes) == 10  # recorded, never shown
    bound = 600 + env.spec.max_steps * 120
    for msgs in none_prompts:
        past, _ = parse_user(msgs[-1].content)
        assert past == {}
        assert "Episode " not in msgs[-1].content
        assert len(msgs[-1].content) < bound


def _ep(n, steps, text="x" * 40):
    ep = EpisodeLog(n, "start")
    for i in range(steps):
        ep.append(StepRecord(n, i, 0, "Stick", text, 0, i == steps - 1), 0)
    return ep


def test_budget_drop_oldest_and_fail_fast():
    task = task_description(make_env("blackjack").spec)
    buf = HistoryBuffer(HistoryMode.FULL, [_ep(i, 5) for i in range(1, 21)])
    full = build_messages(task, buf, "s", PromptSettings(max_prompt_tokens=None))
    size = sum(len(m.content) for m in full) // 4
    msgs = build_messages(task, buf, "s", PromptSettings(max_prompt_tokens=size // 2))
    past, _ = parse_user(msgs[-1].content)
    kept = sorted(past)
    assert kept and kept[0] > 1 and kept == list(range(kept[0], 21))
    with pytest.raises(PromptBudgetError):
        build_messages(task, buf, "s", PromptSettings(size // 2, TruncationPolicy.FAIL_FAST))
    with pytest.raises(PromptBudgetError):
        build_messages(task, buf, "s", PromptSettings(10))
    single = build_prompt(task, buf, "s", PromptSettings(None, single_user_message=True))
    assert single.startswith("Goal: Blackjack")


# ---------------------------------------------------------------- loops

def test_bfs_mock_solves_deterministic_lake():
    env = make_env("frozenlake", slippery=False)
    buf, metrics = run_training(env, client(load_mock(BFS_MOCK)), ParlConfig(episodes=3))
    assert metrics.rewards[-1] == 1.0 and metrics.lengths[-1] == 6
    report, series = run_inference(env, client(load_mock(BFS_MOCK)), buf, 10)
    assert report.mean_reward == 1.0 and report.mean_length == 6


def test_inference_freezes_history_and_clears_scratch():
    env = make_env("frozenlake")
    buf, _ = run_training(env, client(CycleMock(["Down", "Right"])), ParlConfig(episodes=4, seed=8))
    before = buf.to_json()
    prompts = []
    report, series = run_inference(env, client(CycleMock(["Right", "Down", "Left"])), buf, 6,
                                   ParlConfig(seed=8), prompts=prompts)
    assert buf.to_json() == before
    assert len(series) == 6 and report.std_reward >= 0
    groups = episodes_of(prompts)
    assert len(groups) == 6
    for group in groups:
        for step, msgs in enumerate(group):
            past, current = parse_user(msgs[-1].content)
            assert sorted(past) == [1, 2, 3, 4]
            assert len(current) == 1 + step  # this episode's steps only

    prompts = []
    run_inference(env, client(CycleMock(["Right"])), buf, 2,
                  ParlConfig(inference_history="current-only"), prompts=prompts)
    assert all(parse_user(m[-1].content)[0] == {} for m in prompts)


def test_training_is_deterministic(tmp_path):
    env = make_env("taxi", max_steps=20)
    runs = []
    for i in range(2):
        buf, metrics = run_training(env, client(CycleMock(["Up", "Left", "Pickup"])),
                                    ParlConfig(episodes=3, seed=9))
        runs.append((buf.to_json(), metrics.to_csv()))
    assert runs[0] == runs[1]


def test_policy_roundtrip(tmp_path):
    env = make_env("blackjack")
    buf, _ = run_training(env, client(CycleMock(["Hit"])), ParlConfig(episodes=3, seed=1))
    task = task_description(env.spec)
    path = tmp_path / "policy.json"
    path.write_text(buf.to_json(task))
    loaded, t = load_policy(path)
    assert t == task and loaded.to_json() == buf.to_json()
    assert json.loads(path.read_text())["mode"] == "full"


def test_omit_zero_rewards():
    env = make_env("frozenlake")
    buf, _ = run_training(env, client(CycleMock(["Up"])), ParlConfig(episodes=1, omit_zero_rewards=True))
    rec = buf.completed_episodes[0].records
    assert all(r.reward is None for r in rec if buf.completed_episodes[0].true_rewards[r.step] == 0)
    assert "Reward" not in format_step(rec[0])


def test_config_validation():
    with pytest.raises(ValueError):
        ParlConfig(episodes=0)
    with pytest.raises(ValueError):
        ParlConfig(history_mode="partial")
    with pytest.raises(ValueError):
        ParlConfig(inference_history="all")
