import json
import os
import subprocess
import sys

import numpy as np
import pytest

from parl.baselines import (MlpAgent, RandomAgent, ScriptedAgent, TRAINERS, TrainHyper,
                            TrainingDivergedError, default_hyper, policy_eval, rollouts)
from parl.envs import make_env
from parl.oracles import frozenlake_shortest_path
from parl.rng import SeededRng


def test_default_hyper():
    d = default_hyper("dqn")
    assert (d.gamma, d.learning_rate, d.hidden, d.buffer_size, d.batch_size) == (0.99, 1e-3, (64, 64), 50_000, 64)
    assert (d.epsilon_start, d.epsilon_end, d.epsilon_decay_fraction, d.target_sync_interval) == (1.0, 0.05, 0.2, 1000)
    assert d.total_episodes == 100_000
    p = default_hyper("ppo")
    assert (p.learning_rate, p.clip_epsilon, p.n_epochs, p.n_steps) == (3e-4, 0.2, 4, 2048)
    a = default_hyper("a2c", gamma=0.9)
    assert (a.learning_rate, a.n_step_return, a.gamma) == (1e-3, 5, 0.9)
    with pytest.raises(ValueError):
        default_hyper("sarsa")


@pytest.mark.parametrize("bad", [dict(gamma=1.5), dict(clip_epsilon=1.0), dict(learning_rate=0),
                                 dict(batch_size=0), dict(total_episodes=-1)])
def test_hyper_validation(bad):
    with pytest.raises(ValueError):
        TrainHyper(**bad)


def test_hyper_roundtrip():
    h = default_hyper("ppo", hidden=[8, 8])
    assert TrainHyper.from_dict(json.loads(json.dumps(h.to_dict()))) == h


@pytest.mark.parametrize("kind", ["dqn", "ppo", "a2c"])
def test_solves_deterministic_lake(kind):
    env = make_env("frozenlake", slippery=False)
    extra = {"n_steps": 256} if kind == "ppo" else {}
    agent, series, losses = TRAINERS[kind](env, default_hyper(kind, total_episodes=1000, **extra),
                                           SeededRng(0))
    assert len(series) == 1000 and len(losses) == 1000
    report = policy_eval(agent, env, 100, SeededRng(1))
    assert report.mean_reward == 1.0 and report.mean_length == 6.0
    assert report.std_reward == 0.0 and report.std_length == 0.0


@pytest.mark.parametrize("kind", ["dqn", "ppo", "a2c"])
def test_blackjack_beats_random(kind):
    env = make_env("blackjack")
    agent, _, _ = TRAINERS[kind](env, default_hyper(kind, total_episodes=3000), SeededRng(0))
    trained = policy_eval(agent, env, 2000, SeededRng(1)).mean_reward
    assert trained > -0.3 > policy_eval(RandomAgent(2, SeededRng(2)), env, 2000, SeededRng(1)).mean_reward


@pytest.mark.parametrize("kind", ["dqn", "ppo", "a2c"])
def test_training_is_deterministic(kind):
    env = make_env("taxi")
    h = default_hyper(kind, total_episodes=30, learning_starts=64, n_steps=128)
    a1, s1, l1 = TRAINERS[kind](env, h, SeededRng(3))
    a2, s2, l2 = TRAINERS[kind](env, h, SeededRng(3))
    assert np.array_equal(a1.network.flat, a2.network.flat)
    assert s1.to_csv() == s2.to_csv() and np.array_equal(l1, l2)
    a3, _, _ = TRAINERS[kind](env, h, SeededRng(4))
    assert not np.array_equal(a1.network.flat, a3.network.flat)


@pytest.mark.parametrize("kind", ["dqn", "ppo", "a2c"])
def test_divergence_is_reported(kind):
    h = default_hyper(kind, total_episodes=400, learning_rate=1e300, learning_starts=64,
                      n_steps=64, max_grad_norm=0)
    with pytest.raises(TrainingDivergedError) as err:
        TRAINERS[kind](make_env("blackjack"), h, SeededRng(0))
    dump = err.value.dump
    assert dump["agent"] == kind and dump["episode"] > 0
    assert {"recent_losses", "recent_rewards", "param_norms"} <= set(dump)


def test_agent_save_load(tmp_path):
    env = make_env("frozenlake")
    agent, _, _ = TRAINERS["ppo"](env, default_hyper("ppo", total_episodes=50, n_steps=128), SeededRng(0))
    agent.save(tmp_path / "a.json")
    back = MlpAgent.load(tmp_path / "a.json")
    assert np.array_equal(back.network.flat, agent.network.flat)
    assert np.array_equal(back.value.flat, agent.value.flat)
    assert (policy_eval(back, env, 200, SeededRng(5)).to_json()
            == policy_eval(agent, env, 200, SeededRng(5)).to_json())


def test_scripted_bfs_policy():
    env = make_env("frozenlake", slippery=False)
    path = frozenlake_shortest_path(env.grid)
    table, pos = {}, 0
    step = {0: -1, 1: 4, 2: 1, 3: -4}
    for a in path:
        table[pos] = a
        pos += step[a]
    agent = ScriptedAgent(table)
    report = policy_eval(agent, env, 100, SeededRng(0))
    assert (report.mean_reward, report.mean_length, report.std_reward) == (1.0, 6.0, 0.0)
    assert ScriptedAgent.from_dict(json.loads(json.dumps(agent.to_dict()))) == agent


def test_random_taxi_collects_penalties():
    env = make_env("taxi")
    report = policy_eval(RandomAgent(6, SeededRng(0)), env, 200, SeededRng(1))
    assert report.mean_reward < -100


def test_rollouts_are_seeded():
    env = make_env("frozenlake")
    a = rollouts(RandomAgent(4, SeededRng(1)), env, 50, SeededRng(2))
    b = rollouts(RandomAgent(4, SeededRng(1)), env, 50, SeededRng(2))
    assert a == b


CHILD = r"""
import json
import numpy as np
from parl import JIT_ENABLED
from parl.baselines import TRAINERS, default_hyper, policy_eval
from parl.envs import make_env
from parl.rng import SeededRng
out = {"jit": JIT_ENABLED}
for kind in ("dqn", "ppo", "a2c"):
    env = make_env("frozenlake")
    h = default_hyper(kind, total_episodes=40, learning_starts=64, n_steps=64, hidden=[16])
    agent, series, _ = TRAINERS[kind](env, h, SeededRng(0))
    out[kind] = [agent.network.flat.tolist(), series.to_csv(),
                 policy_eval(agent, env, 50, SeededRng(1)).to_json()]
print(json.dumps(out))
"""


def _child(pure):
    env = dict(os.environ, PARL_PURE_NUMPY="1" if pure else "0")
    proc = subprocess.run([sys.executable, "-c", CHILD], env=env, capture_output=True, text=True,
                          check=True, timeout=600)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def test_pure_numpy_path_matches_compiled():
    jit, pure = _child(False), _child(True)
    assert jit.pop("jit") is True and pure.pop("jit") is False
    for kind in ("dqn", "ppo", "a2c"):
        # compiled dot products may sum in a different order than BLAS
        assert np.allclose(jit[kind][0], pure[kind][0], rtol=0, atol=1e-12)
        assert jit[kind][1:] == pure[kind][1:]
