#!/usr/bin/env python3
"""Compiled kernels vs. the pure-numpy path on identical workloads.

The switch is read at import time, so each path runs in its own interpreter
(``PARL_PURE_NUMPY=1`` for the fallback). Every workload also reports a
checksum; the two paths must agree on it.

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --scale 0.2 --json bench.json
"""
import argparse
import json
import os
import subprocess
import sys
import time

CHILD = r'''
import json, sys, time
import numpy as np
from parl import JIT_ENABLED
from parl.envs import make_env
from parl.nn import MlpParams, adam_step, cache_size
from parl.baselines import RandomAgent, rollouts, default_hyper, train_dqn
from parl.baselines.losses import dqn_loss_grad
from parl.rng import SeededRng

scale = float(sys.argv[1])
out = {"jit": JIT_ENABLED}

def timed(name, fn, reps):
    fn()  # compile / warm caches outside the timing
    t = time.perf_counter()
    for _ in range(reps):
        val = fn()
    out[name] = {"seconds_per_call": (time.perf_counter() - t) / reps, "checksum": val}

env = make_env("frozenlake")
n_ep = max(1, int(200 * scale))
timed("frozenlake_random_rollouts", lambda: float(sum(rollouts(
    RandomAgent(4, SeededRng(1)), env, n_ep, SeededRng(2))[1])), 3)

sizes = np.array([16, 64, 64, 4])
net = MlpParams.init(sizes, "relu", SeededRng(3))
rng = np.random.default_rng(0)
idx = rng.integers(0, 16, (64, 1))
acts = rng.integers(0, 4, 64)
rew = rng.random(64)
term = rng.random(64) < 0.2
co, ct = np.zeros(cache_size(sizes, 64)), np.zeros(cache_size(sizes, 64))
grad = np.zeros_like(net.flat)

def loss_grad():
    loss = dqn_loss_grad(net.flat, net.flat, sizes, net.act, idx, acts, rew, idx, term, 0.99,
                         co, ct, grad)
    return float(loss) + float(grad.sum())

timed("dqn_loss_grad_batch64", loss_grad, max(1, int(20 * scale)))

p, m, v = net.flat.copy(), np.zeros_like(net.flat), np.zeros_like(net.flat)
def adam():
    adam_step(p, grad, m, v, 1, 1e-3, 0.9, 0.999, 1e-8)
    return float(p.sum())
timed("adam_step_5508", adam, max(1, int(20 * scale)))

bj = make_env("blackjack")
def short_dqn():
    h = default_hyper("dqn", total_episodes=max(10, int(300 * scale)), learning_starts=64)
    agent, series, _ = train_dqn(bj, h, SeededRng(4))
    return float(agent.network.flat.sum())
timed("dqn_train_blackjack", short_dqn, 1)
print(json.dumps(out))
'''


def run(pure: bool, scale: float) -> dict:
    env = dict(os.environ)
    env["PARL_PURE_NUMPY"] = "1" if pure else "0"
    proc = subprocess.run([sys.executable, "-c", CHILD, str(scale)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="workload size multiplier")
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()

    jit = run(False, args.scale)
    pure = run(True, args.scale)
    if not jit.pop("jit") or pure.pop("jit"):
        print("could not select both paths (is numba installed?)", file=sys.stderr)
        return 1
    print(f"{'workload':32s} {'numba':>12s} {'pure':>12s} {'speedup':>9s}  match")
    ok = True
    for name in jit:
        a, b = jit[name], pure[name]
        same = abs(a["checksum"] - b["checksum"]) <= 1e-9 * max(1.0, abs(a["checksum"]))
        ok &= same
        print(f"{name:32s} {a['seconds_per_call'] * 1e3:10.3f}ms {b['seconds_per_call'] * 1e3:10.3f}ms "
              f"{b['seconds_per_call'] / a['seconds_per_call']:8.1f}x  {'yes' if same else 'NO'}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": jit, "pure": pure, "when": time.strftime("%Y-%m-%dT%H:%M:%S")}, fh,
                      indent=2)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
