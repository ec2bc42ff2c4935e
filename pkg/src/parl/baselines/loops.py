"""Compiled training and evaluation loops.

Everything from environment stepping to the Adam update happens inside these
kernels so a 100k-episode run never returns to the interpreter. Each loop
fills per-episode reward/length/loss arrays and returns 0, or the 1-based
episode number at which a non-finite loss appeared.
"""
import numpy as np

from .._jit import kernel
from ..envs.kernels import STATE_SIZE, env_features, env_reset, env_step
from ..nn import adam_step, cache_size, clip_grad_norm, mlp_forward_idx
from ..rng import rng_below, rng_uniform
from .losses import a2c_loss_grad, dqn_loss_grad, ppo_loss_grad, softmax_row

ALGO_PPO = 0
ALGO_A2C = 1

POLICY_GREEDY = 0
POLICY_RANDOM = 1
POLICY_SAMPLE = 2


@kernel
def argmax_row(row):
    best = 0
    for j in range(1, row.shape[0]):
        if row[j] > row[best]:
            best = j
    return best


@kernel
def sample_from(p, rng):
    u = rng_uniform(rng)
    acc = 0.0
    for j in range(p.shape[0]):
        acc += p[j]
        if u < acc:
            return j
    return p.shape[0] - 1


@kernel
def dqn_train_loop(kind, grid, envp, n_feat, sizes, act, online, target, m, v, adam_t,
                   episodes, gamma, lr, eps_start, eps_end, eps_decay_episodes, batch, capacity,
                   learning_starts, train_freq, target_sync, max_grad_norm,
                   rng_env, rng_explore, rng_replay, out_reward, out_length, out_loss):
    n_act = sizes[sizes.shape[0] - 1]
    state = np.zeros(STATE_SIZE, dtype=np.int64)
    buf_s = np.zeros((capacity, n_feat), dtype=np.int64)
    buf_s2 = np.zeros((capacity, n_feat), dtype=np.int64)
    buf_a = np.zeros(capacity, dtype=np.int64)
    buf_r = np.zeros(capacity)
    buf_t = np.zeros(capacity, dtype=np.bool_)
    bs = np.zeros((batch, n_feat), dtype=np.int64)
    bs2 = np.zeros((batch, n_feat), dtype=np.int64)
    ba = np.zeros(batch, dtype=np.int64)
    br = np.zeros(batch)
    bt = np.zeros(batch, dtype=np.bool_)
    chosen = np.zeros(batch, dtype=np.int64)
    feat = np.zeros((1, n_feat), dtype=np.int64)
    cache1 = np.zeros(cache_size(sizes, 1))
    cache_on = np.zeros(cache_size(sizes, batch))
    cache_tg = np.zeros(cache_size(sizes, batch))
    grad = np.zeros(online.shape[0])
    size = 0
    pos = 0
    step = 0
    for ep in range(episodes):
        frac = ep / eps_decay_episodes if eps_decay_episodes > 0 else 1.0
        if frac > 1.0:
            frac = 1.0
        eps = eps_start + (eps_end - eps_start) * frac
        env_reset(kind, state, grid, envp, rng_env)
        env_features(kind, state, grid, feat[0])
        total = 0.0
        length = 0
        loss_sum = 0.0
        n_loss = 0
        while True:
            if rng_uniform(rng_explore) < eps:
                a = rng_below(rng_explore, n_act)
            else:
                a = argmax_row(mlp_forward_idx(online, sizes, act, feat, cache1)[0])
            r, term, trunc, err = env_step(kind, state, a, grid, envp, rng_env)
            buf_s[pos] = feat[0]
            buf_a[pos] = a
            buf_r[pos] = r
            buf_t[pos] = term
            env_features(kind, state, grid, buf_s2[pos])
            feat[0] = buf_s2[pos]
            pos = (pos + 1) % capacity
            if size < capacity:
                size += 1
            step += 1
            total += r
            length += 1
            if step >= learning_starts and size >= batch and step % train_freq == 0:
                for i in range(batch):
                    while True:
                        k = rng_below(rng_replay, size)
                        dup = False
                        for j in range(i):
                            if chosen[j] == k:
                                dup = True
                                break
                        if not dup:
                            break
                    chosen[i] = k
                    bs[i] = buf_s[k]
                    bs2[i] = buf_s2[k]
                    ba[i] = buf_a[k]
                    br[i] = buf_r[k]
                    bt[i] = buf_t[k]
                loss = dqn_loss_grad(online, target, sizes, act, bs, ba, br, bs2, bt, gamma,
                                     cache_on, cache_tg, grad)
                if not np.isfinite(loss):
                    out_reward[ep] = total
                    out_length[ep] = length
                    out_loss[ep] = loss
                    return ep + 1
                clip_grad_norm(grad, max_grad_norm)
                adam_t[0] += 1
                adam_step(online, grad, m, v, adam_t[0], lr, 0.9, 0.999, 1e-8)
                loss_sum += loss
                n_loss += 1
            if step % target_sync == 0:
                target[:] = online
            if term or trunc:
                break
        out_reward[ep] = total
        out_length[ep] = length
        out_loss[ep] = loss_sum / n_loss if n_loss > 0 else 0.0
    return 0


@kernel
def nstep_targets(rewards, values, next_values, done, count, gamma, n, adv, ret):
    """n-step bootstrapped returns cut at episode ends and at the rollout end."""
    for i in range(count):
        g = 0.0
        disc = 1.0
        j = i
        while True:
            g += disc * rewards[j]
            disc *= gamma
            if done[j] or j == count - 1 or j - i + 1 >= n:
                g += disc * next_values[j]
                break
            j += 1
        ret[i] = g
        adv[i] = g - values[i]


@kernel
def actor_critic_loop(algo, kind, grid, envp, n_feat, pi_sizes, v_sizes, act, pi, vnet,
                      pi_m, pi_v, v_m, v_v, adam_t, episodes, gamma, lr, n_steps, n_epochs,
                      minibatch, clip_eps, ent_coef, vf_coef, max_grad_norm, n_return,
                      normalize_adv, rng_env, rng_act, rng_shuffle,
                      out_reward, out_length, out_loss):
    """PPO (``algo == 0``) or A2C (``algo == 1``) with separate policy and value nets."""
    n_act = pi_sizes[pi_sizes.shape[0] - 1]
    state = np.zeros(STATE_SIZE, dtype=np.int64)
    roll_s = np.zeros((n_steps, n_feat), dtype=np.int64)
    roll_a = np.zeros(n_steps, dtype=np.int64)
    roll_logp = np.zeros(n_steps)
    roll_r = np.zeros(n_steps)
    roll_v = np.zeros(n_steps)
    roll_nv = np.zeros(n_steps)
    roll_done = np.zeros(n_steps, dtype=np.bool_)
    adv = np.zeros(n_steps)
    ret = np.zeros(n_steps)
    perm = np.arange(n_steps)
    feat = np.zeros((1, n_feat), dtype=np.int64)
    cache_p1 = np.zeros(cache_size(pi_sizes, 1))
    cache_v1 = np.zeros(cache_size(v_sizes, 1))
    grad_pi = np.zeros(pi.shape[0])
    grad_v = np.zeros(vnet.shape[0])
    p = np.zeros(n_act)
    ep = 0
    t = 0
    total = 0.0
    length = 0
    last_loss = 0.0
    env_reset(kind, state, grid, envp, rng_env)
    env_features(kind, state, grid, feat[0])
    while ep < episodes:
        logits = mlp_forward_idx(pi, pi_sizes, act, feat, cache_p1)[0]
        lse = softmax_row(logits, p)
        a = sample_from(p, rng_act)
        value = mlp_forward_idx(vnet, v_sizes, act, feat, cache_v1)[0, 0]
        if t > 0 and not roll_done[t - 1]:
            roll_nv[t - 1] = value
        r, term, trunc, err = env_step(kind, state, a, grid, envp, rng_env)
        roll_s[t] = feat[0]
        roll_a[t] = a
        roll_logp[t] = logits[a] - lse
        roll_r[t] = r
        roll_v[t] = value
        roll_done[t] = term or trunc
        roll_nv[t] = 0.0
        env_features(kind, state, grid, feat[0])
        if trunc:
            roll_nv[t] = mlp_forward_idx(vnet, v_sizes, act, feat, cache_v1)[0, 0]
        total += r
        length += 1
        t += 1
        if term or trunc:
            out_reward[ep] = total
            out_length[ep] = length
            out_loss[ep] = last_loss
            ep += 1
            total = 0.0
            length = 0
            env_reset(kind, state, grid, envp, rng_env)
            env_features(kind, state, grid, feat[0])
        if t < n_steps:
            continue
        if not roll_done[t - 1]:
            roll_nv[t - 1] = mlp_forward_idx(vnet, v_sizes, act, feat, cache_v1)[0, 0]
        nstep_targets(roll_r, roll_v, roll_nv, roll_done, t, gamma, n_return, adv, ret)
        if normalize_adv and t > 1:
            mu = adv[:t].mean()
            sd = adv[:t].std()
            for i in range(t):
                adv[i] = (adv[i] - mu) / (sd + 1e-8)
        if algo == ALGO_A2C:
            loss, _, _, _ = a2c_loss_grad(pi, pi_sizes, vnet, v_sizes, act, roll_s[:t], roll_a[:t],
                                          adv[:t], ret[:t], ent_coef, vf_coef,
                                          np.zeros(cache_size(pi_sizes, t)),
                                          np.zeros(cache_size(v_sizes, t)), grad_pi, grad_v)
            if not np.isfinite(loss):
                out_loss[min(ep, episodes - 1)] = loss
                return min(ep, episodes - 1) + 1
            clip_grad_norm(grad_pi, max_grad_norm)
            clip_grad_norm(grad_v, max_grad_norm)
            adam_t[0] += 1
            adam_step(pi, grad_pi, pi_m, pi_v, adam_t[0], lr, 0.9, 0.999, 1e-8)
            adam_step(vnet, grad_v, v_m, v_v, adam_t[0], lr, 0.9, 0.999, 1e-8)
            last_loss = loss
        else:
            for epoch in range(n_epochs):
                for i in range(t - 1, 0, -1):
                    k = rng_below(rng_shuffle, i + 1)
                    tmp = perm[i]
                    perm[i] = perm[k]
                    perm[k] = tmp
                for start in range(0, t, minibatch):
                    stop = min(start + minibatch, t)
                    mb = stop - start
                    mb_s = np.zeros((mb, n_feat), dtype=np.int64)
                    mb_a = np.zeros(mb, dtype=np.int64)
                    mb_lp = np.zeros(mb)
                    mb_adv = np.zeros(mb)
                    mb_ret = np.zeros(mb)
                    for i in range(mb):
                        k = perm[start + i]
                        mb_s[i] = roll_s[k]
                        mb_a[i] = roll_a[k]
                        mb_lp[i] = roll_logp[k]
                        mb_adv[i] = adv[k]
                        mb_ret[i] = ret[k]
                    loss, _, _, _ = ppo_loss_grad(pi, pi_sizes, vnet, v_sizes, act, mb_s, mb_a,
                                                  mb_lp, mb_adv, mb_ret, clip_eps, ent_coef,
                                                  vf_coef, np.zeros(cache_size(pi_sizes, mb)),
                                                  np.zeros(cache_size(v_sizes, mb)),
                                                  grad_pi, grad_v)
                    if not np.isfinite(loss):
                        out_loss[min(ep, episodes - 1)] = loss
                        return min(ep, episodes - 1) + 1
                    clip_grad_norm(grad_pi, max_grad_norm)
                    clip_grad_norm(grad_v, max_grad_norm)
                    adam_t[0] += 1
                    adam_step(pi, grad_pi, pi_m, pi_v, adam_t[0], lr, 0.9, 0.999, 1e-8)
                    adam_step(vnet, grad_v, v_m, v_v, adam_t[0], lr, 0.9, 0.999, 1e-8)
                    last_loss = loss
        t = 0
    return 0


@kernel
def rollout_loop(kind, grid, envp, n_feat, sizes, act, params, policy, episodes, rng_env,
                 rng_act, out_reward, out_length):
    """Evaluation episodes: greedy argmax, uniform random, or sampled softmax actions."""
    state = np.zeros(STATE_SIZE, dtype=np.int64)
    feat = np.zeros((1, n_feat), dtype=np.int64)
    n_act = sizes[sizes.shape[0] - 1]
    cache1 = np.zeros(cache_size(sizes, 1))
    p = np.zeros(n_act)
    for ep in range(episodes):
        env_reset(kind, state, grid, envp, rng_env)
        total = 0.0
        length = 0
        while True:
            if policy == POLICY_RANDOM:
                a = rng_below(rng_act, n_act)
            else:
                env_features(kind, state, grid, feat[0])
                out = mlp_forward_idx(params, sizes, act, feat, cache1)[0]
                if policy == POLICY_GREEDY:
                    a = argmax_row(out)
                else:
                    softmax_row(out, p)
                    a = sample_from(p, rng_act)
            r, term, trunc, err = env_step(kind, state, a, grid, envp, rng_env)
            total += r
            length += 1
            if term or trunc:
                break
        out_reward[ep] = total
        out_length[ep] = length
