"""DQN, PPO and A2C objectives with their gradients w.r.t. network outputs.

Each ``*_loss_grad`` kernel runs the forward pass(es), forms the loss, and
backpropagates into caller-provided gradient vectors. Losses are means over
the batch and are *minimised*; the PPO and A2C policy terms are therefore the
negated surrogate objectives.
"""
import numpy as np

from .._jit import kernel
from ..nn import mlp_backward_idx, mlp_forward_idx


@kernel
def dqn_target(reward, gamma, max_next_q, terminal):
    if terminal:
        return reward
    return reward + gamma * max_next_q


@kernel
def ppo_objective(ratio, advantage, clip_epsilon):
    clipped = min(max(ratio, 1.0 - clip_epsilon), 1.0 + clip_epsilon)
    return min(ratio * advantage, clipped * advantage)


@kernel
def a2c_advantage(reward, gamma, v_next, v_current, terminal):
    if terminal:
        return reward - v_current
    return reward + gamma * v_next - v_current


@kernel
def softmax_row(logits, out):
    m = logits[0]
    for j in range(1, logits.shape[0]):
        if logits[j] > m:
            m = logits[j]
    s = 0.0
    for j in range(logits.shape[0]):
        out[j] = np.exp(logits[j] - m)
        s += out[j]
    for j in range(logits.shape[0]):
        out[j] /= s
    return m + np.log(s)


@kernel
def dqn_loss_grad(online, target, sizes, act, s_idx, actions, rewards, s2_idx, terminal, gamma,
                  cache_on, cache_tg, grad):
    """Mean squared TD error; targets come from ``target`` and carry no gradient."""
    batch = s_idx.shape[0]
    q = mlp_forward_idx(online, sizes, act, s_idx, cache_on)
    qn = mlp_forward_idx(target, sizes, act, s2_idx, cache_tg)
    gout = np.zeros(q.shape)
    loss = 0.0
    for i in range(batch):
        best = qn[i, 0]
        for j in range(1, qn.shape[1]):
            if qn[i, j] > best:
                best = qn[i, j]
        y = dqn_target(rewards[i], gamma, best, terminal[i])
        d = q[i, actions[i]] - y
        loss += d * d
        gout[i, actions[i]] = 2.0 * d / batch
    mlp_backward_idx(online, sizes, act, s_idx, cache_on, gout, grad)
    return loss / batch


@kernel
def _value_head(v_params, v_sizes, act, idx, returns, vf_coef, cache_v, grad_v):
    batch = idx.shape[0]
    v = mlp_forward_idx(v_params, v_sizes, act, idx, cache_v)
    gv = np.zeros(v.shape)
    v_loss = 0.0
    for i in range(batch):
        d = v[i, 0] - returns[i]
        v_loss += d * d
        gv[i, 0] = vf_coef * 2.0 * d / batch
    mlp_backward_idx(v_params, v_sizes, act, idx, cache_v, gv, grad_v)
    return v_loss / batch


@kernel
def ppo_loss_grad(pi_params, pi_sizes, v_params, v_sizes, act, idx, actions, old_logp,
                  advantages, returns, clip_epsilon, ent_coef, vf_coef,
                  cache_pi, cache_v, grad_pi, grad_v):
    """Returns (total, policy_loss, value_loss, entropy)."""
    batch = idx.shape[0]
    logits = mlp_forward_idx(pi_params, pi_sizes, act, idx, cache_pi)
    n_act = logits.shape[1]
    gout = np.zeros(logits.shape)
    p = np.zeros(n_act)
    pg_loss = 0.0
    ent_sum = 0.0
    for i in range(batch):
        lse = softmax_row(logits[i], p)
        a = actions[i]
        logp = logits[i, a] - lse
        ratio = np.exp(logp - old_logp[i])
        adv = advantages[i]
        surr1 = ratio * adv
        obj = ppo_objective(ratio, adv, clip_epsilon)
        pg_loss -= obj
        h = 0.0
        for j in range(n_act):
            if p[j] > 0.0:
                h -= p[j] * np.log(p[j])
        ent_sum += h
        # the min picks the unclipped branch exactly when it equals the objective
        active = surr1 == obj
        for j in range(n_act):
            ind = 1.0 if j == a else 0.0
            g = 0.0
            if active:
                g = -ratio * adv * (ind - p[j])
            if p[j] > 0.0:
                g += ent_coef * p[j] * (np.log(p[j]) + h)
            gout[i, j] = g / batch
    mlp_backward_idx(pi_params, pi_sizes, act, idx, cache_pi, gout, grad_pi)
    v_loss = _value_head(v_params, v_sizes, act, idx, returns, vf_coef, cache_v, grad_v)
    pg_loss /= batch
    entropy = ent_sum / batch
    return pg_loss + vf_coef * v_loss - ent_coef * entropy, pg_loss, v_loss, entropy


@kernel
def a2c_loss_grad(pi_params, pi_sizes, v_params, v_sizes, act, idx, actions, advantages, returns,
                  ent_coef, vf_coef, cache_pi, cache_v, grad_pi, grad_v):
    """-mean(log pi(a|s) * A) + vf_coef * value MSE - ent_coef * entropy."""
    batch = idx.shape[0]
    logits = mlp_forward_idx(pi_params, pi_sizes, act, idx, cache_pi)
    n_act = logits.shape[1]
    gout = np.zeros(logits.shape)
    p = np.zeros(n_act)
    pg_loss = 0.0
    ent_sum = 0.0
    for i in range(batch):
        lse = softmax_row(logits[i], p)
        a = actions[i]
        adv = advantages[i]
        pg_loss -= (logits[i, a] - lse) * adv
        h = 0.0
        for j in range(n_act):
            if p[j] > 0.0:
                h -= p[j] * np.log(p[j])
        ent_sum += h
        for j in range(n_act):
            ind = 1.0 if j == a else 0.0
            g = -adv * (ind - p[j])
            if p[j] > 0.0:
                g += ent_coef * p[j] * (np.log(p[j]) + h)
            gout[i, j] = g / batch
    mlp_backward_idx(pi_params, pi_sizes, act, idx, cache_pi, gout, grad_pi)
    v_loss = _value_head(v_params, v_sizes, act, idx, returns, vf_coef, cache_v, grad_v)
    pg_loss /= batch
    entropy = ent_sum / batch
    return pg_loss + vf_coef * v_loss - ent_coef * entropy, pg_loss, v_loss, entropy


def dqn_loss(online, target, batch, gamma: float):
    """Python entry point: ``batch`` is (states, actions, rewards, next_states, terminal).

    States are one-hot position rows as used by ``mlp_forward_idx``. Returns
    the loss and the gradient as an ``MlpParams`` shaped like ``online``.
    """
    from ..core import DomainError
    from ..nn import MlpParams, cache_size

    s, a, r, s2, term = batch
    s = np.ascontiguousarray(np.atleast_2d(np.asarray(s, dtype=np.int64)))
    s2 = np.ascontiguousarray(np.atleast_2d(np.asarray(s2, dtype=np.int64)))
    if s.shape[0] == 0 or len(a) == 0:
        raise DomainError("dqn_loss needs a non-empty batch")
    n = s.shape[0]
    grad = np.zeros_like(online.flat)
    loss = dqn_loss_grad(online.flat, target.flat, online.sizes, online.act, s,
                         np.asarray(a, dtype=np.int64), np.asarray(r, dtype=np.float64), s2,
                         np.asarray(term, dtype=np.bool_), float(gamma),
                         np.zeros(cache_size(online.sizes, n)),
                         np.zeros(cache_size(online.sizes, n)), grad)
    return float(loss), MlpParams(online.sizes, online.activation, grad)
