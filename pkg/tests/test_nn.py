import numpy as np
import pytest

from parl.baselines.losses import (a2c_advantage, a2c_loss_grad, dqn_loss,
                                   dqn_target, ppo_loss_grad, ppo_objective)
from parl.core import DomainError
from parl.nn import (Adam, MlpParams, cache_size, clip_grad_norm, mlp_backward, mlp_forward,
                     mlp_forward_onehot, param_count)
from parl.rng import SeededRng

N_INSTANCES = 20
TOL = 1e-4


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def tiny_net(seed, sizes, activation=None, scale=1.0):
    rng = np.random.default_rng(seed)
    act = activation or ("tanh" if seed % 2 else "relu")
    flat = rng.normal(0, scale, param_count(np.array(sizes)))
    return MlpParams(np.array(sizes), act, flat)


def one_hot_batch(rng, batch, n_in, k=2):
    # k distinct active positions per row, as in concatenated one-hots
    return np.array([np.sort(rng.choice(n_in, k, replace=False)) for _ in range(batch)])


# ---------------------------------------------------------------- closed forms

def test_dqn_target_cases():
    assert dqn_target(1.0, 0.99, 2.0, False) == 2.98
    assert dqn_target(-10.0, 0.99, 5.0, True) == -10.0
    assert dqn_target(0.0, 0.0, 7.0, False) == 0.0


def test_ppo_objective_cases():
    assert ppo_objective(1.3, 1.0, 0.2) == 1.2
    assert ppo_objective(0.5, -1.0, 0.2) == -0.8
    for adv in (-3.5, -1.0, 0.0, 0.25, 7.0):
        assert ppo_objective(1.0, adv, 0.2) == adv


def test_a2c_advantage_cases():
    assert a2c_advantage(0.0, 0.9, 1.0, 0.5, False) == 0.4
    for v_next in (-5.0, 0.0, 3.0):
        assert a2c_advantage(1.0, 0.9, v_next, 0.0, True) == 1.0
    for v in (-2.0, 0.0, 1.5):
        assert a2c_advantage(0.0, 1.0, v, v, False) == 0.0


@pytest.mark.parametrize("ratio,adv", [(1.5, 1.0), (1.21, 2.0), (0.5, -1.0), (0.79, -0.3)])
def test_ppo_clip_zero_slope(ratio, adv):
    h = 1e-6
    slope = (ppo_objective(ratio + h, adv, 0.2) - ppo_objective(ratio - h, adv, 0.2)) / (2 * h)
    assert slope == 0.0


@pytest.mark.parametrize("ratio,adv", [(1.1, 1.0), (1.5, -1.0), (0.5, 1.0), (0.9, -2.0)])
def test_ppo_unclipped_slope(ratio, adv):
    h = 1e-6
    slope = (ppo_objective(ratio + h, adv, 0.2) - ppo_objective(ratio - h, adv, 0.2)) / (2 * h)
    assert slope == pytest.approx(adv, rel=1e-6)


# ---------------------------------------------------------------- network

def test_forward_trivial_cases():
    zero = MlpParams(np.array([3, 5, 2]), "relu", np.zeros(param_count(np.array([3, 5, 2]))))
    out, _ = mlp_forward(zero, [1.0, -2.0, 0.5])
    assert np.array_equal(out, np.zeros(2))
    ident = MlpParams.from_layers([(np.eye(4), np.zeros(4))])
    x = np.array([0.3, -1.2, 4.0, 0.0])
    out, _ = mlp_forward(ident, x)
    assert np.array_equal(out, x)
    net = tiny_net(3, [4, 8, 4])
    assert np.array_equal(mlp_forward(net, x)[0], mlp_forward(net, x)[0])
    with pytest.raises(DomainError):
        mlp_forward(net, np.ones(5))


def test_onehot_matches_dense():
    net = tiny_net(5, [7, 6, 3], "tanh")
    idx = np.array([[0, 4], [2, 6], [1, 3]])
    dense = np.zeros((3, 7))
    for i, row in enumerate(idx):
        dense[i, row] = 1.0
    a, ca = mlp_forward_onehot(net, idx)
    b, cb = mlp_forward(net, dense)
    assert np.allclose(a, b, atol=1e-14)
    g = np.random.default_rng(0).normal(size=(3, 3))
    assert np.allclose(mlp_backward(net, ca, g).flat, mlp_backward(net, cb, g).flat, atol=1e-13)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_backward_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    net = tiny_net(seed, [4, 8, 4])
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    _, cache = mlp_forward(net, x)
    analytic = mlp_backward(net, cache, w).flat
    numeric = fd_grad(lambda: float((mlp_forward(net, x)[0] * w).sum()), net.flat)
    assert rel_err(analytic, numeric) < TOL


def test_backward_zero_and_linearity():
    net = tiny_net(1, [4, 8, 4])
    x = np.random.default_rng(2).normal(size=(2, 4))
    _, cache = mlp_forward(net, x)
    assert not mlp_backward(net, cache, np.zeros((2, 4))).flat.any()
    g = np.random.default_rng(3).normal(size=(2, 4))
    base = mlp_backward(net, cache, g).flat
    assert np.allclose(mlp_backward(net, cache, 2.5 * g).flat, 2.5 * base, rtol=1e-13)
    with pytest.raises(DomainError):
        mlp_backward(net, cache, np.zeros((2, 3)))


def test_params_invariants_and_roundtrip():
    net = tiny_net(4, [5, 3, 2])
    assert MlpParams.from_dict(net.to_dict()).flat.tolist() == net.flat.tolist()
    with pytest.raises(DomainError):
        MlpParams(np.array([5, 3, 2]), "relu", np.zeros(3))
    with pytest.raises(DomainError):
        MlpParams(np.array([5, 3, 2]), "sigmoid", net.flat)
    bad = net.flat.copy()
    bad[0] = np.nan
    with pytest.raises(DomainError):
        MlpParams(np.array([5, 3, 2]), "relu", bad)
    w, b = net.layers[1]
    assert w.shape == (3, 2) and b.shape == (2,)


def test_init_is_seeded():
    a = MlpParams.init([16, 64, 64, 4], "relu", SeededRng(1))
    b = MlpParams.init([16, 64, 64, 4], "relu", SeededRng(1))
    assert np.array_equal(a.flat, b.flat)
    w, bias = a.layers[0]
    assert np.abs(w).max() <= np.sqrt(6 / 80) and not bias.any()


# ---------------------------------------------------------------- losses

def _dqn_case(seed):
    rng = np.random.default_rng(seed)
    sizes = np.array([6, 5, 3])
    online = tiny_net(seed, sizes, scale=0.7)
    target = tiny_net(seed + 1000, sizes, scale=0.7)
    B = 5
    s, s2 = one_hot_batch(rng, B, 6), one_hot_batch(rng, B, 6)
    a = rng.integers(0, 3, B)
    r = rng.normal(size=B)
    term = rng.random(B) < 0.3
    return online, target, (s, a, r, s2, term)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_dqn_loss_gradient(seed):
    online, target, batch = _dqn_case(seed)
    loss, grad = dqn_loss(online, target, batch, 0.9)
    numeric = fd_grad(lambda: dqn_loss(online, target, batch, 0.9)[0], online.flat)
    assert loss >= 0
    assert rel_err(grad.flat, numeric) < TOL
    # no gradient leaks into the target network's parameters
    t_before = target.flat.copy()
    dqn_loss(online, target, batch, 0.9)
    assert np.array_equal(target.flat, t_before)


def test_dqn_loss_hand_value_and_zero():
    # single linear layer: Q(s) = W[s] + b
    online = MlpParams.from_layers([(np.array([[1.0, 2.0], [0.5, -1.0]]), np.array([0.0, 0.1]))])
    target = MlpParams.from_layers([(np.array([[3.0, 4.0], [0.0, 1.0]]), np.array([0.0, 0.0]))])
    batch = ([[0]], [1], [0.5], [[1]], [False])
    loss, grad = dqn_loss(online, target, batch, 0.9)
    # Q = 2.1, target = 0.5 + 0.9 * max(0, 1) = 1.4
    assert loss == pytest.approx((2.1 - 1.4) ** 2, abs=1e-15)
    assert grad.flat.tolist() == pytest.approx([0, 1.4, 0, 0, 0, 1.4])
    # online already at its targets
    online2 = MlpParams.from_layers([(np.array([[0.0, 1.4], [0.0, 0.0]]), np.array([0.0, 0.0]))])
    loss, grad = dqn_loss(online2, target, batch, 0.9)
    assert loss == 0.0 and not grad.flat.any()
    with pytest.raises(DomainError):
        dqn_loss(online, target, ([], [], [], [], []), 0.9)


def test_dqn_loss_after_target_sync():
    online, _, batch = _dqn_case(7)
    target = online.copy()
    s, a, r, s2, term = batch
    q, _ = mlp_forward_onehot(online, s)
    qn, _ = mlp_forward_onehot(online, s2)
    y = np.where(term, r, r + 0.95 * qn.max(axis=1))
    direct = float(np.mean((q[np.arange(len(a)), a] - y) ** 2))
    assert dqn_loss(online, target, batch, 0.95)[0] == pytest.approx(direct, rel=1e-12)


def _ac_case(seed, clip_heavy=False):
    rng = np.random.default_rng(seed)
    pi = tiny_net(seed, [6, 5, 3], scale=0.8)
    v = tiny_net(seed + 500, [6, 4, 1], scale=0.8)
    B = 6
    idx = one_hot_batch(rng, B, 6)
    acts = rng.integers(0, 3, B)
    old_logp = np.log(rng.uniform(0.15, 0.6, B))
    if clip_heavy:
        old_logp -= 1.0
    adv = rng.normal(size=B)
    ret = rng.normal(size=B)
    return pi, v, idx, acts, old_logp, adv, ret


def _ppo(pi, v, idx, acts, old_logp, adv, ret, ent, vf=0.5):
    n = idx.shape[0]
    gp, gv = np.zeros_like(pi.flat), np.zeros_like(v.flat)
    out = ppo_loss_grad(pi.flat, pi.sizes, v.flat, v.sizes, pi.act, idx, acts, old_logp, adv, ret,
                        0.2, ent, vf, np.zeros(cache_size(pi.sizes, n)),
                        np.zeros(cache_size(v.sizes, n)), gp, gv)
    return out[0], gp, gv


def _a2c(pi, v, idx, acts, adv, ret, ent, vf=0.5):
    n = idx.shape[0]
    gp, gv = np.zeros_like(pi.flat), np.zeros_like(v.flat)
    out = a2c_loss_grad(pi.flat, pi.sizes, v.flat, v.sizes, pi.act, idx, acts, adv, ret, ent, vf,
                        np.zeros(cache_size(pi.sizes, n)), np.zeros(cache_size(v.sizes, n)), gp, gv)
    return out[0], gp, gv


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_ppo_loss_gradient(seed):
    case = _ac_case(seed, clip_heavy=seed % 3 == 0)
    pi, v = case[0], case[1]
    ent = 0.01 * (seed % 4)
    _, gp, gv = _ppo(*case, ent)
    f = lambda: _ppo(*case, ent)[0]
    assert rel_err(gp, fd_grad(f, pi.flat)) < TOL
    assert rel_err(gv, fd_grad(f, v.flat)) < TOL


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_a2c_loss_gradient(seed):
    pi, v, idx, acts, _, adv, ret = _ac_case(seed)
    ent = 0.01 * (seed % 4)
    _, gp, gv = _a2c(pi, v, idx, acts, adv, ret, ent)
    f = lambda: _a2c(pi, v, idx, acts, adv, ret, ent)[0]
    assert rel_err(gp, fd_grad(f, pi.flat)) < TOL
    assert rel_err(gv, fd_grad(f, v.flat)) < TOL


def test_ppo_clipped_samples_carry_no_policy_gradient():
    pi, v, idx, acts, _, _, ret = _ac_case(3)
    logits, _ = mlp_forward_onehot(pi, idx)
    logp = logits[np.arange(len(acts)), acts] - np.log(np.exp(logits).sum(axis=1))
    # ratio 1.5 with positive advantage, ratio 0.5 with negative advantage
    adv = np.array([1.0, -1.0, 2.0, -0.5, 1.0, -2.0])
    old = logp - np.log(np.where(adv > 0, 1.5, 0.5))
    _, gp, _ = _ppo(pi, v, idx, acts, old, adv, ret, ent=0.0)
    assert not gp.any()
    _, gp, _ = _ppo(pi, v, idx, acts, logp, adv, ret, ent=0.0)  # ratio 1: unclipped
    assert np.abs(gp).max() > 0


# ---------------------------------------------------------------- optimiser

def test_adam_two_step_trace():
    p = np.array([1.0, -2.0])
    opt = Adam(2, lr=0.1)
    opt.step(p, np.array([0.1, -0.2]))
    assert p.tolist() == pytest.approx([0.900000009999999, -1.9000000049999997], abs=1e-15)
    opt.step(p, np.array([0.3, 0.0]))
    assert p.tolist() == pytest.approx([0.8082219022055899, -1.8329941843255584], abs=1e-14)
    assert opt.t == 2


def test_clip_grad_norm():
    g = np.array([3.0, 4.0])
    assert clip_grad_norm(g, 10.0) == 5.0 and g.tolist() == [3.0, 4.0]
    assert clip_grad_norm(g, 1.0) == 5.0
    assert np.linalg.norm(g) == pytest.approx(1.0, rel=1e-5)
    g = np.array([3.0, 4.0])
    clip_grad_norm(g, 0.0)
    assert g.tolist() == [3.0, 4.0]
