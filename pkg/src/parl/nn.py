"""Dense networks on a flat parameter vector, with hand-written backprop and Adam.

Parameters of layer ``l`` are stored as the row-major ``(n_in, n_out)``
weight matrix followed by the bias vector, layer after layer. Hidden layers
use ReLU or tanh; the head is linear. A forward pass leaves every layer's
post-activation output in a flat ``cache`` of length ``B * sum(sizes[1:])``,
which is all the backward pass needs (both activations have derivatives
expressible through their outputs).

Inputs come either as a dense ``(B, n_in)`` matrix or as ``(B, K)`` arrays
of active one-hot positions, in which case the first layer is a row gather.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._jit import kernel
from .core import DomainError
from .rng import SeededRng, rng_uniform

RELU = 0
TANH = 1
ACTIVATIONS = {"relu": RELU, "tanh": TANH}


@kernel
def param_count(sizes):
    n = 0
    for l in range(sizes.shape[0] - 1):
        n += sizes[l] * sizes[l + 1] + sizes[l + 1]
    return n


@kernel
def cache_size(sizes, batch):
    n = 0
    for l in range(1, sizes.shape[0]):
        n += sizes[l]
    return n * batch


@kernel
def _w_offset(sizes, layer):
    off = 0
    for l in range(layer):
        off += sizes[l] * sizes[l + 1] + sizes[l + 1]
    return off


@kernel
def _c_offset(sizes, layer, batch):
    off = 0
    for l in range(1, layer + 1):
        off += sizes[l] * batch
    return off


@kernel
def layer_output(cache, sizes, batch, layer):
    off = _c_offset(sizes, layer, batch)
    n = sizes[layer + 1]
    return cache[off:off + batch * n].reshape((batch, n))


@kernel
def net_output(cache, sizes, batch):
    return layer_output(cache, sizes, batch, sizes.shape[0] - 2)


@kernel
def _finish_layer(Z, b, out, apply_act, act):
    for i in range(Z.shape[0]):
        for j in range(Z.shape[1]):
            z = Z[i, j] + b[j]
            if apply_act:
                if act == RELU:
                    z = z if z > 0.0 else 0.0
                else:
                    z = np.tanh(z)
            out[i, j] = z


@kernel
def _forward_upper(params, sizes, act, cache, batch):
    n_layers = sizes.shape[0] - 1
    for l in range(1, n_layers):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        wo = _w_offset(sizes, l)
        W = params[wo:wo + n_in * n_out].reshape((n_in, n_out))
        b = params[wo + n_in * n_out:wo + n_in * n_out + n_out]
        A = layer_output(cache, sizes, batch, l - 1)
        Z = np.dot(A, W)
        _finish_layer(Z, b, layer_output(cache, sizes, batch, l), l < n_layers - 1, act)


@kernel
def mlp_forward_dense(params, sizes, act, x, cache):
    batch = x.shape[0]
    n_in = sizes[0]
    n_out = sizes[1]
    W = params[0:n_in * n_out].reshape((n_in, n_out))
    b = params[n_in * n_out:n_in * n_out + n_out]
    Z = np.dot(x, W)
    _finish_layer(Z, b, layer_output(cache, sizes, batch, 0), sizes.shape[0] > 2, act)
    _forward_upper(params, sizes, act, cache, batch)
    return net_output(cache, sizes, batch)


@kernel
def mlp_forward_idx(params, sizes, act, idx, cache):
    batch = idx.shape[0]
    n_in = sizes[0]
    n_out = sizes[1]
    W = params[0:n_in * n_out].reshape((n_in, n_out))
    b = params[n_in * n_out:n_in * n_out + n_out]
    Z = np.zeros((batch, n_out))
    for i in range(batch):
        for k in range(idx.shape[1]):
            row = idx[i, k]
            for j in range(n_out):
                Z[i, j] += W[row, j]
    _finish_layer(Z, b, layer_output(cache, sizes, batch, 0), sizes.shape[0] > 2, act)
    _forward_upper(params, sizes, act, cache, batch)
    return net_output(cache, sizes, batch)


@kernel
def _backward_upper(params, sizes, act, cache, gout, grad, batch):
    """Gradients of layers L-1..1; returns the pre-activation delta of layer 0."""
    n_layers = sizes.shape[0] - 1
    delta = gout.copy()
    for l in range(n_layers - 1, 0, -1):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        wo = _w_offset(sizes, l)
        A = layer_output(cache, sizes, batch, l - 1)
        gW = np.dot(A.T, delta)
        g = grad[wo:wo + n_in * n_out].reshape((n_in, n_out))
        g[:, :] = gW
        gb = grad[wo + n_in * n_out:wo + n_in * n_out + n_out]
        for j in range(n_out):
            s = 0.0
            for i in range(batch):
                s += delta[i, j]
            gb[j] = s
        W = params[wo:wo + n_in * n_out].reshape((n_in, n_out))
        dA = np.dot(delta, W.T)
        for i in range(batch):
            for j in range(n_in):
                a = A[i, j]
                if act == RELU:
                    if a <= 0.0:
                        dA[i, j] = 0.0
                else:
                    dA[i, j] *= 1.0 - a * a
        delta = dA
    return delta


@kernel
def _first_bias_grad(delta, grad, offset):
    for j in range(delta.shape[1]):
        s = 0.0
        for i in range(delta.shape[0]):
            s += delta[i, j]
        grad[offset + j] = s


@kernel
def mlp_backward_dense(params, sizes, act, x, cache, gout, grad):
    """Write d(loss)/d(params) into ``grad`` given d(loss)/d(output) ``gout``."""
    batch = x.shape[0]
    delta = _backward_upper(params, sizes, act, cache, gout, grad, batch)
    n_in = sizes[0]
    n_out = sizes[1]
    g = grad[0:n_in * n_out].reshape((n_in, n_out))
    g[:, :] = np.dot(x.T, delta)
    _first_bias_grad(delta, grad, n_in * n_out)


@kernel
def mlp_backward_idx(params, sizes, act, idx, cache, gout, grad):
    batch = idx.shape[0]
    delta = _backward_upper(params, sizes, act, cache, gout, grad, batch)
    n_in = sizes[0]
    n_out = sizes[1]
    g = grad[0:n_in * n_out].reshape((n_in, n_out))
    g[:, :] = 0.0
    for i in range(batch):
        for k in range(idx.shape[1]):
            row = idx[i, k]
            for j in range(n_out):
                g[row, j] += delta[i, j]
    _first_bias_grad(delta, grad, n_in * n_out)


@kernel
def clip_grad_norm(grad, max_norm):
    """Scale ``grad`` in place so its L2 norm is at most ``max_norm`` (<= 0 disables)."""
    norm = np.sqrt(np.dot(grad, grad))
    if max_norm > 0.0 and norm > max_norm:
        grad *= max_norm / (norm + 1e-6)
    return norm


@kernel
def adam_step(params, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam update; ``t`` is the 1-based step number."""
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i in range(params.shape[0]):
        g = grad[i]
        mi = beta1 * m[i] + (1.0 - beta1) * g
        vi = beta2 * v[i] + (1.0 - beta2) * g * g
        # moments of unused weights decay towards subnormals, which are very slow
        if abs(mi) < 1e-150:
            mi = 0.0
        if vi < 1e-150:
            vi = 0.0
        m[i] = mi
        v[i] = vi
        params[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


@kernel
def glorot_init(params, sizes, rng, out_scale):
    n_layers = sizes.shape[0] - 1
    for l in range(n_layers):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        wo = _w_offset(sizes, l)
        limit = np.sqrt(6.0 / (n_in + n_out))
        if l == n_layers - 1:
            limit *= out_scale
        for i in range(n_in * n_out):
            params[wo + i] = (2.0 * rng_uniform(rng) - 1.0) * limit
        for j in range(n_out):
            params[wo + n_in * n_out + j] = 0.0


@dataclass
class MlpParams:
    """Layer sizes, activation and the flat parameter vector."""

    sizes: np.ndarray
    activation: str
    flat: np.ndarray

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.sizes.ndim != 1 or len(self.sizes) < 2 or (self.sizes <= 0).any():
            raise DomainError("sizes must list at least two positive widths")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.flat.shape != (param_count(self.sizes),):
            raise DomainError("parameter vector does not match the layer sizes")
        if not np.isfinite(self.flat).all():
            raise DomainError("parameters must be finite")

    @classmethod
    def init(cls, sizes, activation: str, rng: SeededRng, out_scale: float = 1.0) -> "MlpParams":
        sizes = np.asarray(sizes, dtype=np.int64)
        flat = np.zeros(param_count(sizes))
        glorot_init(flat, sizes, rng.state, out_scale)
        return cls(sizes, activation, flat)

    @classmethod
    def from_layers(cls, layers, activation: str = "relu") -> "MlpParams":
        sizes = [layers[0][0].shape[0]] + [w.shape[1] for w, _ in layers]
        flat = np.concatenate([np.concatenate([np.asarray(w, float).ravel(), np.asarray(b, float)])
                               for w, b in layers])
        return cls(np.array(sizes), activation, flat)

    @property
    def act(self) -> int:
        return ACTIVATIONS[self.activation]

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        off = 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = self.flat[off:off + n_in * n_out].reshape(n_in, n_out)
            off += n_in * n_out
            out.append((w, self.flat[off:off + n_out]))
            off += n_out
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes.copy(), self.activation, self.flat.copy())

    def to_dict(self) -> dict:
        return {"activation": self.activation,
                "layers": [{"shape": [int(w.shape[0]), int(w.shape[1])],
                            "weights": w.ravel().tolist(), "biases": b.tolist()}
                           for w, b in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        layers = [(np.array(l["weights"], dtype=float).reshape(l["shape"]), np.array(l["biases"]))
                  for l in d["layers"]]
        return cls.from_layers(layers, d["activation"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class ForwardCache:
    batch: int
    buffer: np.ndarray
    x: np.ndarray
    sparse: bool


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    """Dense forward pass for a vector ``(n_in,)`` or a batch ``(B, n_in)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.ascontiguousarray(x.reshape(1, -1) if single else x)
    if x2.shape[1] != params.sizes[0]:
        raise DomainError(f"input width {x2.shape[1]} != {params.sizes[0]}")
    buf = np.zeros(cache_size(params.sizes, x2.shape[0]))
    out = mlp_forward_dense(params.flat, params.sizes, params.act, x2, buf).copy()
    return (out[0] if single else out), ForwardCache(x2.shape[0], buf, x2, False)


def mlp_forward_onehot(params: MlpParams, idx) -> tuple[np.ndarray, ForwardCache]:
    idx = np.ascontiguousarray(np.atleast_2d(np.asarray(idx, dtype=np.int64)))
    if idx.size and (idx.min() < 0 or idx.max() >= params.sizes[0]):
        raise DomainError("one-hot position outside the input width")
    buf = np.zeros(cache_size(params.sizes, idx.shape[0]))
    out = mlp_forward_idx(params.flat, params.sizes, params.act, idx, buf).copy()
    return out, ForwardCache(idx.shape[0], buf, idx, True)


def mlp_backward(params: MlpParams, cache: ForwardCache, grad_output) -> MlpParams:
    """Gradient of a scalar loss w.r.t. every parameter, shaped like ``params``."""
    g = np.asarray(grad_output, dtype=np.float64)
    g = np.ascontiguousarray(g.reshape(cache.batch, -1))
    if g.shape[1] != params.sizes[-1]:
        raise DomainError("grad_output width does not match the network output")
    grad = np.zeros_like(params.flat)
    if cache.sparse:
        mlp_backward_idx(params.flat, params.sizes, params.act, cache.x, cache.buffer, g, grad)
    else:
        mlp_backward_dense(params.flat, params.sizes, params.act, cache.x, cache.buffer, g, grad)
    return MlpParams(params.sizes, params.activation, grad)


class Adam:
    """Adam on a flat vector, state kept alongside for the compiled loops."""

    def __init__(self, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        adam_step(params, grad, self.m, self.v, self.t, self.lr, self.beta1, self.beta2, self.eps)
