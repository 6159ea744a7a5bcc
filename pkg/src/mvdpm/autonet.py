"""Small tanh MLPs F(t, w) with exact input jets, their parameter adjoint, and Adam.

The forward pass carries four channels per neuron: the value and its
sensitivities d/dt, d/dw and d2/dw2 with respect to the two inputs. For an
affine layer all four channels are multiplied by the same weight matrix (the
bias only enters the value channel). For a tanh layer, with h = tanh(a),
s = 1 - h^2 and s' = -2 h s::

    h_t = s a_t,   h_w = s a_w,   h_ww = s a_ww + s' a_w^2

``backprop`` is the hand-written reverse pass of that augmented forward
pass, so it returns the parameter gradient of any linear combination of the
four jet components.

Parameters of a network are one flat vector: for each layer the weight
matrix (n_out x n_in, row-major) followed by the bias vector. ``MlpBank``
holds K networks of identical shape as a (K, n_params) array and evaluates
them together; ``Mlp`` is the single-network view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from mvdpm.errors import InvalidArgument, NumericalFailure
from mvdpm.noise import row_rng


class Jet(NamedTuple):
    f: np.ndarray
    f_t: np.ndarray
    f_w: np.ndarray
    f_ww: np.ndarray


def _check_sizes(layer_sizes) -> tuple:
    sizes = tuple(int(n) for n in layer_sizes)
    if len(sizes) < 2:
        raise InvalidArgument("layer_sizes needs at least an input and an output width")
    if sizes[0] != 2 or sizes[-1] != 1:
        raise InvalidArgument(f"expected input width 2 and output width 1, got {sizes}")
    if any(n < 1 for n in sizes):
        raise InvalidArgument("layer widths must be positive")
    return sizes


def param_count(layer_sizes) -> int:
    sizes = tuple(layer_sizes)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def glorot_params(layer_sizes, rng: np.random.Generator) -> np.ndarray:
    chunks = []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        chunks.append(rng.uniform(-limit, limit, size=n_in * n_out))
        chunks.append(np.zeros(n_out))
    return np.concatenate(chunks)


def _layers(sizes, theta):
    k = theta.shape[0]
    out, i = [], 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weight = theta[:, i:i + n_in * n_out].reshape(k, n_out, n_in)
        i += n_in * n_out
        bias = theta[:, i:i + n_out]
        i += n_out
        out.append((weight, bias))
    return out


def _affine(z, weight):
    # z: (K, 4, P, n_in), weight: (K, n_out, n_in) -> (K, 4, P, n_out)
    k, c, p, n_in = z.shape
    a = np.matmul(z.reshape(k, c * p, n_in), weight.transpose(0, 2, 1))
    return a.reshape(k, c, p, weight.shape[1])


def _forward(sizes, theta, t, w):
    k, p = t.shape
    z = np.zeros((k, 4, p, 2))
    z[:, 0, :, 0] = t
    z[:, 0, :, 1] = w
    z[:, 1, :, 0] = 1.0
    z[:, 2, :, 1] = 1.0
    layers = _layers(sizes, theta)
    cache = []
    for depth, (weight, bias) in enumerate(layers):
        a = _affine(z, weight)
        a[:, 0] += bias[:, None, :]
        if depth == len(layers) - 1:
            cache.append((z, None))
            z = a
            break
        h = np.tanh(a[:, 0])
        s = 1.0 - h * h
        sp = -2.0 * h * s
        nxt = np.empty_like(a)
        nxt[:, 0] = h
        nxt[:, 1] = s * a[:, 1]
        nxt[:, 2] = s * a[:, 2]
        nxt[:, 3] = s * a[:, 3] + sp * a[:, 2] ** 2
        cache.append((z, (a, h, s, sp)))
        z = nxt
    out = z[..., 0]  # (K, 4, P)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite value in network jet")
    return out, cache


def _backward(sizes, theta, cache, cot):
    # cot: (K, 4, P) cotangents on (f, f_t, f_w, f_ww)
    layers = _layers(sizes, theta)
    k = theta.shape[0]
    grads = []
    abar = cot[..., None]
    for depth in range(len(layers) - 1, -1, -1):
        weight, _ = layers[depth]
        z, _ = cache[depth]
        _, c, p, n_in = z.shape
        n_out = weight.shape[1]
        flat_abar = abar.reshape(k, c * p, n_out)
        g_w = np.matmul(flat_abar.transpose(0, 2, 1), z.reshape(k, c * p, n_in))
        g_b = abar[:, 0].sum(axis=1)
        grads.append((g_w, g_b))
        if depth == 0:
            break
        hbar = np.matmul(flat_abar, weight).reshape(k, c, p, n_in)
        a, h, s, sp = cache[depth - 1][1]
        spp = -2.0 * s * s + 4.0 * h * h * s
        abar = np.empty_like(hbar)
        abar[:, 1] = hbar[:, 1] * s
        abar[:, 2] = hbar[:, 2] * s + 2.0 * hbar[:, 3] * sp * a[:, 2]
        abar[:, 3] = hbar[:, 3] * s
        abar[:, 0] = (hbar[:, 0] * s + hbar[:, 1] * sp * a[:, 1] + hbar[:, 2] * sp * a[:, 2]
                      + hbar[:, 3] * (sp * a[:, 3] + spp * a[:, 2] ** 2))
    grads.reverse()
    flat = [part for g_w, g_b in grads for part in (g_w.reshape(k, -1), g_b)]
    return np.concatenate(flat, axis=1)


def _as_points(k, t, w):
    t, w = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(w, dtype=float))
    shape = t.shape
    if t.ndim == 0 or (k > 1 and t.ndim == 1):
        t, w = np.broadcast_to(t.reshape(1, -1), (k, t.size)), np.broadcast_to(w.reshape(1, -1), (k, w.size))
    else:
        t, w = t.reshape(k, -1), w.reshape(k, -1)
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
        raise InvalidArgument("network inputs must be finite")
    return t, w, shape


def _cotangent_array(cotangent, shape):
    parts = [np.broadcast_to(np.asarray(c, dtype=float), shape) for c in cotangent]
    if len(parts) != 4:
        raise InvalidArgument("cotangent must have four components (c_f, c_t, c_w, c_ww)")
    return np.stack(parts, axis=1)


@dataclass
class MlpBank:
    """K tanh networks of identical architecture, evaluated together."""

    layer_sizes: tuple
    theta: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.layer_sizes = _check_sizes(self.layer_sizes)
        self.theta = np.array(self.theta, dtype=float, ndmin=2)
        if self.theta.shape[1] != param_count(self.layer_sizes):
            raise InvalidArgument("parameter vector does not match layer_sizes")

    @classmethod
    def init(cls, layer_sizes, seed: int, count: int) -> MlpBank:
        """Glorot-uniform weights and zero biases; net ``k`` uses stream ``(seed, k)``."""
        sizes = _check_sizes(layer_sizes)
        theta = np.stack([glorot_params(sizes, row_rng(seed, k)) for k in range(count)])
        return cls(sizes, theta, seed)

    @property
    def count(self) -> int:
        return self.theta.shape[0]

    def jet(self, t, w) -> Jet:
        """Jets at points ``t, w`` of shape (K, P), or (P,) shared by every net."""
        t, w, _ = _as_points(self.count, t, w)
        out, _ = _forward(self.layer_sizes, self.theta, t, w)
        return Jet(out[:, 0], out[:, 1], out[:, 2], out[:, 3])

    def jet_and_pullback(self, t, w):
        """Jets plus a function mapping cotangents to parameter gradients."""
        t, w, _ = _as_points(self.count, t, w)
        out, cache = _forward(self.layer_sizes, self.theta, t, w)

        def pullback(cotangent):
            return _backward(self.layer_sizes, self.theta, cache,
                             _cotangent_array(cotangent, t.shape))

        return Jet(out[:, 0], out[:, 1], out[:, 2], out[:, 3]), pullback

    def backprop(self, t, w, cotangent) -> np.ndarray:
        return self.jet_and_pullback(t, w)[1](cotangent)

    def net(self, k: int) -> Mlp:
        return Mlp(self.layer_sizes, self.theta[k].copy(), self.seed)


@dataclass
class Mlp:
    """A single tanh network F(t, w) with an affine output layer."""

    layer_sizes: tuple
    theta: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.layer_sizes = _check_sizes(self.layer_sizes)
        self.theta = np.array(self.theta, dtype=float).reshape(-1)
        if self.theta.size != param_count(self.layer_sizes):
            raise InvalidArgument("parameter vector does not match layer_sizes")

    def jet(self, t, w) -> Jet:
        t, w, shape = _as_points(1, t, w)
        out, _ = _forward(self.layer_sizes, self.theta.reshape(1, -1), t, w)
        return Jet(*(out[0, c].reshape(shape) for c in range(4)))

    def __call__(self, t, w):
        return self.jet(t, w).f

    def backprop(self, t, w, cotangent) -> np.ndarray:
        t, w, shape = _as_points(1, t, w)
        _, cache = _forward(self.layer_sizes, self.theta.reshape(1, -1), t, w)
        cot = _cotangent_array([np.reshape(c, -1) if np.ndim(c) else c for c in cotangent], t.shape)
        return _backward(self.layer_sizes, self.theta.reshape(1, -1), cache, cot)[0]

    @property
    def weights(self):
        return [(wt[0], b[0]) for wt, b in _layers(self.layer_sizes, self.theta.reshape(1, -1))]


def init(layer_sizes, seed: int) -> Mlp:
    """Single network with Glorot-uniform weights and zero biases."""
    if not layer_sizes:
        raise InvalidArgument("layer_sizes must not be empty")
    sizes = _check_sizes(layer_sizes)
    return Mlp(sizes, glorot_params(sizes, row_rng(seed, 0)), seed)


def jet(net: Mlp, t, w) -> Jet:
    return net.jet(t, w)


def backprop(net: Mlp, t, w, cotangent) -> np.ndarray:
    """Gradient over theta of sum(c_f f + c_t f_t + c_w f_w + c_ww f_ww) over the points."""
    return net.backprop(t, w, cotangent)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, theta, **hyper) -> AdamState:
        return cls(np.zeros_like(theta), np.zeros_like(theta), **hyper)


def adam_step(state: AdamState, net, grad, lr: float):
    """One bias-corrected Adam update of ``net.theta`` in place.

    Works for ``Mlp`` and ``MlpBank`` alike; for a bank every row behaves as an
    independent optimiser because the update is elementwise.
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != net.theta.shape or state.m.shape != net.theta.shape:
        raise InvalidArgument(f"gradient shape {grad.shape} does not match parameters {net.theta.shape}")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    net.theta -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state, net


def save_checkpoint(net, prefix) -> list:
    """Write ``<prefix>.csv`` (one theta row per network) and a JSON sidecar."""
    theta = np.atleast_2d(net.theta)
    csv_path, json_path = f"{prefix}.csv", f"{prefix}.json"
    with open(csv_path, "w") as fh:
        for row in theta:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    with open(json_path, "w") as fh:
        json.dump({"layer_sizes": list(net.layer_sizes), "seed": net.seed,
                   "activation": "tanh", "count": theta.shape[0],
                   "bank": isinstance(net, MlpBank)}, fh, indent=2)
    return [csv_path, json_path]


def load_checkpoint(prefix):
    with open(f"{prefix}.json") as fh:
        meta = json.load(fh)
    theta = np.loadtxt(f"{prefix}.csv", delimiter=",", ndmin=2)
    if meta.get("activation", "tanh") != "tanh":
        raise InvalidArgument("only tanh checkpoints are supported")
    if not meta.get("bank", False):
        return Mlp(meta["layer_sizes"], theta[0], meta["seed"])
    return MlpBank(meta["layer_sizes"], theta, meta["seed"])
