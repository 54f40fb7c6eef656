"""Small feed-forward networks in plain numpy.

Besides the usual forward/backward pair, a network can carry tangent
directions through the forward pass (forward-mode input JVPs) and
back-propagate through both the primal and the tangent outputs. That is
what the training loss needs: latent velocities are JVPs of the encoder
and the full-dynamics term is a JVP of the decoder, and both must be
differentiated with respect to the weights.

Inputs are rows: ``x`` has shape ``(d,)`` or ``(B, d)``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("elu", "identity")


class StaleCache(RuntimeError):
    """A forward cache was used after the network weights changed."""


@dataclass
class Network:
    layer_sizes: list[int]
    activation: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.layer_sizes) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_sizes[k + 1], self.layer_sizes[k]) or b.shape != (self.layer_sizes[k + 1],):
                raise ValueError(f"layer {k} has incompatible shapes {W.shape}, {b.shape}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def fingerprint(self) -> tuple[int, ...]:
        return tuple(zlib.crc32(np.ascontiguousarray(p).data) for p in self.params())

    def copy(self) -> "Network":
        return Network(list(self.layer_sizes), self.activation, [W.copy() for W in self.weights],
                       [b.copy() for b in self.biases])


def init_network(layer_sizes, activation: str = "elu", seed=None) -> Network:
    """Glorot-uniform weights and zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layer_sizes = [int(s) for s in layer_sizes]
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(layer_sizes, activation, weights, biases)


def elu(a):
    return np.where(a > 0, a, np.expm1(np.minimum(a, 0.0)))


def _act_derivs(a, activation, hidden):
    """Activation value and first/second derivatives at ``a``."""
    if not hidden or activation == "identity":
        return a, np.ones_like(a), np.zeros_like(a)
    e = np.exp(np.minimum(a, 0.0))
    pos = a > 0
    return np.where(pos, a, e - 1.0), np.where(pos, 1.0, e), np.where(pos, 0.0, e)


@dataclass
class Cache:
    inputs: list = field(default_factory=list)      # h_{l-1}, (B, d_in)
    preacts: list = field(default_factory=list)     # a_l, (B, d_out)
    t_inputs: list = field(default_factory=list)    # dh_{l-1}, (K, B, d_in)
    t_preacts: list = field(default_factory=list)   # da_l, (K, B, d_out)
    single: bool = False
    n_tangents: int = 0
    fingerprint: tuple = ()
    net_id: int = 0


def _as_rows(x, width, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[-1] != width:
        raise ValueError(f"{what} has width {X.shape[-1]}, expected {width}")
    return X, single


def forward_dual(net: Network, x, tangents=()):
    """Forward pass carrying tangent directions.

    Returns ``(y, dy, cache)`` where ``dy`` stacks one JVP per tangent,
    shape ``(K, B, n_out)`` (``(K, n_out)`` for a single input row).
    """
    X, single = _as_rows(x, net.n_in, "input")
    T = np.stack([np.broadcast_to(_as_rows(v, net.n_in, "tangent")[0], X.shape) for v in tangents]) \
        if len(tangents) else np.zeros((0,) + X.shape)
    cache = Cache(single=single, n_tangents=T.shape[0], fingerprint=net.fingerprint(), net_id=id(net))
    h, dh = X, T
    last = net.n_layers - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        cache.inputs.append(h)
        cache.t_inputs.append(dh)
        a = h @ W.T + b
        da = dh @ W.T
        cache.preacts.append(a)
        cache.t_preacts.append(da)
        f, f1, _ = _act_derivs(a, net.activation, k < last)
        h, dh = f, f1 * da
    if single:
        return h[0], dh[:, 0], cache
    return h, dh, cache


def forward(net: Network, x):
    y, _, cache = forward_dual(net, x)
    return y, cache


def backward_dual(net: Network, cache: Cache, grad_output, grad_tangents=None):
    """Reverse pass through the primal and tangent outputs of :func:`forward_dual`.

    Returns ``(weight_grads, bias_grads, grad_input, grad_tangents_in)`` for
    the scalar ``sum(y * grad_output) + sum(dy * grad_tangents)``.
    """
    if cache.net_id != id(net) or cache.fingerprint != net.fingerprint():
        raise StaleCache("forward cache does not match the current network weights")
    gy = np.atleast_2d(np.asarray(grad_output, dtype=np.float64))
    K = cache.n_tangents
    if grad_tangents is None:
        gdy = np.zeros((K,) + gy.shape)
    else:
        gdy = np.asarray(grad_tangents, dtype=np.float64)
        if cache.single:
            gdy = gdy[:, None, :]
    last = net.n_layers - 1
    wgrads = [None] * net.n_layers
    bgrads = [None] * net.n_layers
    gh, gdh = gy, gdy
    for k in range(last, -1, -1):
        W = net.weights[k]
        a, da = cache.preacts[k], cache.t_preacts[k]
        _, f1, f2 = _act_derivs(a, net.activation, k < last)
        ga = gh * f1
        if K:
            ga = ga + np.sum(gdh * da, axis=0) * f2
            gda = gdh * f1
        h, dh = cache.inputs[k], cache.t_inputs[k]
        gW = ga.T @ h
        if K:
            gW = gW + np.einsum("kbo,kbi->oi", gda, dh)
        wgrads[k] = gW
        bgrads[k] = ga.sum(axis=0)
        gh = ga @ W
        gdh = gda @ W if K else gdh
    if cache.single:
        return wgrads, bgrads, gh[0], (gdh[:, 0] if K else gdh)
    return wgrads, bgrads, gh, gdh


def backward(net: Network, cache: Cache, grad_output):
    w, b, gx, _ = backward_dual(net, cache, grad_output)
    return w, b, gx


def input_jvp(net: Network, x, v) -> np.ndarray:
    """Directional derivative ``J_net(x) v`` by forward mode."""
    _, dy, _ = forward_dual(net, x, [v])
    return dy[0]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


def init_adam(params) -> AdamState:
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must have the same length")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state
