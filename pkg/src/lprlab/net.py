"""Fully-connected network with bias-augmented layers and exact backprop.

Each layer is the linear map ``Z @ theta`` where ``Z`` carries a trailing
column of ones, so ``theta`` has one more row than the layer's input width
and its last row is the bias.
"""

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, as_matrix

ACTIVATIONS = ("relu", "identity")


class InputError(ValueError):
    pass


@dataclass
class Layer:
    theta: np.ndarray
    activation: str = "relu"
    n_eff: int = 1

    def __post_init__(self):
        self.theta = as_matrix(self.theta, "theta")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")
        if self.n_eff < 1:
            raise InputError("n_eff must be >= 1")
        if self.theta.shape[0] < 1:
            raise ShapeError("theta needs at least the bias row")

    @property
    def input_width(self):
        return self.theta.shape[0] - 1

    @property
    def output_width(self):
        return self.theta.shape[1]


@dataclass
class Network:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise InputError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.output_width != nxt.input_width:
                raise ShapeError(
                    f"layer widths do not chain: {prev.theta.shape} -> {nxt.theta.shape}")
        if self.layers[-1].activation != "identity":
            raise InputError("final layer must use the identity activation")

    @property
    def widths(self):
        return [self.layers[0].input_width] + [l.output_width for l in self.layers]

    @property
    def thetas(self):
        return [l.theta for l in self.layers]

    def copy(self):
        return Network([Layer(l.theta.copy(), l.activation, l.n_eff) for l in self.layers])

    def flat_params(self):
        return np.concatenate([l.theta.ravel() for l in self.layers])


@dataclass
class ForwardTrace:
    """Per-layer bias-augmented inputs ``z`` plus the output logits.

    ``pre`` holds each layer's pre-activation output, kept for backprop.
    """
    z: list
    logits: np.ndarray
    pre: list = field(default_factory=list, repr=False)

    @property
    def last_hidden(self):
        # input to the final layer, without the bias column
        return self.z[-1][:, :-1]


def init_network(widths, rng, n_eff=None):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias row.

    ``widths`` lists input, hidden and output sizes. Hidden layers use relu.
    """
    if len(widths) < 2:
        raise InputError("need at least input and output widths")
    n_layers = len(widths) - 1
    n_eff = n_eff or [1] * n_layers
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        theta = np.zeros((fan_in + 1, fan_out))
        theta[:-1] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        act = "identity" if i == n_layers - 1 else "relu"
        layers.append(Layer(theta, act, n_eff[i]))
    return Network(layers)


def augment(x):
    x = np.asarray(x, dtype=np.float64)
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _activate(a, kind):
    if kind == "relu":
        return np.maximum(a, 0.0)
    return a


def forward(net, x):
    x = as_matrix(x, "x")
    if x.shape[1] != net.layers[0].input_width:
        raise ShapeError(
            f"input has {x.shape[1]} columns, network expects {net.layers[0].input_width}")
    z, pre = [], []
    h = x
    for layer in net.layers:
        zl = augment(h)
        a = zl @ layer.theta
        z.append(zl)
        pre.append(a)
        h = _activate(a, layer.activation)
    return ForwardTrace(z=z, logits=h, pre=pre)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise InputError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def backward(net, trace, dlogits):
    """Gradients of the loss for every layer's theta (bias row included)."""
    dlogits = as_matrix(dlogits, "dlogits")
    if len(trace.z) != len(net.layers) or dlogits.shape != trace.logits.shape:
        raise ShapeError("trace does not match the network or dlogits")
    grads = [None] * len(net.layers)
    delta = dlogits
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        zl = trace.z[i]
        if zl.shape[1] != layer.theta.shape[0] or delta.shape[1] != layer.theta.shape[1]:
            raise ShapeError(f"stale trace at layer {i}")
        grads[i] = zl.T @ delta
        if i > 0:
            delta = delta @ layer.theta[:-1].T
            if net.layers[i - 1].activation == "relu":
                delta = delta * (trace.pre[i - 1] > 0)
    return grads


def loss_and_grads(net, x, y):
    trace = forward(net, x)
    loss, dlogits = softmax_cross_entropy(trace.logits, y)
    return loss, backward(net, trace, dlogits)


def zero_grads(net):
    return [np.zeros_like(l.theta) for l in net.layers]


def replay_loss_terms(net, new_batch, replay_batch, alpha=1.0):
    """Loss and gradients of the new-data and (alpha-weighted) replay terms.

    Returns ``(loss_new, grads_new, loss_replay, grads_replay)``; the replay
    pieces already include the factor ``alpha`` and are zero when the
    replay batch is empty or ``alpha == 0``.
    """
    loss_new, g_new = loss_and_grads(net, *new_batch)
    rx, ry = replay_batch if replay_batch is not None else (None, None)
    if alpha == 0 or rx is None or len(rx) == 0:
        return loss_new, g_new, 0.0, zero_grads(net)
    loss_rep, g_rep = loss_and_grads(net, rx, ry)
    return loss_new, g_new, alpha * loss_rep, [alpha * g for g in g_rep]


def combined_replay_loss(net, new_batch, replay_batch, alpha=1.0):
    """Experience-replay objective ``L_new + alpha * L_replay`` and its gradient."""
    loss_new, g_new, loss_rep, g_rep = replay_loss_terms(net, new_batch, replay_batch, alpha)
    return loss_new + loss_rep, [a + b for a, b in zip(g_new, g_rep)]


def predict(net, x):
    return np.argmax(forward(net, x).logits, axis=1)


def accuracy(net, x, y):
    if len(y) == 0:
        return 0.0
    return float(np.mean(predict(net, x) == np.asarray(y)))
