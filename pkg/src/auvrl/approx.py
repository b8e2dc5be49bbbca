"""Dense feed-forward networks over a single flat parameter vector.

Layer ``l`` maps ``x @ W_l + b_l`` through its activation. ``W_l`` has shape
``(fan_in, fan_out)`` and is stored row-major inside ``Mlp.params`` followed by
``b_l``. Forward and backward accept either one input vector or a batch of row
vectors; batched gradients are summed over the batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from auvrl import DomainError

FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "linear")


def _layout(widths):
    out, off = [], 0
    for fi, fo in zip(widths[:-1], widths[1:]):
        out.append((off, off + fi * fo, off + fi * fo + fo, fi, fo))
        off += fi * fo + fo
    return out


def param_count(widths) -> int:
    return sum(fi * fo + fo for fi, fo in zip(widths[:-1], widths[1:]))


@dataclass
class Mlp:
    widths: tuple[int, ...]
    activations: tuple[str, ...]
    params: np.ndarray = None

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.activations = tuple(self.activations)
        if len(self.widths) < 2:
            raise DomainError("an Mlp needs at least input and output widths")
        if len(self.activations) != len(self.widths) - 1:
            raise DomainError("one activation tag per layer is required")
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise DomainError(f"unknown activation(s) {bad}")
        n = param_count(self.widths)
        if self.params is None:
            self.params = np.zeros(n)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (n,):
            raise DomainError(f"parameter vector must have length {n}, got {self.params.shape}")
        self._layout = _layout(self.widths)

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def layers(self):
        """Yield ``(W, b, activation)`` views into the parameter vector."""
        for (w0, w1, b1, fi, fo), act in zip(self._layout, self.activations):
            yield self.params[w0:w1].reshape(fi, fo), self.params[w1:b1], act

    def unflatten(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(W.copy(), b.copy()) for W, b, _ in self.layers()]

    @classmethod
    def from_layers(cls, layers, activations) -> "Mlp":
        widths = [layers[0][0].shape[0]] + [W.shape[1] for W, _ in layers]
        flat = np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])
        return cls(tuple(widths), tuple(activations), flat)

    def copy(self) -> "Mlp":
        return Mlp(self.widths, self.activations, self.params.copy())

    def __call__(self, x):
        return forward(self, x)

    def __eq__(self, other):
        return (
            isinstance(other, Mlp)
            and self.widths == other.widths
            and self.activations == other.activations
            and np.array_equal(self.params, other.params)
        )


@dataclass
class GradientRecord:
    params: np.ndarray
    inputs: np.ndarray | None = None


def _act(a, z):
    if a == "relu":
        return np.maximum(z, 0.0)
    if a == "tanh":
        return np.tanh(z)
    return z


def _check_width(x, n, what):
    if x.shape[-1] != n:
        raise DomainError(f"{what} width mismatch: expected {n}, got {x.shape[-1]}")


def forward(net: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_width(x, net.n_in, "input")
    h = x
    for W, b, a in net.layers():
        h = _act(a, h @ W + b)
    return h


def backward(net: Mlp, x, upstream) -> GradientRecord:
    """Gradient of ``sum(upstream * forward(net, x))`` w.r.t. parameters and input."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    _check_width(x, net.n_in, "input")
    _check_width(g, net.n_out, "upstream")
    single = x.ndim == 1
    if single:
        x, g = x[None, :], g[None, :]
    if g.shape[0] != x.shape[0]:
        raise DomainError(f"batch mismatch: {x.shape[0]} inputs vs {g.shape[0]} upstream rows")

    hs, outs = [x], []
    for W, b, a in net.layers():
        o = _act(a, hs[-1] @ W + b)
        outs.append(o)
        hs.append(o)

    grad = np.empty_like(net.params)
    for (w0, w1, b1, fi, fo), (W, _, a), h_in, o in zip(
        reversed(net._layout), reversed(list(net.layers())), reversed(hs[:-1]), reversed(outs)
    ):
        if a == "relu":
            g = g * (o > 0.0)
        elif a == "tanh":
            g = g * (1.0 - o * o)
        grad[w0:w1] = (h_in.T @ g).ravel()
        grad[w1:b1] = g.sum(axis=0)
        g = g @ W.T
    return GradientRecord(grad, g[0] if single else g)


def init(widths, activations, seed: int = 0, scheme: str = "glorot_uniform", output_scale: float = 1.0) -> Mlp:
    """Seeded initialisation; weights uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.

    ``output_scale`` shrinks the last layer's weights (useful for policy heads
    that should start near zero).
    """
    if scheme != "glorot_uniform":
        raise DomainError(f"unknown init scheme {scheme!r}")
    net = Mlp(widths, activations)
    rng = np.random.default_rng(seed)
    n_layers = len(net.widths) - 1
    for i, (W, _, _) in enumerate(net.layers()):
        fi, fo = W.shape
        bound = np.sqrt(6.0 / (fi + fo))
        W[...] = rng.uniform(-bound, bound, size=W.shape)
        if i == n_layers - 1:
            W *= output_scale
    return net


@dataclass
class Adam:
    """Adam with bias correction, minimising; pass a negated gradient to ascend."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def to_dict(net: Mlp) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "widths": list(net.widths),
        "activations": list(net.activations),
        "params": [float(p) for p in net.params],
    }


def from_dict(d: dict) -> Mlp:
    if d.get("format_version") != FORMAT_VERSION:
        raise DomainError(f"unsupported network format version {d.get('format_version')!r}")
    return Mlp(tuple(d["widths"]), tuple(d["activations"]), np.array(d["params"], dtype=np.float64))


def save(net: Mlp, path) -> None:
    with open(path, "w") as f:
        json.dump(to_dict(net), f)


def load(path) -> Mlp:
    with open(path) as f:
        return from_dict(json.load(f))
