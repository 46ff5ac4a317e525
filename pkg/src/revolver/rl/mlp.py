"""Small float64 multilayer perceptrons with hand-written backprop and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MlpNet", "Adam", "DivergenceError", "policy_act"]


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient becomes non-finite."""


@dataclass
class MlpNet:
    """tanh hidden layers; output activation ``tanh`` (actors) or ``linear`` (critics)."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    out_act: str = "linear"

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if self.out_act not in ("tanh", "linear"):
            raise ValueError(f"unknown output activation {self.out_act!r}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match sizes")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[k], self.sizes[k + 1]) or b.shape != (self.sizes[k + 1],):
                raise ValueError(f"layer {k} has shape {w.shape}/{b.shape}, expected sizes {self.sizes}")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, out_act: str = "linear", out_scale: float = 1.0) -> "MlpNet":
        """Glorot-uniform hidden layers; the last layer is scaled by ``out_scale``."""
        ws, bs = [], []
        for k in range(len(sizes) - 1):
            fan_in, fan_out = sizes[k], sizes[k + 1]
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            if k == len(sizes) - 2:
                lim *= out_scale
            ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(tuple(sizes), ws, bs, out_act)

    @classmethod
    def zeros(cls, sizes, out_act: str = "linear") -> "MlpNet":
        return cls(
            tuple(sizes),
            [np.zeros((sizes[k], sizes[k + 1])) for k in range(len(sizes) - 1)],
            [np.zeros(sizes[k + 1]) for k in range(len(sizes) - 1)],
            out_act,
        )

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpNet":
        return MlpNet(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.out_act)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, flat: np.ndarray) -> None:
        k = 0
        for i in range(len(self.weights)):
            for arr in (self.weights[i], self.biases[i]):
                arr[...] = flat[k : k + arr.size].reshape(arr.shape)
                k += arr.size
        if k != len(flat):
            raise ValueError(f"flat vector has {len(flat)} entries, expected {k}")

    def _check_input(self, x):
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input has dimension {x.shape[-1]}, network expects {self.sizes[0]}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._check_input(x)
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last or self.out_act == "tanh":
                h = np.tanh(h)
        return h

    def forward(self, x: np.ndarray):
        """Output plus the activations needed by ``backward`` (x is 2-D)."""
        x = np.asarray(x, dtype=float)
        self._check_input(x)
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last or self.out_act == "tanh":
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out: np.ndarray):
        """Gradients of ``sum(grad_out * output)`` w.r.t. parameters and input."""
        g = grad_out
        last = len(self.weights) - 1
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for k in range(last, -1, -1):
            if k < last or self.out_act == "tanh":
                g = g * (1.0 - acts[k + 1] ** 2)
            gw[k] = acts[k].T @ g
            gb[k] = g.sum(axis=0)
            g = g @ self.weights[k].T
        return gw, gb, g

    def polyak(self, source: "MlpNet", tau: float) -> None:
        """self <- tau * source + (1 - tau) * self."""
        for a, b in zip(self.weights + self.biases, source.weights + source.biases):
            if tau == 1.0:
                a[...] = b
            elif tau != 0.0:
                a *= 1.0 - tau
                a += tau * b

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.weights + self.biases)


@dataclass
class Adam:
    lr: float = 3e-4
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, net: MlpNet, gw, gb, ascend: bool = False) -> None:
        grads = list(gw) + list(gb)
        params = net.weights + net.biases
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise DivergenceError("divergence: non-finite gradient")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        sign = 1.0 if ascend else -1.0
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p += sign * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def policy_act(net: MlpNet, s, noise_scale: float, rng: np.random.Generator | None = None, noise_clip: float = 0.5) -> np.ndarray:
    """Deterministic tanh action plus clipped Gaussian noise, clamped to [-1, 1]."""
    s = np.asarray(s, dtype=float)
    a = net(s)
    if noise_scale > 0:
        if rng is None:
            raise ValueError("an rng is required when noise_scale > 0")
        noise = np.clip(rng.normal(0.0, noise_scale, a.shape), -noise_clip, noise_clip)
        a = a + noise
    return np.clip(a, -1.0, 1.0)
