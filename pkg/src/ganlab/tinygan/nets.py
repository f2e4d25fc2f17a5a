"""Small fully connected networks with hand-written backpropagation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

LEAK = 0.2


def _leaky(x):
    return np.maximum(x, LEAK * x)  # valid because 0 < LEAK < 1


def _leaky_grad(pre):
    return np.where(pre > 0, 1.0, LEAK).astype(pre.dtype)


SIGMOID_CLIP = 30.0


def sigmoid(x):
    # clipped so saturated float32 outputs never reach denormals (slow paths)
    x = np.clip(x, -SIGMOID_CLIP, SIGMOID_CLIP)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


HIDDEN = {"leaky_relu": (_leaky, _leaky_grad),
          "relu": (lambda x: np.maximum(x, 0), lambda p: (p > 0).astype(p.dtype))}
OUTPUT = ("identity", "sigmoid")


@dataclass
class DenseNet:
    """Affine layers with a 1-Lipschitz hidden activation.

    ``weights[k]`` has shape ``(fan_in, fan_out)`` so a batch ``x`` of shape
    ``(n, fan_in)`` maps to ``x @ W + b``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden: str = "leaky_relu"
    output: str = "identity"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} incompatible with bias {b.shape}")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: input width {w.shape[0]} != previous output "
                                 f"{self.weights[k - 1].shape[1]}")
        if self.hidden not in HIDDEN:
            raise ValueError(f"unsupported hidden activation {self.hidden!r}")
        if self.output not in OUTPUT:
            raise ValueError(f"unsupported output activation {self.output!r}")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, output: str = "identity",
             hidden: str = "leaky_relu", dtype=np.float32, scale: float | None = None) -> DenseNet:
        """He-style initialisation; ``scale`` overrides the per-layer std."""
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            std = scale if scale is not None else np.sqrt(2.0 / fan_in)
            ws.append((rng.standard_normal((fan_in, fan_out)) * std).astype(dtype))
            bs.append(np.zeros(fan_out, dtype=dtype))
        return cls(ws, bs, hidden=hidden, output=output)

    @classmethod
    def zeros(cls, sizes, output: str = "identity", dtype=np.float64) -> DenseNet:
        return cls([np.zeros((a, b), dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b, dtype=dtype) for b in sizes[1:]], output=output)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> DenseNet:
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.hidden, self.output, dict(self.meta))

    def astype(self, dtype) -> DenseNet:
        return DenseNet([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases],
                        self.hidden, self.output, dict(self.meta))

    def forward(self, x) -> list[np.ndarray]:
        """Return ``[x, pre_1, post_1, ..., pre_L, post_L]`` for backprop."""
        x = np.asarray(x, dtype=self.weights[0].dtype)
        if x.ndim != 2 or x.shape[1] != self.weights[0].shape[0]:
            raise ValueError(f"input shape {x.shape} does not match first layer width "
                             f"{self.weights[0].shape[0]}")
        act, _ = HIDDEN[self.hidden]
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w + b
            if k < last:
                h = act(pre)
            elif self.output == "sigmoid":
                h = sigmoid(pre)
            else:
                h = pre
            cache += [pre, h]
        return cache

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[-1]

    def backward(self, cache, grad_out, need_input_grad: bool = False):
        """Backpropagate ``dL/d(output)``.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
        :attr:`params`.
        """
        _, dact = HIDDEN[self.hidden]
        n_layers = len(self.weights)
        g = np.asarray(grad_out, dtype=self.weights[0].dtype)
        if self.output == "sigmoid":
            y = cache[-1]
            g = g * y * (1.0 - y)
        grads: list[np.ndarray] = [None] * (2 * n_layers)
        for k in range(n_layers - 1, -1, -1):
            h_in = cache[2 * k]
            grads[2 * k] = h_in.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k or need_input_grad:
                g = g @ self.weights[k].T
                if k:
                    g = g * dact(cache[2 * k - 1])
        return grads, (g if need_input_grad else None)


class SGD:
    """Plain gradient descent; ``weight_decay`` adds ``wd * p`` to each gradient."""

    def __init__(self, params, lr: float, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        for p, g in zip(self.params, grads):
            if self.weight_decay:
                g = g + p.dtype.type(self.weight_decay) * p
            p -= p.dtype.type(self.lr) * g

    def state(self) -> list[np.ndarray]:
        return []

    def load_state(self, arrays, t: int) -> None:
        self.t = t


@numba.njit(cache=True, nogil=True)
def _adam_kernel(p, g, m, v, b1, b2, step, eps, wd):
    for k in range(p.size):
        gk = g[k] + wd * p[k]
        m[k] = b1 * m[k] + (1.0 - b1) * gk
        v[k] = b2 * v[k] + (1.0 - b2) * gk * gk
        p[k] -= step * m[k] / (np.sqrt(v[k]) + eps)


class Adam:
    """Adam with bias correction; ``weight_decay`` is a coupled L2 term on the gradient."""

    def __init__(self, params, lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.9, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            f = p.dtype.type
            g = np.ascontiguousarray(g, dtype=p.dtype)
            _adam_kernel(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                         f(b1), f(b2), f(lr), f(self.eps), f(self.weight_decay))

    def state(self) -> list[np.ndarray]:
        return self.m + self.v

    def load_state(self, arrays, t: int) -> None:
        n = len(self.params)
        for dst, src in zip(self.m + self.v, arrays[:2 * n]):
            dst[...] = src
        self.t = t
