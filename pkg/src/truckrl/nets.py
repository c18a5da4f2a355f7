"""Small dense networks with hand-written backprop and Adam.

Everything the learning algorithms need from a deep-learning framework,
reduced to what the task actually uses: tanh MLPs with a linear head,
reverse-mode gradients, orthogonal init, global-norm clipping and Adam.
Parameters live in plain numpy arrays ordered [W0, b0, W1, b1, ...].
"""

from __future__ import annotations

import math
from typing import List, Sequence, Tuple

import numpy as np


def orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int,
               gain: float) -> np.ndarray:
    """Orthogonal weight draw; rows/columns orthonormal up to the gain."""
    flip = fan_in < fan_out
    a = rng.normal(size=(fan_out, fan_in) if flip else (fan_in, fan_out))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))     # make the factorisation unique
    if flip:
        q = q.T
    return gain * q


class Mlp:
    """Tanh hidden layers, linear output layer.

    head_gain scales the output layer's init; policy heads use a small
    gain so the initial policy is near uniform.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator,
                 head_gain: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.W: List[np.ndarray] = []
        self.b: List[np.ndarray] = []
        last = len(self.sizes) - 2
        for i, (fi, fo) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            gain = head_gain if i == last else math.sqrt(2.0)
            self.W.append(orthogonal(rng, fi, fo, gain))
            self.b.append(np.zeros(fo))

    # ------------------------------------------------------------- compute

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, list]:
        """x of shape (batch, d_in) -> (output (batch, d_out), cache)."""
        h = x
        acts = [x]
        for W, b in zip(self.W[:-1], self.b[:-1]):
            h = np.tanh(h @ W + b)
            acts.append(h)
        out = h @ self.W[-1] + self.b[-1]
        return out, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, dout: np.ndarray) -> List[np.ndarray]:
        """Gradients of a scalar loss given d(loss)/d(output).

        Returns arrays in parameter order [dW0, db0, ...]; cache is what
        forward() returned for the same input batch.
        """
        acts = cache
        grads: List[np.ndarray] = [None] * (2 * len(self.W))
        dh = dout
        for l in range(len(self.W) - 1, -1, -1):
            grads[2 * l] = acts[l].T @ dh
            grads[2 * l + 1] = dh.sum(axis=0)
            if l > 0:
                dh = (dh @ self.W[l].T) * (1.0 - acts[l] ** 2)
        return grads

    # ---------------------------------------------------------- parameters

    def params(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.W, self.b):
            out.extend((W, b))
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.params():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size
        if i != flat.size:
            raise ValueError("flat vector length does not match parameter count")

    def copy_from(self, other: "Mlp") -> None:
        for p, q in zip(self.params(), other.params()):
            p[...] = q

    def clone(self) -> "Mlp":
        out = object.__new__(Mlp)
        out.sizes = self.sizes
        out.W = [W.copy() for W in self.W]
        out.b = [b.copy() for b in self.b]
        return out


def clip_grads(grads: List[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the raw norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


class Adam:
    """Adaptive moment estimation over one network's parameter list."""

    def __init__(self, net: Mlp, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.params()]
        self.v = [np.zeros_like(p) for p in net.params()]

    def step(self, net: Mlp, grads: List[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(net.params(), grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def get_state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m],
                "v": [a.copy() for a in self.v]}

    def set_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for a, src in zip(self.m, state["m"]):
            a[...] = src
        for a, src in zip(self.v, state["v"]):
            a[...] = src
