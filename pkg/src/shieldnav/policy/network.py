"""Small fully-connected network with hand-rolled backprop and Adam.

float64 numpy throughout: gradients are exactly checkable against finite
differences and training is bit-reproducible for a fixed seed, which the
benchmark harness relies on.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np


def _orthogonal(rng: np.random.Generator, shape: Tuple[int, int], gain: float) -> np.ndarray:
    a = rng.standard_normal(shape)
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    q = u if u.shape == shape else vt
    return gain * q


class Mlp:
    """Tanh MLP: input -> hidden sizes -> linear head.

    Parameters live in ``weights``/``biases`` lists; ``forward`` caches
    activations for ``backward``, which returns gradients in the same
    layout. Hidden layers use orthogonal init with gain sqrt(2), the head
    a configurable (typically small) gain.
    """

    def __init__(
        self,
        in_dim: int,
        hidden: Sequence[int],
        out_dim: int,
        rng: np.random.Generator,
        head_gain: float = 0.01,
    ):
        self.sizes = [in_dim, *hidden, out_dim]
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for i in range(len(self.sizes) - 1):
            last = i == len(self.sizes) - 2
            gain = head_gain if last else np.sqrt(2.0)
            self.weights.append(_orthogonal(rng, (self.sizes[i], self.sizes[i + 1]), gain))
            self.biases.append(np.zeros(self.sizes[i + 1]))

    def forward(self, x: np.ndarray):
        """Returns (output, cache); x is (batch, in_dim)."""
        acts = [x]
        h = x
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < len(self.weights) - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients of a scalar loss given d loss / d output.

        Returns (weight_grads, bias_grads) matching the parameter layout.
        """
        gw = [np.zeros_like(W) for W in self.weights]
        gb = [np.zeros_like(b) for b in self.biases]
        delta = grad_out
        for i in reversed(range(len(self.weights))):
            gw[i] = cache[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - cache[i] ** 2)
        return gw, gb

    def parameters(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.parameters()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.parameters():
            n = p.size
            p[...] = flat[offset : offset + n].reshape(p.shape)
            offset += n
        if offset != flat.size:
            raise ValueError(f"parameter blob size mismatch: {flat.size} vs {offset}")


class Adam:
    """Standard Adam over a list of parameter arrays, bias-corrected."""

    def __init__(self, params: List[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def clip_grad_norm(grads: List[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the raw norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total
