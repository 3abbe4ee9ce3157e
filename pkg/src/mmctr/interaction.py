"""Parallel feature-interaction module: explicit cross layers alongside a
deep MLP branch, both fed the same concatenated feature vector."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, add, add_bias, concat, dropout, matmul, mul, relu
from .encoder import glorot


def feature_vector(parts) -> Tensor:
    """Concatenate feature segments (None entries are skipped)."""
    present = [p for p in parts if p is not None]
    if not present:
        raise ValueError("feature vector needs at least one segment")
    return concat(present, axis=-1) if len(present) > 1 else present[0]


class CrossNetwork:
    """Stack of cross layers c_{l+1} = x0 * (W c_l + b) + c_l with c_0 = x0.

    With zero weights and biases every layer is the identity map. A depth of
    zero leaves the input untouched (ablation switch).
    """

    def __init__(self, dim, n_layers, dropout_rate=0.2, rng=None,
                 dtype=np.float32):
        if n_layers < 0:
            raise ValueError(f"cross depth must be >= 0, got {n_layers}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.dim = dim
        self.dropout_rate = dropout_rate
        self.weights = []
        self.biases = []
        for _ in range(n_layers):
            self.weights.append(Tensor(glorot(rng, dim, dim), requires_grad=True,
                                       dtype=dtype))
            self.biases.append(Tensor(np.zeros(dim), requires_grad=True,
                                      dtype=dtype))

    def named_tensors(self, prefix="cross"):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.l{i}.w", w
            yield f"{prefix}.l{i}.b", b

    def __call__(self, x0: Tensor, training=False, rng=None) -> Tensor:
        c = x0
        for w, b in zip(self.weights, self.biases):
            pre = add_bias(matmul(c, w), b)
            pre = dropout(pre, self.dropout_rate, rng, training)
            c = add(mul(x0, pre), c)
        return c


class DeepNetwork:
    """Affine + ReLU stack; the last hidden activation is the branch output."""

    def __init__(self, input_dim, hidden, rng=None, dtype=np.float32):
        hidden = tuple(hidden)
        if not hidden:
            raise ValueError("deep branch needs at least one hidden layer")
        if rng is None:
            rng = np.random.default_rng(0)
        self.hidden = hidden
        self.weights = []
        self.biases = []
        fan_in = input_dim
        for width in hidden:
            self.weights.append(Tensor(glorot(rng, fan_in, width),
                                       requires_grad=True, dtype=dtype))
            self.biases.append(Tensor(np.zeros(width), requires_grad=True,
                                      dtype=dtype))
            fan_in = width

    @property
    def output_dim(self):
        return self.hidden[-1]

    def named_tensors(self, prefix="deep"):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.l{i}.w", w
            yield f"{prefix}.l{i}.b", b

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for w, b in zip(self.weights, self.biases):
            h = relu(add_bias(matmul(h, w), b))
        return h


def combine(cross_out: Tensor, deep_out: Tensor) -> Tensor:
    """Concatenate the two branch outputs of the parallel topology."""
    return concat([cross_out, deep_out], axis=-1)
