"""Scoring head and training loss.

The head is a small ReLU MLP ending in one linear unit; its logit feeds a
numerically stable binary cross-entropy, and the sigmoid probability is
produced separately for reporting and metrics.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .autograd import Tensor, accumulate_grad, add_bias, matmul, record, relu, reshape
from .encoder import glorot


class PredictionHead:
    def __init__(self, input_dim, hidden=(64, 32), rng=None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.hidden = tuple(hidden)
        self.weights = []
        self.biases = []
        fan_in = input_dim
        for width in self.hidden:
            self.weights.append(Tensor(glorot(rng, fan_in, width),
                                       requires_grad=True, dtype=dtype))
            self.biases.append(Tensor(np.zeros(width), requires_grad=True,
                                      dtype=dtype))
            fan_in = width
        self.w_out = Tensor(glorot(rng, fan_in, 1), requires_grad=True, dtype=dtype)
        self.b_out = Tensor(np.zeros(1), requires_grad=True, dtype=dtype)

    def named_tensors(self, prefix="head"):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.l{i}.w", w
            yield f"{prefix}.l{i}.b", b
        yield f"{prefix}.out.w", self.w_out
        yield f"{prefix}.out.b", self.b_out

    def __call__(self, x: Tensor) -> Tensor:
        """Map (B, d) feature vectors to (B,) logits."""
        h = x
        for w, b in zip(self.weights, self.biases):
            h = relu(add_bias(matmul(h, w), b))
        z = add_bias(matmul(h, self.w_out), self.b_out)
        return reshape(z, (x.shape[0],))


PROB_EPS = 1e-9


def predict_probs(logits: Tensor | np.ndarray) -> np.ndarray:
    """Sigmoid probabilities for reporting; the loss consumes raw logits.

    Values are clamped into (0, 1) so saturated logits never round to an
    exact 0 or 1 in the output.
    """
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.clip(expit(z.astype(np.float64)), PROB_EPS, 1.0 - PROB_EPS)


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy computed from logits in the stable form
    max(z, 0) - z*y + log(1 + exp(-|z|)), finite for every finite logit."""
    y = np.asarray(labels, dtype=logits.dtype)
    if y.size == 0:
        raise ValueError("loss of an empty batch is undefined")
    if y.shape != logits.shape:
        raise ValueError(f"labels shape {y.shape} != logits shape {logits.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    z = logits.data
    per_sample = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = y.size

    def backward(g):
        accumulate_grad(logits, (expit(z) - y) * (g / n))

    return record(np.asarray(per_sample.mean(), dtype=logits.dtype),
                  (logits,), backward)
