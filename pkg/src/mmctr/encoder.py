"""Target-aware Transformer over padded history sequences.

Each history position is concatenated with the target item's embedding,
run through a post-norm encoder stack whose attention masks out padded
keys, and summarized as the k most recent outputs plus a coordinate-wise
max-pool over the valid positions.
"""

from __future__ import annotations

import numpy as np

from .autograd import (Tensor, accumulate_grad, add, add_bias, concat, dropout,
                       layer_norm, matmul, record, relu, reshape, scale,
                       swapaxes)


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def build_seq_input(item_embeds: Tensor, target_embed: Tensor) -> Tensor:
    """Concatenate the target embedding onto every history position.

    (B, N, d_item) + (B, d_item) -> (B, N, 2 * d_item).
    """
    b, n, d = item_embeds.shape
    if target_embed.shape != (b, d):
        raise ValueError(f"target shape {target_embed.shape} does not match "
                         f"history positions {item_embeds.shape}")
    tiled_data = np.repeat(target_embed.data[:, None, :], n, axis=1)

    def backward(g):
        accumulate_grad(target_embed, g.sum(axis=1))

    tiled = record(tiled_data, (target_embed,), backward)
    return concat([item_embeds, tiled], axis=-1)


def masked_softmax(logits: Tensor, key_mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to valid keys.

    logits is (B, h, Q, K) and key_mask is (B, K) bool. Invalid keys get
    exactly zero weight; a query row with no valid keys yields all zeros
    rather than NaN.
    """
    valid = np.asarray(key_mask, dtype=bool)[:, None, None, :]
    z = np.where(valid, logits.data, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(valid, np.exp(z - zmax), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    p = np.where(denom > 0, e / np.where(denom == 0, 1.0, denom), 0.0)
    p = p.astype(logits.dtype, copy=False)

    def backward(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        accumulate_grad(logits, p * (g - inner))

    return record(p, (logits,), backward)


def mask_positions(x: Tensor, mask: np.ndarray) -> Tensor:
    """Zero the feature vectors of padded positions; (B, N, d) with (B, N)."""
    m = np.asarray(mask, dtype=x.dtype)[:, :, None]

    def backward(g):
        accumulate_grad(x, g * m)

    return record(x.data * m, (x,), backward)


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over valid positions per row; zero vector when none are valid."""
    m = np.asarray(mask, dtype=bool)
    count = m.sum(axis=1)
    denom = np.maximum(count, 1).astype(x.dtype)[:, None]
    mf = m.astype(x.dtype)[:, :, None]

    def backward(g):
        accumulate_grad(x, g[:, None, :] * mf / denom[:, :, None])

    return record((x.data * mf).sum(axis=1) / denom, (x,), backward)


def readout(s: Tensor, mask: np.ndarray, k: int) -> Tensor:
    """Latest-k outputs plus a max-pool over valid positions, flattened.

    s is (B, N, d) in most-recent-first order. The first k positions are
    copied (zero vectors where invalid), the max-pool runs over valid
    positions only (zero vector for an empty history), and the result is
    flattened to (B, (k + 1) * d).
    """
    b, n, d = s.shape
    if not 0 <= k <= n:
        raise ValueError(f"k must be in [0, {n}], got {k}")
    m = np.asarray(mask, dtype=bool)
    latest = s.data[:, :k, :] * m[:, :k, None]
    fenced = np.where(m[:, :, None], s.data, -np.inf)
    any_valid = m.any(axis=1)
    pooled = np.where(any_valid[:, None], fenced.max(axis=1), 0.0)
    pooled = pooled.astype(s.dtype, copy=False)
    argmax = fenced.argmax(axis=1)                       # (B, d), first max wins
    out = np.concatenate([latest.reshape(b, k * d), pooled], axis=1)

    def backward(g):
        ds = np.zeros_like(s.data)
        ds[:, :k, :] = g[:, :k * d].reshape(b, k, d) * m[:, :k, None]
        gp = g[:, k * d:]
        rows = np.broadcast_to(np.arange(b)[:, None], (b, d))
        cols = np.broadcast_to(np.arange(d), (b, d))
        sel = np.broadcast_to(any_valid[:, None], (b, d))
        ds[rows[sel], argmax[sel], cols[sel]] += gp[sel]
        accumulate_grad(s, ds)

    return record(out, (s,), backward)


class EncoderLayer:
    def __init__(self, d_model, n_heads, d_ff, rng, dtype):
        def t(arr):
            return Tensor(arr, requires_grad=True, dtype=dtype)

        self.wq = t(glorot(rng, d_model, d_model))
        self.bq = t(np.zeros(d_model))
        self.wk = t(glorot(rng, d_model, d_model))
        self.bk = t(np.zeros(d_model))
        self.wv = t(glorot(rng, d_model, d_model))
        self.bv = t(np.zeros(d_model))
        self.wo = t(glorot(rng, d_model, d_model))
        self.bo = t(np.zeros(d_model))
        self.ln1_gain = t(np.ones(d_model))
        self.ln1_bias = t(np.zeros(d_model))
        self.w1 = t(glorot(rng, d_model, d_ff))
        self.b1 = t(np.zeros(d_ff))
        self.w2 = t(glorot(rng, d_ff, d_model))
        self.b2 = t(np.zeros(d_model))
        self.ln2_gain = t(np.ones(d_model))
        self.ln2_bias = t(np.zeros(d_model))

    def named_tensors(self, prefix):
        yield f"{prefix}.attn.wq", self.wq
        yield f"{prefix}.attn.bq", self.bq
        yield f"{prefix}.attn.wk", self.wk
        yield f"{prefix}.attn.bk", self.bk
        yield f"{prefix}.attn.wv", self.wv
        yield f"{prefix}.attn.bv", self.bv
        yield f"{prefix}.attn.wo", self.wo
        yield f"{prefix}.attn.bo", self.bo
        yield f"{prefix}.ln1.gain", self.ln1_gain
        yield f"{prefix}.ln1.bias", self.ln1_bias
        yield f"{prefix}.ff.w1", self.w1
        yield f"{prefix}.ff.b1", self.b1
        yield f"{prefix}.ff.w2", self.w2
        yield f"{prefix}.ff.b2", self.b2
        yield f"{prefix}.ln2.gain", self.ln2_gain
        yield f"{prefix}.ln2.bias", self.ln2_bias


class TransformerEncoder:
    """Post-norm encoder stack with padded keys masked out of attention."""

    def __init__(self, d_model, n_layers, n_heads, d_ff=None, dropout_rate=0.2,
                 rng=None, dtype=np.float32):
        if n_layers < 1:
            raise ValueError(f"need at least one encoder layer, got {n_layers}")
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        if rng is None:
            rng = np.random.default_rng(0)
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff or 4 * d_model
        self.dropout_rate = dropout_rate
        self.layers = [EncoderLayer(d_model, n_heads, self.d_ff, rng, dtype)
                       for _ in range(n_layers)]

    def named_tensors(self, prefix="enc"):
        for i, layer in enumerate(self.layers):
            yield from layer.named_tensors(f"{prefix}.l{i}")

    def __call__(self, x: Tensor, mask: np.ndarray, training=False, rng=None,
                 attn_sink=None) -> Tensor:
        """Encode (B, N, d_model) with validity mask (B, N).

        Padded positions are excluded as attention keys at every layer and
        zeroed in the output. attn_sink, when given, collects each layer's
        attention weight array for inspection.
        """
        b, n, d = x.shape
        if d != self.d_model:
            raise ValueError(f"input width {d} != encoder width {self.d_model}")
        h = self.n_heads
        dh = d // h
        flat = reshape(x, (b * n, d))
        for layer in self.layers:
            q = self._heads(add_bias(matmul(flat, layer.wq), layer.bq), b, n, h, dh)
            key = self._heads(add_bias(matmul(flat, layer.wk), layer.bk), b, n, h, dh)
            val = self._heads(add_bias(matmul(flat, layer.wv), layer.bv), b, n, h, dh)
            logits = scale(matmul(q, swapaxes(key, 2, 3)), 1.0 / np.sqrt(dh))
            attn = masked_softmax(logits, mask)
            if attn_sink is not None:
                attn_sink.append(attn.data.copy())
            ctx = reshape(swapaxes(matmul(attn, val), 1, 2), (b * n, d))
            ctx = add_bias(matmul(ctx, layer.wo), layer.bo)
            ctx = dropout(ctx, self.dropout_rate, rng, training)
            flat = layer_norm(add(flat, ctx), layer.ln1_gain, layer.ln1_bias)
            ff = add_bias(matmul(relu(add_bias(matmul(flat, layer.w1), layer.b1)),
                                 layer.w2), layer.b2)
            ff = dropout(ff, self.dropout_rate, rng, training)
            flat = layer_norm(add(flat, ff), layer.ln2_gain, layer.ln2_bias)
        return mask_positions(reshape(flat, (b, n, d)), mask)

    @staticmethod
    def _heads(t, b, n, h, dh):
        return swapaxes(reshape(t, (b, n, h, dh)), 1, 2)
