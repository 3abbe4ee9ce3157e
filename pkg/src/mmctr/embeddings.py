"""Categorical embedding tables and the frozen multimodal vector table.

Row 0 of every table belongs to the reserved padding id: it is pinned to
zero, never receives gradient, and is excluded from optimizer updates.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, accumulate_grad, concat, record

EMBED_INIT_STD = 0.01


class EmbeddingTable:
    """A vocab_size x dim trainable lookup table."""

    def __init__(self, name, vocab_size, dim, rng=None, dtype=np.float32,
                 trainable=True):
        if vocab_size < 1 or dim < 1:
            raise ValueError(f"table {name}: vocab_size and dim must be >= 1")
        if rng is None:
            w = np.zeros((vocab_size, dim))
        else:
            w = rng.normal(0.0, EMBED_INIT_STD, size=(vocab_size, dim))
        w[0] = 0.0
        self.name = name
        self.vocab_size = vocab_size
        self.dim = dim
        self.weights = Tensor(w, requires_grad=trainable, dtype=dtype)

    def frozen_mask(self) -> np.ndarray:
        """True at coordinates the optimizer must never move (the pad row)."""
        m = np.zeros((self.vocab_size, self.dim), dtype=bool)
        m[0] = True
        return m

    def lookup(self, ids) -> Tensor:
        """Gather rows for an integer id array of any shape.

        The backward pass scatter-adds output gradients into the table,
        skipping row 0, so repeated ids accumulate additively.
        """
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            bad = ids.min() if ids.min() < 0 else ids.max()
            raise IndexError(f"table {self.name}: id {bad} out of range "
                             f"[0, {self.vocab_size})")
        weights = self.weights
        out = weights.data[ids]

        def backward(g):
            if not weights.requires_grad:
                return
            if weights.grad is None:
                weights.grad = np.zeros_like(weights.data)
            flat = ids.reshape(-1)
            keep = flat != 0
            np.add.at(weights.grad, flat[keep], g.reshape(-1, self.dim)[keep])

        return record(out, (weights,), backward)


class FrozenMMTable:
    """Read-only item id -> multimodal vector map; id 0 is the zero vector."""

    def __init__(self, vectors, dtype=np.float32):
        arr = np.array(vectors, dtype=dtype)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-d vector table, got shape {arr.shape}")
        arr[0] = 0.0
        arr.setflags(write=False)
        self.vectors = arr

    @property
    def d_mm(self):
        return self.vectors.shape[1]

    def lookup(self, ids) -> Tensor:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vectors.shape[0]):
            bad = ids.min() if ids.min() < 0 else ids.max()
            raise IndexError(f"multimodal table: id {bad} out of range "
                             f"[0, {self.vectors.shape[0]})")
        return Tensor(self.vectors[ids])


def embed_items(ids, id_table: EmbeddingTable, cat_tables, cat_codes,
                mm_table: FrozenMMTable | None) -> Tensor:
    """Full item representation: id and categorical embeddings concatenated,
    with the frozen multimodal vector appended unless ablated away.

    ids may be (B,) for targets or (B, N) for histories; the output appends
    a feature axis of width |T| * d_e (+ d_mm when mm_table is given).
    """
    ids = np.asarray(ids)
    parts = [id_table.lookup(ids)]
    for j, table in enumerate(cat_tables):
        parts.append(table.lookup(cat_codes[ids, j]))
    if mm_table is not None:
        parts.append(mm_table.lookup(ids))
    return concat(parts, axis=-1) if len(parts) > 1 else parts[0]


def embed_side(codes, side_tables) -> Tensor | None:
    """Concatenated side-feature embeddings, or None when there are none."""
    if not side_tables:
        return None
    codes = np.asarray(codes)
    parts = [table.lookup(codes[:, j]) for j, table in enumerate(side_tables)]
    return concat(parts, axis=-1) if len(parts) > 1 else parts[0]
