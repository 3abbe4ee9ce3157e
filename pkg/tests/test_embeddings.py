import numpy as np
import pytest

from mmctr.autograd import Graph, Tensor, mul, sum_all
from mmctr.embeddings import (EmbeddingTable, FrozenMMTable, embed_items,
                              embed_side)


def make_table(vocab=5, dim=3, seed=0):
    return EmbeddingTable("t", vocab, dim, np.random.default_rng(seed))


class TestLookup:
    def test_pad_ids_give_zeros(self):
        t = make_table()
        out = t.lookup(np.zeros((2, 3), np.int64))
        assert np.array_equal(out.data, np.zeros((2, 3, 3), np.float32))

    def test_gather_is_exact_row(self):
        t = make_table()
        out = t.lookup(np.array([2, 4]))
        assert np.array_equal(out.data[0], t.weights.data[2])
        assert np.array_equal(out.data[1], t.weights.data[4])

    def test_repeated_id_accumulates(self):
        t = make_table()
        with Graph() as g:
            loss = sum_all(t.lookup(np.array([3, 3])))
        g.backward(loss)
        expected = np.zeros((5, 3), np.float32)
        expected[3] = 2.0
        assert np.array_equal(t.weights.grad, expected)

    def test_scatter_matches_onehot_matmul_oracle(self):
        # gradient of sum(W[ids] * U) equals onehot(ids)^T @ U
        rng = np.random.default_rng(7)
        t = make_table(vocab=6, dim=4, seed=1)
        ids = rng.integers(1, 6, size=10)
        upstream = rng.normal(size=(10, 4)).astype(np.float32)
        with Graph() as g:
            loss = sum_all(mul(t.lookup(ids), Tensor(upstream)))
        g.backward(loss)
        onehot = np.zeros((10, 6), np.float32)
        onehot[np.arange(10), ids] = 1.0
        np.testing.assert_allclose(t.weights.grad, onehot.T @ upstream, rtol=1e-6)

    def test_row_zero_never_gets_gradient(self):
        t = make_table()
        with Graph() as g:
            loss = sum_all(t.lookup(np.array([0, 0, 1])))
        g.backward(loss)
        assert np.all(t.weights.grad[0] == 0)
        assert np.all(t.weights.grad[1] == 1)

    def test_out_of_vocab_names_id(self):
        t = make_table(vocab=5)
        with pytest.raises(IndexError, match="5"):
            t.lookup(np.array([1, 5]))

    def test_row_zero_initialized_to_zero(self):
        assert np.all(make_table().weights.data[0] == 0)


class TestFrozenMM:
    def test_readonly_and_pad_row(self):
        mm = FrozenMMTable(np.ones((4, 2), np.float32))
        assert np.all(mm.vectors[0] == 0)
        with pytest.raises(ValueError):
            mm.vectors[1] = 5.0

    def test_lookup_requires_no_grad(self):
        mm = FrozenMMTable(np.arange(8, dtype=np.float32).reshape(4, 2))
        out = mm.lookup(np.array([1, 2]))
        assert not out.requires_grad
        assert out.data.tolist() == [[2.0, 3.0], [4.0, 5.0]]

    def test_out_of_range(self):
        mm = FrozenMMTable(np.zeros((4, 2), np.float32))
        with pytest.raises(IndexError, match="9"):
            mm.lookup(np.array([9]))


class TestItemEmbed:
    def _parts(self, d_e=4, d_mm=3, n_items=5, seed=0):
        rng = np.random.default_rng(seed)
        id_table = EmbeddingTable("item_id", n_items + 1, d_e, rng)
        cat_table = EmbeddingTable("cat0", 4, d_e, rng)
        cat_codes = np.zeros((n_items + 1, 1), np.int64)
        cat_codes[1:, 0] = rng.integers(1, 4, n_items)
        mm = FrozenMMTable(rng.normal(size=(n_items + 1, d_mm)).astype(np.float32))
        return id_table, [cat_table], cat_codes, mm

    def test_width_with_multimodal(self):
        id_t, cats, codes, mm = self._parts()
        out = embed_items(np.array([1, 2]), id_t, cats, codes, mm)
        assert out.shape == (2, 2 * 4 + 3)   # |T|*d_e + d_mm = 11

    def test_width_without_multimodal(self):
        id_t, cats, codes, _ = self._parts()
        out = embed_items(np.array([1, 2]), id_t, cats, codes, None)
        assert out.shape == (2, 8)

    def test_padding_id_gives_zero_vector(self):
        id_t, cats, codes, mm = self._parts()
        out = embed_items(np.array([0]), id_t, cats, codes, mm)
        assert np.array_equal(out.data, np.zeros((1, 11), np.float32))

    def test_batch_of_sequences(self):
        id_t, cats, codes, mm = self._parts()
        out = embed_items(np.array([[1, 2, 0], [3, 0, 0]]), id_t, cats, codes, mm)
        assert out.shape == (2, 3, 11)


class TestSideEmbed:
    def test_width(self):
        rng = np.random.default_rng(0)
        tables = [EmbeddingTable(f"side{j}", 6, 64, rng) for j in range(2)]
        out = embed_side(np.array([[1, 2], [3, 4]]), tables)
        assert out.shape == (2, 128)

    def test_zero_codes_give_zero_vector(self):
        tables = [EmbeddingTable("side0", 6, 8, np.random.default_rng(0))]
        out = embed_side(np.array([[0], [0]]), tables)
        assert np.array_equal(out.data, np.zeros((2, 8), np.float32))

    def test_no_side_features(self):
        assert embed_side(np.zeros((3, 0), np.int64), []) is None
