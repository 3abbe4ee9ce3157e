import numpy as np
import pytest

from mmctr.autograd import Tensor, full_grad_check, mul, sum_all
from mmctr.interaction import CrossNetwork, DeepNetwork, combine, feature_vector


def make_cross(dim=4, layers=2, seed=0, dropout=0.0):
    return CrossNetwork(dim, layers, dropout_rate=dropout,
                        rng=np.random.default_rng(seed))


class TestFeatureVector:
    def test_lengths_add_up(self):
        parts = [Tensor(np.zeros((2, 11), np.float32)),
                 Tensor(np.zeros((2, 8), np.float32)),
                 Tensor(np.zeros((2, 66), np.float32))]
        assert feature_vector(parts).shape == (2, 85)

    def test_none_segments_skipped(self):
        a = Tensor(np.ones((2, 3), np.float32))
        b = Tensor(np.full((2, 2), 2.0, np.float32))
        out = feature_vector([a, None, b])
        assert out.data.tolist() == [[1, 1, 1, 2, 2], [1, 1, 1, 2, 2]]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            feature_vector([None, None])


class TestCrossNetwork:
    def test_zero_params_is_identity_bitwise(self):
        net = make_cross(dim=5, layers=3)
        for w in net.weights:
            w.data[:] = 0
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(3, 5)).astype(np.float32))
        out = net(x)
        assert np.array_equal(out.data, x.data)

    def test_ones_bias_doubles_input(self):
        net = make_cross(dim=4, layers=1)
        net.weights[0].data[:] = 0
        net.biases[0].data[:] = 1
        x = Tensor(np.array([[1.0, -2.0, 3.0, 0.5]], np.float32))
        out = net(x)
        assert np.array_equal(out.data, 2 * x.data)

    def test_identity_weight_hand_case(self):
        # f=[1,2], W=I, b=0: f*(W f + 0) + f = f*f + f = [2, 6]
        net = make_cross(dim=2, layers=1)
        net.weights[0].data[:] = np.eye(2, dtype=np.float32)
        net.biases[0].data[:] = 0
        out = net(Tensor(np.array([[1.0, 2.0]], np.float32)))
        assert out.data.tolist() == [[2.0, 6.0]]

    def test_zero_depth_is_identity(self):
        net = make_cross(dim=3, layers=0)
        x = Tensor(np.random.default_rng(2).normal(size=(2, 3)).astype(np.float32))
        assert net(x) is x

    def test_negative_depth_rejected(self):
        with pytest.raises(ValueError):
            make_cross(layers=-1)

    def test_gradients(self):
        net = CrossNetwork(4, 2, dropout_rate=0.0,
                           rng=np.random.default_rng(3), dtype=np.float64)
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(3, 4)))
        w = Tensor(rng.uniform(0.5, 1.5, (3, 4)))
        worst, _ = full_grad_check(lambda: sum_all(mul(net(x), w)),
                                   net.named_tensors(), eps=1e-4)
        assert worst < 1e-3

    def test_dropout_hits_preproduct_term_not_residual(self):
        # W=0, b=1: the affine term is all ones, so after inverted dropout at
        # p=0.5 each coordinate is either x0 (dropped) or x0*2 + x0 (kept)
        net = make_cross(dim=64, layers=1, dropout=0.5)
        net.weights[0].data[:] = 0
        net.biases[0].data[:] = 1
        x = Tensor(np.full((1, 64), 5.0, np.float32))
        out = net(x, training=True, rng=np.random.default_rng(0)).data
        assert set(np.unique(out)) == {5.0, 15.0}


class TestDeepNetwork:
    def test_zero_params_give_zero_output(self):
        net = DeepNetwork(4, (8, 3), rng=np.random.default_rng(0))
        for w in net.weights:
            w.data[:] = 0
        x = Tensor(np.random.default_rng(1).normal(size=(2, 4)).astype(np.float32))
        assert np.array_equal(net(x).data, np.zeros((2, 3), np.float32))

    def test_single_relu_layer_oracle(self):
        net = DeepNetwork(4, (4,), rng=np.random.default_rng(0))
        net.weights[0].data[:] = np.eye(4, dtype=np.float32)
        net.biases[0].data[:] = 0
        out = net(Tensor(np.array([[1.0, -1.0, 0.0, 0.0]], np.float32)))
        assert out.data.tolist() == [[1.0, 0.0, 0.0, 0.0]]

    def test_output_width_is_last_hidden(self):
        net = DeepNetwork(10, (1024, 512, 256), rng=np.random.default_rng(0))
        x = Tensor(np.zeros((1, 10), np.float32))
        assert net(x).shape == (1, 256)
        assert net.output_dim == 256

    def test_needs_hidden_layer(self):
        with pytest.raises(ValueError):
            DeepNetwork(4, ())

    def test_gradients(self):
        net = DeepNetwork(3, (5, 2), rng=np.random.default_rng(5),
                          dtype=np.float64)
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(4, 3)))
        w = Tensor(rng.uniform(0.5, 1.5, (4, 2)))
        worst, _ = full_grad_check(lambda: sum_all(mul(net(x), w)),
                                   net.named_tensors(), eps=1e-4)
        assert worst < 1e-3


class TestCombine:
    def test_lengths(self):
        c = Tensor(np.zeros((2, 85), np.float32))
        d = Tensor(np.zeros((2, 256), np.float32))
        assert combine(c, d).shape == (2, 341)

    def test_zero_inputs_zero_output(self):
        out = combine(Tensor(np.zeros((1, 2), np.float32)),
                      Tensor(np.zeros((1, 3), np.float32)))
        assert np.array_equal(out.data, np.zeros((1, 5), np.float32))
