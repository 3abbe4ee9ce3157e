import math

import numpy as np
import pytest

from mmctr import config as cfgmod
from mmctr.autograd import Graph
from mmctr.config import ConfigError, TrainConfig
from mmctr.data import SampleSet, batches, gen_synthetic
from mmctr.head import bce_with_logits, predict_probs
from mmctr.model import CtrModel, ModelDims, side_vocab_sizes

TINY = dict(embedding_dim=4, d_mm=4, N=6, k=2, n_encoder_layers=1, n_heads=1,
            n_cross_layers=1, deep_hidden=(8,), head_hidden=(4, 2),
            transformer_dropout=0.0, cross_net_dropout=0.0, batch_size=8)


def tiny_setup(seed=0, n_samples=32, **overrides):
    cfg = cfgmod.replace(TrainConfig(), **{**TINY, **overrides})
    items, samples, _ = gen_synthetic(seed=seed, n_users=8, n_items=12,
                                      d_mm=cfg.d_mm, n_positions=cfg.N,
                                      n_samples=n_samples,
                                      positive_rate_target=0.5)
    ss = SampleSet(n_positions=cfg.N, n_side=2, samples=samples)
    vocab = side_vocab_sizes([ss], cfg.n_side_features)
    model = CtrModel.from_items(cfg, items, vocab)
    return cfg, items, ss, model


class TestModelDims:
    def test_full_model_widths(self):
        cfg = cfgmod.replace(TrainConfig(), embedding_dim=4, d_mm=3,
                             n_item_features=2, n_side_features=2, k=2, N=6)
        dims = ModelDims.from_config(cfg)
        assert dims.d_item == 11          # 2*4 + 3
        assert dims.d_side == 8
        assert dims.d_t == 22
        assert dims.d_seq == 66           # (k+1) * d_t
        assert dims.d_f == 85
        assert dims.d_out == 85 + 256

    def test_without_transformer(self):
        cfg = cfgmod.replace(TrainConfig(), embedding_dim=4, d_mm=3,
                             n_item_features=2, n_side_features=2, k=2, N=6,
                             use_transformer=False)
        assert ModelDims.from_config(cfg).d_f == 30   # 11 + 8 + 11

    def test_without_multimodal(self):
        cfg = cfgmod.replace(TrainConfig(), embedding_dim=4, d_mm=3,
                             n_item_features=2, use_multimodal=False)
        assert ModelDims.from_config(cfg).d_item == 8

    def test_without_dcnv2(self):
        cfg = cfgmod.replace(TrainConfig(), use_dcnv2=False)
        dims = ModelDims.from_config(cfg)
        assert dims.d_out == dims.d_f


class TestForward:
    def test_zero_params_give_half_probability_and_ln2_loss(self):
        _, _, ss, model = tiny_setup()
        for _, p in model.named_params():
            p.data[:] = 0
        batch = next(batches(ss, 8))
        with Graph() as g:
            logits = model.forward(batch, training=True)
            loss = bce_with_logits(logits, batch.labels)
        assert np.all(predict_probs(logits) == 0.5)
        assert loss.item() == pytest.approx(math.log(2), abs=1e-6)

    def test_padding_mutation_invariance(self):
        cfg, _, ss, model = tiny_setup(seed=3, n_samples=24)
        batch = next(batches(ss, 24))
        lengths = batch.history_mask.sum(axis=1)
        assert lengths.min() == 0 and lengths.max() == cfg.N
        base = model.predict(batch)
        mutated = batch
        rng = np.random.default_rng(5)
        pad = ~mutated.history_mask
        mutated.history_ids[pad] = rng.integers(1, 13, size=int(pad.sum()))
        after = model.predict(mutated)
        assert np.max(np.abs(after - base)) < 1e-7

    def test_all_switch_combinations_run(self):
        for mm in (True, False):
            for tr in (True, False):
                for dc in (True, False):
                    cfg, _, ss, model = tiny_setup(
                        use_multimodal=mm, use_transformer=tr, use_dcnv2=dc)
                    batch = next(batches(ss, 8))
                    probs = model.predict(batch)
                    assert probs.shape == (8,)
                    assert np.all((probs > 0) & (probs < 1))

    def test_same_seed_same_init(self):
        _, _, _, a = tiny_setup(seed=2)
        _, _, _, b = tiny_setup(seed=2)
        for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_ablations_share_common_initializations(self):
        _, _, _, full = tiny_setup(seed=4)
        _, _, _, no_tr = tiny_setup(seed=4, use_transformer=False)
        a = dict(full.named_params())
        b = dict(no_tr.named_params())
        assert np.array_equal(a["embed.item_id"].data, b["embed.item_id"].data)
        assert np.array_equal(a["head.l0.b"].data, b["head.l0.b"].data)

    def test_loss_helper_matches_manual(self):
        _, _, ss, model = tiny_setup(seed=6)
        batch = next(batches(ss, 8))
        manual = bce_with_logits(model.forward(batch, training=False),
                                 batch.labels).item()
        assert model.loss(batch, training=False).item() == manual


class TestConstruction:
    def test_dmm_mismatch_rejected(self):
        cfg, items, ss, _ = tiny_setup()
        bad = cfgmod.replace(cfg, d_mm=8)
        with pytest.raises(ConfigError, match="d_mm"):
            CtrModel.from_items(bad, items, side_vocab_sizes([ss], 2))

    def test_feature_count_mismatch_rejected(self):
        cfg, items, ss, _ = tiny_setup()
        bad = cfgmod.replace(cfg, n_item_features=3)
        with pytest.raises(ConfigError, match="T"):
            CtrModel.from_items(bad, items, side_vocab_sizes([ss], 2))

    def test_frozen_masks_cover_embedding_tables(self):
        _, _, _, model = tiny_setup()
        masks = model.frozen_masks()
        assert set(masks) == {"embed.item_id", "embed.cat0", "embed.side0",
                              "embed.side1"}
        for name, mask in masks.items():
            assert mask[0].all() and not mask[1:].any()

    def test_mm_table_never_in_params(self):
        _, _, _, model = tiny_setup()
        names = [n for n, _ in model.named_params()]
        assert all("mm" not in n for n in names)

    def test_side_vocab_sizes(self):
        ss = SampleSet(2, 2, [])
        from mmctr.data import ImpressionSample
        ss.samples.append(ImpressionSample(1, [], 1, [3, 1], 0))
        ss.samples.append(ImpressionSample(1, [], 1, [0, 4], 1))
        assert side_vocab_sizes([ss], 2) == [4, 5]
