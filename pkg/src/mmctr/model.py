"""End-to-end CTR model: embeddings, sequence encoder, feature interaction,
and the scoring head, wired per the run configuration's ablation switches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rng_streams
from .autograd import Tensor
from .config import ConfigError, TrainConfig
from .data import Batch, ItemTable
from .embeddings import EmbeddingTable, FrozenMMTable, embed_items, embed_side
from .encoder import TransformerEncoder, build_seq_input, masked_mean, readout
from .head import PredictionHead, bce_with_logits, predict_probs
from .interaction import CrossNetwork, DeepNetwork, combine, feature_vector


@dataclass
class ModelDims:
    """Derived layer widths for one configuration."""

    d_e: int
    d_mm: int
    n_item_features: int
    n_side: int
    d_item: int          # |T| * d_e, plus d_mm unless the mm switch is off
    d_side: int
    d_t: int             # encoder width, 2 * d_item
    d_seq: int           # sequence summary width entering the interaction stage
    d_f: int             # concatenated feature vector width
    d_out: int           # head input width

    @classmethod
    def from_config(cls, cfg: TrainConfig):
        d_item = cfg.n_item_features * cfg.embedding_dim
        if cfg.use_multimodal:
            d_item += cfg.d_mm
        d_side = cfg.n_side_features * cfg.embedding_dim
        d_t = 2 * d_item
        d_seq = (cfg.k + 1) * d_t if cfg.use_transformer else d_item
        d_f = d_item + d_side + d_seq
        d_out = d_f + (cfg.deep_hidden[-1] if cfg.use_dcnv2 else 0)
        return cls(d_e=cfg.embedding_dim, d_mm=cfg.d_mm,
                   n_item_features=cfg.n_item_features,
                   n_side=cfg.n_side_features, d_item=d_item, d_side=d_side,
                   d_t=d_t, d_seq=d_seq, d_f=d_f, d_out=d_out)


class CtrModel:
    """Trainable model over one item catalog.

    cat_codes and mm_vectors are dense arrays indexed by item id (row 0 is
    the pad row); side_vocab lists one vocabulary size per side feature.
    """

    def __init__(self, config: TrainConfig, cat_codes, mm_vectors, side_vocab,
                 dtype=np.float32):
        config.validate()
        cat_codes = np.asarray(cat_codes, dtype=np.int64)
        mm_vectors = np.asarray(mm_vectors)
        if cat_codes.shape[1] != config.n_item_features - 1:
            raise ConfigError(
                f"data carries {cat_codes.shape[1] + 1} item features but config "
                f"declares n_item_features={config.n_item_features}")
        if mm_vectors.shape[1] != config.d_mm:
            raise ConfigError(f"data d_mm={mm_vectors.shape[1]} but config "
                              f"declares d_mm={config.d_mm}")
        if mm_vectors.shape[0] != cat_codes.shape[0]:
            raise ConfigError("item feature arrays disagree on catalog size")
        side_vocab = [int(v) for v in side_vocab]
        if len(side_vocab) != config.n_side_features:
            raise ConfigError(
                f"data carries {len(side_vocab)} side features but config "
                f"declares n_side_features={config.n_side_features}")

        self.config = config
        self.dims = ModelDims.from_config(config)
        self.dtype = np.dtype(dtype)
        self.cat_codes = cat_codes
        self.mm_table = FrozenMMTable(mm_vectors, dtype=self.dtype)
        seed = config.seed

        embed_rng = rng_streams.init_stream(seed, rng_streams.INIT_EMBED)
        d_e = config.embedding_dim
        self.id_table = EmbeddingTable("item_id", cat_codes.shape[0], d_e,
                                       embed_rng, self.dtype)
        self.cat_tables = [
            EmbeddingTable(f"cat{j}", int(cat_codes[:, j].max()) + 1, d_e,
                           embed_rng, self.dtype)
            for j in range(cat_codes.shape[1])]
        self.side_tables = [
            EmbeddingTable(f"side{j}", side_vocab[j], d_e, embed_rng, self.dtype)
            for j in range(config.n_side_features)]

        if config.use_transformer:
            self.encoder = TransformerEncoder(
                self.dims.d_t, config.n_encoder_layers, config.n_heads,
                d_ff=config.ffn_dim or None,
                dropout_rate=config.transformer_dropout,
                rng=rng_streams.init_stream(seed, rng_streams.INIT_ENCODER),
                dtype=self.dtype)
        else:
            self.encoder = None

        if config.use_dcnv2:
            self.cross = CrossNetwork(
                self.dims.d_f, config.n_cross_layers,
                dropout_rate=config.cross_net_dropout,
                rng=rng_streams.init_stream(seed, rng_streams.INIT_CROSS),
                dtype=self.dtype)
            self.deep = DeepNetwork(
                self.dims.d_f, config.deep_hidden,
                rng=rng_streams.init_stream(seed, rng_streams.INIT_DEEP),
                dtype=self.dtype)
        else:
            self.cross = None
            self.deep = None

        self.head = PredictionHead(
            self.dims.d_out, config.head_hidden,
            rng=rng_streams.init_stream(seed, rng_streams.INIT_HEAD),
            dtype=self.dtype)
        self._dropout_rng = rng_streams.stream(seed, rng_streams.STREAM_DROPOUT)

    @classmethod
    def from_items(cls, config: TrainConfig, items: ItemTable, side_vocab,
                   dtype=np.float32):
        if items.n_features != config.n_item_features:
            raise ConfigError(f"items file declares |T|={items.n_features} but "
                              f"config declares {config.n_item_features}")
        cat_codes, mm = items.feature_arrays()
        return cls(config, cat_codes, mm, side_vocab, dtype=dtype)

    # -- parameters --------------------------------------------------------

    def named_params(self):
        """Trainable tensors only; the multimodal table is not listed."""
        for table in [self.id_table, *self.cat_tables, *self.side_tables]:
            yield f"embed.{table.name}", table.weights
        if self.encoder is not None:
            yield from self.encoder.named_tensors("enc")
        if self.cross is not None:
            yield from self.cross.named_tensors("cross")
        if self.deep is not None:
            yield from self.deep.named_tensors("deep")
        yield from self.head.named_tensors("head")

    def frozen_masks(self):
        """Structurally frozen coordinates (pad rows) per parameter name."""
        return {f"embed.{t.name}": t.frozen_mask()
                for t in [self.id_table, *self.cat_tables, *self.side_tables]}

    def zero_grads(self):
        for _, p in self.named_params():
            p.grad = None

    # -- forward -----------------------------------------------------------

    def forward(self, batch: Batch, training=False, attn_sink=None) -> Tensor:
        """Score a batch, returning (B,) logits."""
        cfg = self.config
        mm = self.mm_table if cfg.use_multimodal else None
        item_seq = embed_items(batch.history_ids, self.id_table,
                               self.cat_tables, self.cat_codes, mm)
        target = embed_items(batch.target_ids, self.id_table,
                             self.cat_tables, self.cat_codes, mm)
        side = embed_side(batch.side_codes, self.side_tables)

        mask = batch.history_mask
        if self.encoder is not None:
            seq_in = build_seq_input(item_seq, target)
            encoded = self.encoder(seq_in, mask, training=training,
                                   rng=self._dropout_rng, attn_sink=attn_sink)
            seq_repr = readout(encoded, mask, cfg.k)
        else:
            seq_repr = masked_mean(item_seq, mask)

        fi = feature_vector([target, side, seq_repr])
        if self.cross is not None:
            c_out = self.cross(fi, training=training, rng=self._dropout_rng)
            d_out = self.deep(fi)
            f_out = combine(c_out, d_out)
        else:
            f_out = fi
        return self.head(f_out)

    def loss(self, batch: Batch, training=True) -> Tensor:
        return bce_with_logits(self.forward(batch, training=training), batch.labels)

    def predict(self, batch: Batch) -> np.ndarray:
        """Eval-mode click probabilities for a batch."""
        return predict_probs(self.forward(batch, training=False))

    # -- state -------------------------------------------------------------

    FROZEN_MM = "frozen.mm"
    FROZEN_CAT = "frozen.cat_codes"

    def state_tensors(self):
        """Everything a checkpoint needs to rebuild and score: trainable
        parameters plus the frozen item catalog arrays."""
        out = [(name, p.data) for name, p in self.named_params()]
        out.append((self.FROZEN_MM, np.asarray(self.mm_table.vectors)))
        out.append((self.FROZEN_CAT, self.cat_codes.astype(np.float32)))
        return out

    def param_snapshot(self):
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_snapshot(self, snapshot):
        for name, p in self.named_params():
            p.data = snapshot[name].copy()


def side_vocab_sizes(sample_sets, n_side) -> list[int]:
    """Smallest vocabularies covering the side codes seen in the given sets."""
    sizes = [1] * n_side
    for ss in sample_sets:
        for s in ss.samples:
            for j, code in enumerate(s.side_features):
                if code < 0:
                    raise ValueError(f"negative side code {code}")
                sizes[j] = max(sizes[j], code + 1)
    return sizes
