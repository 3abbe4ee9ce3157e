"""Self-contained training and inference engine for multimodal sequential
CTR prediction: frozen multimodal item vectors, a target-aware Transformer
over user histories, parallel cross/deep feature interaction, and a sigmoid
head, trained with Adam under AUC-monitored early stopping."""

from .autograd import Graph, ShapeError, Tensor, grad_check
from .config import ConfigError, TrainConfig, parse_config
from .data import (Batch, DataError, ImpressionSample, ItemRecord, ItemTable,
                   ParseError, SampleSet, batches, gen_synthetic, load_items,
                   load_samples, pad_history)
from .metrics import EvalResult, UndefinedMetricError, auc, auc_bruteforce, logloss
from .model import CtrModel
from .training import Adam, EarlyStopping, evaluate, grid_search, train

__version__ = "0.1.0"
