"""Adam optimization, the epoch loop with AUC-monitored early stopping,
and the hyperparameter sweep harness."""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_streams
from .autograd import Graph
from .config import ConfigError, TrainConfig, replace
from .data import SampleSet, batches
from .head import bce_with_logits
from .metrics import EvalResult, auc, logloss
from .model import CtrModel, side_vocab_sizes


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch_index, value):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, "
                         f"batch {batch_index}")
        self.epoch = epoch
        self.batch_index = batch_index


class Adam:
    """Standard Adam over named tensors.

    Per step: m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2, with bias
    correction m/(1-b1^t) and v/(1-b2^t), then
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps). Coordinates marked
    frozen (embedding pad rows) are never moved.
    """

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 frozen=None):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}
        self.frozen = dict(frozen) if frozen else {}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        """Apply one update; every parameter must carry a gradient."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            if p.grad is None:
                raise ValueError(f"missing gradient for trainable tensor '{name}'")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            delta = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            mask = self.frozen.get(name)
            if mask is not None:
                delta[mask] = 0.0
            p.data -= delta.astype(p.data.dtype, copy=False)


@dataclass
class EarlyStopping:
    """Stop after `patience` consecutive epochs without a strictly better
    validation AUC, remembering which epoch was best."""

    patience: int = 5
    best_val_auc: float = -math.inf
    best_epoch: int = 0
    epochs_since_improve: int = 0

    def update(self, epoch: int, val_auc: float) -> bool:
        if val_auc > self.best_val_auc:
            self.best_val_auc = val_auc
            self.best_epoch = epoch
            self.epochs_since_improve = 0
            return True
        self.epochs_since_improve += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_improve >= self.patience


@dataclass
class TrainResult:
    model: CtrModel
    best_epoch: int
    best_val_auc: float
    best_val_logloss: float
    epochs_run: int
    stopped_early: bool
    history: list = field(default_factory=list)


def evaluate(model: CtrModel, sample_set: SampleSet, batch_size=None) -> EvalResult:
    """Deterministic eval-mode pass over a split."""
    bs = batch_size or model.config.batch_size
    probs = np.concatenate([model.predict(b) for b in batches(sample_set, bs)]) \
        if len(sample_set) else np.zeros(0, dtype=np.float32)
    labels = sample_set.labels()
    return EvalResult(auc=auc(probs, labels), logloss=logloss(probs, labels),
                      n_samples=len(sample_set), n_pos=int(labels.sum()))


def train(config: TrainConfig, items_or_model, train_set: SampleSet,
          val_set: SampleSet, run_dir=None, verbose=True) -> TrainResult:
    """Run shuffled minibatch epochs until early stopping or max_epochs.

    items_or_model is either an ItemTable (a fresh model is built from it)
    or a prebuilt CtrModel. Per-epoch validation metrics go to stdout (when
    verbose) and to <run_dir>/metrics.jsonl; the returned model carries the
    parameters of the best-AUC epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation splits must be non-empty")
    if isinstance(items_or_model, CtrModel):
        model = items_or_model
    else:
        vocab = side_vocab_sizes([train_set, val_set], config.n_side_features)
        model = CtrModel.from_items(config, items_or_model, vocab)
    for ss, name in ((train_set, "train"), (val_set, "validation")):
        if ss.n_positions != config.N:
            raise ConfigError(f"{name} split has N={ss.n_positions} but config "
                              f"declares N={config.N}")

    optimizer = Adam(model.named_params(), config.learning_rate,
                     frozen=model.frozen_masks())
    shuffle_rng = rng_streams.stream(config.seed, rng_streams.STREAM_SHUFFLE)
    stopper = EarlyStopping(patience=config.patience)
    best_state = None
    best_logloss = math.inf
    history = []

    metrics_path = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        metrics_path = os.path.join(run_dir, "metrics.jsonl")
        open(metrics_path, "w").close()

    epochs_run = 0
    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        epoch_seed = int(shuffle_rng.integers(0, 2 ** 31 - 1))
        for bi, batch in enumerate(batches(train_set, config.batch_size,
                                           shuffle_seed=epoch_seed)):
            optimizer.zero_grad()
            with Graph() as graph:
                loss = bce_with_logits(model.forward(batch, training=True),
                                       batch.labels)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, bi, value)
            graph.backward(loss)
            optimizer.step()

        result = evaluate(model, val_set)
        line = result.json_line("val", epoch)
        history.append(json.loads(line))
        if verbose:
            print(line)
        if metrics_path:
            with open(metrics_path, "a", encoding="utf-8") as f:
                f.write(line + "\n")

        if stopper.update(epoch, result.auc):
            best_state = model.param_snapshot()
            best_logloss = result.logloss
        if stopper.should_stop:
            break

    if best_state is not None:
        model.load_snapshot(best_state)
    return TrainResult(model=model, best_epoch=stopper.best_epoch,
                       best_val_auc=stopper.best_val_auc,
                       best_val_logloss=best_logloss, epochs_run=epochs_run,
                       stopped_early=stopper.should_stop, history=history)


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

@dataclass
class TrialResult:
    overrides: dict
    status: str                  # "ok" or "failed"
    best_val_auc: float = math.nan
    val_logloss: float = math.nan
    epochs: int = 0
    error: str = ""


def _trial_configs(grid: dict, mode: str):
    if mode == "one_factor":
        for name, values in grid.items():
            for value in values:
                yield {name: value}
    elif mode == "cartesian":
        names = list(grid)
        for combo in itertools.product(*(grid[n] for n in names)):
            yield dict(zip(names, combo))
    else:
        raise ValueError(f"unknown sweep mode '{mode}'")


def grid_search(grid: dict, base_config: TrainConfig, items,
                train_set: SampleSet, val_set: SampleSet,
                mode="one_factor", verbose=False) -> list[TrialResult]:
    """Train one model per grid point, ranked by best validation AUC.

    Trials that diverge or fail config validation are recorded as failed
    instead of aborting the sweep. Every trial reuses the base seed, so
    results are independent of execution order.
    """
    if not grid:
        raise ConfigError("grid is empty")
    results = []
    for overrides in _trial_configs(grid, mode):
        try:
            cfg = replace(base_config, **overrides)
            out = train(cfg, items, train_set, val_set, verbose=verbose)
            results.append(TrialResult(
                overrides=overrides, status="ok", best_val_auc=out.best_val_auc,
                val_logloss=out.best_val_logloss, epochs=out.epochs_run))
        except (ConfigError, DivergenceError, FloatingPointError) as e:
            results.append(TrialResult(overrides=overrides, status="failed",
                                       error=str(e)))
    results.sort(key=lambda r: (r.status != "ok",
                                -r.best_val_auc if r.status == "ok" else 0.0))
    return results


def format_grid_table(results) -> str:
    """Render sweep results as TSV with a header row."""
    lines = ["hyperparameters\tstatus\tbest_val_auc\tval_logloss\tepochs\terror"]
    for r in results:
        hp = ",".join(f"{k}={v}" for k, v in r.overrides.items())
        aucs = "%.6f" % r.best_val_auc if r.status == "ok" else ""
        ll = "%.6f" % r.val_logloss if r.status == "ok" else ""
        lines.append(f"{hp}\t{r.status}\t{aucs}\t{ll}\t{r.epochs}\t{r.error}")
    return "\n".join(lines) + "\n"
