"""SGD training loop with step-decay learning rate, early stopping and checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import batch_sampler, query_database_split
from .evaluation import recall_at_n
from .losses import LOSSES, Margins, anchor_loss, msml_loss
from .mining import MiningBatch, MiningError
from .model import Mlp, MlpConfig, config_hash

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "quitlab-checkpoint"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("epoch", "mean_loss", "lr", "val_recall1", "wall_ms")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "quit_trihard"
    k: int = 2
    margins: Margins = field(default_factory=Margins)
    metric: str = "squared_l2"
    lr0: float = 1e-4
    lr_decay: float = 0.5
    lr_step_epochs: int = 5
    early_stop_patience: int = 10
    max_epochs: int = 30
    places_per_batch: int = 8
    views_per_place: int = 8
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.margins, dict):
            object.__setattr__(self, "margins", Margins(**self.margins))
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if self.early_stop_patience < 1 or self.max_epochs < 1 or self.lr_step_epochs < 1:
            raise ValueError("early_stop_patience, max_epochs and lr_step_epochs must be >= 1")


def learning_rate(epoch: int, tc: TrainConfig) -> float:
    return tc.lr0 * tc.lr_decay ** (epoch // tc.lr_step_epochs)


class Sgd:
    """Plain SGD, no momentum."""

    def step(self, params, grads, lr):
        for p, g in zip(params, grads):
            p -= lr * g


@dataclass
class Checkpoint:
    model: Mlp
    epoch: int
    best_val_recall1: float
    rng_state: dict
    config_hash: str
    train_config: TrainConfig

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config_hash": self.config_hash,
            "epoch": self.epoch,
            "best_val_recall1": self.best_val_recall1,
            "rng_state": self.rng_state,
            "train_config": asdict(self.train_config),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} file")
        return cls(Mlp.from_dict(d["model"]), d["epoch"], d["best_val_recall1"], d["rng_state"],
                   d["config_hash"], TrainConfig(**d["train_config"]))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ckpt.to_dict(), fh)


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        return Checkpoint.from_dict(json.load(fh))


def batch_loss(batch: MiningBatch, tc: TrainConfig, rng: np.random.Generator | None = None):
    """Mean per-anchor loss over the batch and its gradient w.r.t. every embedding.

    Returns ``(value, grad, n_tuples)``; anchors whose tuple cannot be mined are
    skipped, and ``n_tuples == 0`` means the batch is starved.  msml contributes a
    single batch-level tuple.
    """
    n = len(batch)
    if tc.loss == "msml":
        try:
            res = msml_loss(batch, tc.margins, tc.metric)
        except MiningError:
            return 0.0, np.zeros_like(batch.embeddings), 0
        return res.value, res.batch_gradient(n), 1
    total, grad, count = 0.0, np.zeros_like(batch.embeddings), 0
    for a in batch.anchor_positions():
        try:
            res = anchor_loss(tc.loss, batch.with_anchor(a), tc.k, tc.margins, tc.metric, rng)
        except MiningError:
            continue
        total += res.value
        grad += res.batch_gradient(n)
        count += 1
    if count == 0:
        return 0.0, grad, 0
    return total / count, grad / count, count


def embed(model: Mlp, records) -> np.ndarray:
    return model.forward(np.stack([r.features for r in records]))


def validation_recall1(model: Mlp, records, metric: str = "squared_l2") -> float:
    queries, database = query_database_split(records)
    if not queries or not database:
        return 0.0
    report = recall_at_n(queries, embed(model, queries), database, embed(model, database), (1,), metric=metric)
    return report.recall_at[1]


def train(train_records, val_records, tc: TrainConfig, mc: MlpConfig, optimizer=None, model: Mlp | None = None):
    """Train an embedding network; returns ``(best Checkpoint, per-epoch log rows)``.

    Stops at ``max_epochs`` or once ``early_stop_patience`` epochs pass without a
    strict improvement of validation Recall@1.
    """
    optimizer = optimizer or Sgd()
    model = model.copy() if model is not None else Mlp(mc)
    rng = np.random.default_rng([tc.seed, 1])
    chash = config_hash(tc, mc)
    best = None
    best_epoch, best_r1 = -1, -np.inf
    rows = []
    for epoch in range(tc.max_epochs):
        t0 = time.perf_counter()
        lr = learning_rate(epoch, tc)
        losses = []
        for b, batch in enumerate(batch_sampler(train_records, tc.places_per_batch, tc.views_per_place, tc.seed, epoch)):
            emb, cache = model.forward(batch.embeddings, return_cache=True)
            value, grad, count = batch_loss(batch.with_embeddings(emb), tc, rng)
            if count == 0:
                log.warning("epoch %d batch %d: no valid tuple, skipped", epoch, b)
                continue
            optimizer.step(model.params, model.backward(cache, grad), lr)
            losses.append(value)
        if not losses:
            raise TrainingError(f"epoch {epoch}: every batch was starved of valid tuples")
        r1 = validation_recall1(model, val_records, tc.metric)
        if r1 > best_r1:
            best_r1, best_epoch = r1, epoch
            best = Checkpoint(model.copy(), epoch, r1, rng.bit_generator.state, chash, tc)
        rows.append({
            "epoch": epoch,
            "mean_loss": float(np.mean(losses)),
            "lr": lr,
            "val_recall1": r1,
            "wall_ms": round((time.perf_counter() - t0) * 1000, 3),
        })
        log.info("epoch %d loss %.6f lr %g val R@1 %.4f", epoch, rows[-1]["mean_loss"], lr, r1)
        if epoch - best_epoch >= tc.early_stop_patience:
            log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break
    return best, rows


def write_training_log(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({c: (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in LOG_COLUMNS})
