"""Training loop: triple sampling, lazy Adam, validation-based model selection."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset import BundleDataset, SplitDataset
from .encoder import (EmbeddingState, ModelConfig, backward, forward, init_embeddings,
                      save_checkpoint)
from .evaluator import rank_and_score
from .graph import build_pooling, build_ub_graph, build_ui_graph
from .objectives import LossConfig, TrainBatch, total_loss

log = logging.getLogger(__name__)

TABLES = ("user", "bundle", "item")


class NumericalError(FloatingPointError):
    """Non-finite loss or gradient; carries the offending step's diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.001
    batch_size: int = 2048
    max_epochs: int = 200
    patience: int = 20
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class AdamState:
    exp_avg: dict
    exp_avg_sq: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, state: EmbeddingState) -> "AdamState":
        return cls({k: np.zeros_like(t) for k, t in state.tables().items()},
                   {k: np.zeros_like(t) for k, t in state.tables().items()}, 0)

    def copy(self) -> "AdamState":
        return AdamState({k: v.copy() for k, v in self.exp_avg.items()},
                         {k: v.copy() for k, v in self.exp_avg_sq.items()}, self.step)


class NegativeSampler:
    """Uniform positives from the train split, rejection-sampled negatives."""

    def __init__(self, train_pairs: np.ndarray, num_bundles: int):
        if len(train_pairs) == 0:
            raise ValueError("cannot sample from an empty train split")
        self.pairs = np.asarray(train_pairs, dtype=np.int64)
        self.num_bundles = num_bundles
        self._seen = {}
        for u, b in self.pairs:
            self._seen.setdefault(int(u), set()).add(int(b))
        full = [u for u, s in self._seen.items() if len(s) >= num_bundles]
        if full:
            raise ValueError(
                f"user {full[0]} interacted with every bundle; no negative exists")

    def negative(self, user: int, rng: np.random.Generator) -> int:
        seen = self._seen[user]
        while True:
            b = int(rng.integers(self.num_bundles))
            if b not in seen:
                return b

    def sample(self, rng: np.random.Generator, batch_size: int) -> TrainBatch:
        idx = rng.integers(len(self.pairs), size=batch_size)
        users = self.pairs[idx, 0]
        pos = self.pairs[idx, 1]
        neg = np.array([self.negative(int(u), rng) for u in users], dtype=np.int64)
        return TrainBatch(users, pos, neg)


def sample_batch(train_split, rng: np.random.Generator, batch_size: int,
                 num_bundles: int) -> TrainBatch:
    if isinstance(train_split, NegativeSampler):
        return train_split.sample(rng, batch_size)
    return NegativeSampler(train_split, num_bundles).sample(rng, batch_size)


def adam_step(state: EmbeddingState, adam: AdamState, grads: dict, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8, backend=None):
    """Lazy Adam: rows with an all-zero gradient keep parameters and moments.

    The step counter advances once per call, and bias correction uses it for
    every updated row.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            bad = np.argwhere(~np.isfinite(g))[0]
            raise NumericalError(f"non-finite gradient in {name} table at {tuple(bad)}",
                                 {"table": name, "index": bad.tolist()})
    adam.step += 1
    beta1, beta2 = betas
    bc1 = 1.0 - beta1 ** adam.step
    bc2 = 1.0 - beta2 ** adam.step
    tables = state.tables()
    for name, g in grads.items():
        rows = np.flatnonzero(np.any(g != 0, axis=1))
        if len(rows) == 0:
            continue
        kernels.lazy_adam_rows(tables[name], adam.exp_avg[name], adam.exp_avg_sq[name], g,
                               rows, lr, beta1, beta2, eps, bc1, bc2, backend=backend)
    return state, adam


def train_view(split: SplitDataset) -> BundleDataset:
    """The dataset seen during training: user-bundle pairs of the train split only."""
    base = split.base
    return BundleDataset(base.num_users, base.num_bundles, base.num_items,
                         split.train, base.user_item, base.bundle_item, name=base.name)


class Model:
    """Graphs and pooling built from the training view of a split."""

    def __init__(self, split: SplitDataset, config: ModelConfig):
        view = train_view(split)
        self.split = split
        self.config = config
        self.ub_graph = build_ub_graph(view, config.self_connections, config.bundle_bundle)
        self.ui_graph = build_ui_graph(view)
        self.pooling = build_pooling(view)

    def forward(self, state, epoch_seed=0, step=0, augment=True):
        return forward(state, self.ub_graph, self.ui_graph, self.pooling, self.config,
                       epoch_seed=epoch_seed, step=step, augment=augment)

    def evaluate(self, state, target="validation", ks=(20,), view="both"):
        reps = self.forward(state, augment=False)
        return rank_and_score(reps, self.split, target, ks, view)


def loss_and_grads(model: Model, state: EmbeddingState, batch: TrainBatch, loss_cfg: LossConfig,
                   epoch_seed=0, step=0, augment=True):
    """Loss breakdown and gradients of the total loss w.r.t. the three tables."""
    reps = model.forward(state, epoch_seed=epoch_seed, step=step, augment=augment)
    breakdown, rg, l2_grads = total_loss(reps, state, batch, loss_cfg)
    tg = backward(reps, rg.user_bundle_view, rg.bundle_bundle_view,
                  rg.user_item_view, rg.bundle_item_view).as_dict()
    for name, (rows, g) in l2_grads.items():
        np.add.at(tg[name], rows, g)
    return breakdown, tg


@dataclass
class TrainResult:
    state: EmbeddingState
    log: list
    best_epoch: int
    best_metric: float
    last_state: EmbeddingState
    adam: AdamState

    def log_lines(self) -> list[str]:
        return [json.dumps(rec) for rec in self.log]


def train(split: SplitDataset, cfg: TrainerConfig, log_path: str | None = None,
          checkpoint_dir: str | None = None, eval_ks=(20,), callback=None) -> TrainResult:
    """Train with per-epoch validation NDCG@20 model selection and early stopping.

    Returns the best state (earliest epoch on ties) together with the log
    records: one per step with the loss breakdown, one per epoch with the
    validation metrics.
    """
    model = Model(split, cfg.model)
    base = split.base
    state = init_embeddings(base.num_users, base.num_bundles, base.num_items,
                            cfg.model.dim, seed=cfg.seed)
    adam = AdamState.zeros_like(state)
    records: list = []
    best_state, best_epoch, best_metric = state.copy(), 0, -math.inf
    if cfg.max_epochs == 0:
        return TrainResult(best_state, records, 0, float("nan"), state, adam)

    sampler = NegativeSampler(split.train, base.num_bundles)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 7)))
    steps_per_epoch = math.ceil(len(split.train) / cfg.batch_size)
    ks = sorted(set(eval_ks) | {20})
    log_fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None

    def emit(rec):
        records.append(rec)
        if log_fh:
            log_fh.write(json.dumps(rec) + "\n")

    global_step = 0
    stale = 0
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            for s in range(steps_per_epoch):
                batch = sampler.sample(rng, cfg.batch_size)
                breakdown, grads = loss_and_grads(model, state, batch, cfg.loss,
                                                  epoch_seed=epoch, step=s)
                global_step += 1
                if not np.isfinite(breakdown.total):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch} step {global_step}",
                        {"epoch": epoch, "step": global_step, **breakdown.__dict__})
                adam_step(state, adam, grads, cfg.learning_rate,
                          (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps)
                emit({"step": global_step, "bpr": breakdown.bpr,
                      "cl_u": breakdown.contrastive_user, "cl_b": breakdown.contrastive_bundle,
                      "l2": breakdown.l2, "total": breakdown.total})
            report = model.evaluate(state, "validation", ks)
            metric = report.ndcg_at[20]
            improved = metric > best_metric
            if improved:
                best_state, best_epoch, best_metric = state.copy(), epoch, metric
                stale = 0
                if checkpoint_dir:
                    save_checkpoint(f"{checkpoint_dir}/best.ckpt", state, epoch, adam,
                                    meta=_ckpt_meta(cfg))
            else:
                stale += 1
            rec = {"epoch": epoch, "split": "validation"}
            for k in ks:
                rec[f"recall@{k}"] = report.recall_at[k]
                rec[f"ndcg@{k}"] = report.ndcg_at[k]
            rec["best_epoch"] = best_epoch
            emit(rec)
            log.info("epoch %d val ndcg@20 %.5f (best %.5f @ %d)", epoch, metric,
                     best_metric, best_epoch)
            if callback is not None:
                callback(epoch, state, report)
            if stale >= cfg.patience:
                break
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_dir:
        save_checkpoint(f"{checkpoint_dir}/last.ckpt", state, epoch, adam, meta=_ckpt_meta(cfg))
    return TrainResult(best_state, records, best_epoch, best_metric, state, adam)


def _ckpt_meta(cfg: TrainerConfig) -> dict:
    m = cfg.model
    return {"layers": m.layers, "self_connections": m.self_connections,
            "bundle_bundle": m.bundle_bundle}
