"""Full click model, loss, negative sampling and the training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import RunConfig
from .evaluation import UndefinedMetricError, auc, f1
from .gnn import GNN, GnnConfig, feature_lookup
from .hetgraph import HetGraph
from .numerics import (NonFiniteGradientError, ParameterStore, Tensor, adam_step, concat, dense,
                       dropout, make_rng)
from .short_term import ShortTerm, ShortTermConfig
from .text_extractor import NewsItem, TextConfig, TextExtractor

log = logging.getLogger(__name__)

CLAMP = 1e-7


@dataclass
class Samples:
    """Aligned arrays of ``(user, candidate news, label)`` plus each user's recent clicks."""

    users: np.ndarray
    news: np.ndarray
    labels: np.ndarray
    clicks: np.ndarray          # [N, l] news ids, right-padded
    click_mask: np.ndarray      # [N, l]

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "Samples":
        return Samples(self.users[idx], self.news[idx], self.labels[idx], self.clicks[idx],
                       self.click_mask[idx])

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())


class GNewsRec:
    """Text CNN + graph propagation + short-term attention LSTM + prediction network."""

    def __init__(self, cfg: RunConfig, items: Sequence[NewsItem], n_words: int, n_entities: int,
                 n_types: int, n_users: int, n_topics: int, store: ParameterStore | None = None):
        self.cfg = cfg
        self.items = list(items)
        dtype = np.float32 if cfg.dtype == "float32" else np.float64
        self.store = store or ParameterStore(seed=cfg.seed, std=cfg.init_std, dtype=dtype)
        D = cfg.dim
        self.text = TextExtractor(self.store, n_words, n_entities, n_types,
                                  TextConfig(cfg.word_dim, cfg.type_dim, D, cfg.n_filters, cfg.windows))
        self.gnn = GNN(self.store, n_users, n_topics,
                       GnnConfig(D, cfg.layers, cfg.user_samples, cfg.news_samples, cfg.self_loops))
        self.short = ShortTerm(self.store, ShortTermConfig(D, cfg.history, cfg.seq_window))
        self.W_user = self.store.add("predict.W_user", (D, 2 * D))
        sizes = (2 * D,) + tuple(cfg.hidden_sizes)
        self.hidden = [(self.store.add(f"predict.hidden{i}.W", (sizes[i + 1], sizes[i])),
                        self.store.add(f"predict.hidden{i}.b", (sizes[i + 1],), decay=False))
                       for i in range(len(sizes) - 1)]
        self.out_W = self.store.add("predict.out.W", (1, sizes[-1]))
        self.out_b = self.store.add("predict.out.b", (1,), decay=False)

    def news_features(self, ids: np.ndarray) -> Tensor:
        return self.text.extract_batch([self.items[i] for i in ids])

    def fuse_user(self, u_long: Tensor, u_short: Tensor) -> Tensor:
        return dense(concat([u_long, u_short], axis=-1), self.W_user)

    def score(self, u: Tensor, d: Tensor, training: bool = False, rng=None) -> Tensor:
        """Click probability from the user and candidate-news vectors."""
        x = dropout(concat([u, d], axis=-1), self.cfg.dropout, training, rng)
        for W, b in self.hidden:
            x = dense(x, W, b).relu()
        return dense(x, self.out_W, self.out_b).reshape(-1).sigmoid()

    def forward(self, graph: HetGraph, batch: Samples, rng: np.random.Generator,
                training: bool = False) -> Tensor:
        u_plan, d_plan, tree_news = self.gnn.plan(graph, batch.users, batch.news, rng)
        needed = np.unique(np.concatenate([tree_news, batch.news, batch.clicks[batch.click_mask]]))
        news0 = feature_lookup(needed, self.news_features, self.cfg.dim, self.store.dtype)
        u_long, d_tilde = self.gnn.evaluate(u_plan, d_plan, news0)
        if self.cfg.use_short_term:
            mask = batch.click_mask
            safe = np.where(mask, batch.clicks, needed[0])
            clicks = news0(safe) * Tensor(mask[..., None].astype(self.store.dtype))
            u_short = self.short(clicks, mask, news0(batch.news))
            u = self.fuse_user(u_long, u_short)
        else:
            u = u_long
        return self.score(u, d_tilde, training, rng)


def bce_loss(y_hat: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(labels, dtype=y_hat.dtype)
    p = y_hat.clip(CLAMP, 1.0 - CLAMP)
    return -(Tensor(y) * p.log() + Tensor(1.0 - y) * (1.0 - p).log()).mean()


def sample_negatives(positives: Sequence[tuple[int, int]], clicked: dict[int, set],
                     pool: np.ndarray, rng: np.random.Generator) -> list[tuple[int, int]]:
    """One unclicked news per positive ``(user, news)``, uniform over ``pool``.

    Users who clicked every news in the pool are skipped with a warning.
    """
    pool = np.asarray(sorted(set(int(x) for x in pool)), dtype=np.int64)
    out = []
    skipped = set()
    cache: dict[int, np.ndarray] = {}
    for u, _ in positives:
        if u not in cache:
            seen = clicked.get(u, set())
            cache[u] = pool[~np.isin(pool, np.fromiter(seen, dtype=np.int64, count=len(seen)))]
        options = cache[u]
        if options.size == 0:
            skipped.add(u)
            continue
        out.append((u, int(options[rng.integers(options.size)])))
    if skipped:
        log.warning("sample_negatives: %d user(s) clicked every candidate news; skipped", len(skipped))
    return out


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = float("nan")

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "step", "train_loss", "val_auc", "val_f1"])
            for r in self.rows:
                w.writerow([r["epoch"], r["step"], f"{r['train_loss']:.10f}",
                            f"{r['val_auc']:.10f}", f"{r['val_f1']:.10f}"])


def predict(model: GNewsRec, graph: HetGraph, samples: Samples, seed: int, batch_size: int = 256,
            stream: int = 2) -> np.ndarray:
    """Inference-mode scores; neighbor samples come from a seed-derived stream."""
    out = []
    for b, start in enumerate(range(0, len(samples), batch_size)):
        batch = samples.take(slice(start, start + batch_size))
        out.append(model.forward(graph, batch, make_rng(seed, stream, b), training=False).data)
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model: GNewsRec, graph: HetGraph, samples: Samples, seed: int, threshold: float = 0.5,
             stream: int = 2) -> dict:
    scores = predict(model, graph, samples, seed, stream=stream)
    try:
        a = auc(samples.labels, scores)
    except UndefinedMetricError:
        a = float("nan")
    return {"auc": a, "f1": f1(samples.labels, scores, threshold), "scores": scores}


def train(model: GNewsRec, train_graph: HetGraph, train_samples: Samples, eval_graph: HetGraph,
          val_samples: Samples | None, cfg: RunConfig, step_callback=None) -> TrainLog:
    """Mini-batch Adam on the clamped cross-entropy with early stopping on validation AUC.

    The store ends up holding the parameters of the best validation epoch
    (or of the last epoch without validation data).
    """
    store = model.store
    tlog = TrainLog()
    best = store.values()
    best_auc = -np.inf
    bad_epochs = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = make_rng(cfg.seed, 1, epoch).permutation(len(train_samples))
        losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = train_samples.take(order[start:start + cfg.batch_size])
            rng = make_rng(cfg.seed, 3, epoch, b)
            loss = bce_loss(model.forward(train_graph, batch, rng, training=True), batch.labels)
            if not np.isfinite(loss.data):
                store.load_values(best)
                raise NonFiniteGradientError(f"non-finite loss at epoch {epoch} step {step}; "
                                             "restored best parameters")
            loss.backward()
            adam_step(store, lr=cfg.lr, l2=cfg.l2)
            step += 1
            losses.append(loss.item())
            if step_callback is not None:
                step_callback(step, loss.item())
        if val_samples is not None and len(val_samples):
            res = evaluate(model, eval_graph, val_samples, cfg.seed, cfg.threshold)
            val_auc, val_f1 = res["auc"], res["f1"]
        else:
            val_auc = val_f1 = float("nan")
        tlog.rows.append({"epoch": epoch, "step": step, "train_loss": float(np.mean(losses)),
                          "val_auc": val_auc, "val_f1": val_f1})
        log.info("epoch %d step %d loss %.5f val_auc %.4f val_f1 %.4f", epoch, step,
                 np.mean(losses), val_auc, val_f1)
        if np.isnan(val_auc):
            best = store.values()
            tlog.best_epoch = epoch
            continue
        if val_auc > best_auc:
            best_auc = val_auc
            best = store.values()
            tlog.best_epoch, tlog.best_val_auc = epoch, val_auc
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    store.load_values(best)
    return tlog
