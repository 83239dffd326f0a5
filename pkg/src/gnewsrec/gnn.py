"""Embedding propagation over the user-news-topic graph.

A news node at hop ``h`` averages its sampled users (through ``W_u``) and
adds its topic (through ``W_z``); user and topic nodes mirror this by
averaging their sampled news through a per-type news transform.  Each hop
then applies ``ReLU(W^h x + b^h)`` with weights owned by that hop.  Hop 0
is the input: text features for news, trainable tables for users/topics.
With ``self_loops`` every node also adds its own previous-hop embedding to
the aggregate; without it only neighbor-less users/topics fall back to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hetgraph import NEWS, TOPIC, USER, HetGraph, sample_block
from .numerics import ParameterStore, Tensor, dense, masked_mean, place_rows, take_rows


@dataclass
class GnnConfig:
    dim: int = 128
    layers: int = 2
    user_samples: int | None = 10     # L_u; None = every neighbor
    news_samples: int | None = 30     # L_d; None = every neighbor
    self_loops: bool = False


@dataclass
class _Plan:
    kind: str
    ids: np.ndarray
    hop: int
    mask: np.ndarray | None = None       # sampled-neighbor mask, [n, width]
    child: "_Plan | None" = None         # sampled neighbors (users for news, news otherwise)
    topic: "_Plan | None" = None         # news only
    self_plan: "_Plan | None" = None     # previous-hop self embedding of ``self_rows``
    self_rows: np.ndarray | None = None


class GNN:
    def __init__(self, store: ParameterStore, n_users: int, n_topics: int,
                 config: GnnConfig | None = None, prefix: str = "gnn"):
        self.cfg = cfg = config or GnnConfig()
        if not 1 <= cfg.layers <= 3:
            raise ValueError(f"layers must be 1, 2 or 3, got {cfg.layers}")
        D = cfg.dim
        p = prefix
        self.user_emb = store.add(f"{p}.user_emb", (n_users, D), decay=False)
        self.topic_emb = store.add(f"{p}.topic_emb", (n_topics, D), decay=False)
        self.W_u = store.add(f"{p}.W_u", (D, D))
        self.W_z = store.add(f"{p}.W_z", (D, D))
        self.W_n = {USER: store.add(f"{p}.W_news_to_user", (D, D)),
                    TOPIC: store.add(f"{p}.W_news_to_topic", (D, D))}
        self.W = [store.add(f"{p}.layer{h}.W", (D, D)) for h in range(1, cfg.layers + 1)]
        self.b = [store.add(f"{p}.layer{h}.b", (D,), decay=False) for h in range(1, cfg.layers + 1)]

    # -- single-node building blocks ------------------------------------------
    def aggregate_news_neighborhood(self, user_embs: Tensor | None, topic_emb: Tensor) -> Tensor:
        """Mean of ``W_u u`` over the sampled users plus ``W_z z``; no users → topic term only."""
        topic_term = dense(topic_emb, self.W_z)
        if user_embs is None or user_embs.shape[0] == 0:
            return topic_term
        return dense(user_embs, self.W_u).mean(axis=0) + topic_term

    def gnn_layer(self, x: Tensor, hop: int = 1) -> Tensor:
        return dense(x, self.W[hop - 1], self.b[hop - 1]).relu()

    # -- batched propagation --------------------------------------------------
    def _plan(self, g: HetGraph, kind: str, ids: np.ndarray, hop: int, rng) -> _Plan:
        plan = _Plan(kind, np.asarray(ids, dtype=np.int64), hop)
        if hop == 0:
            return plan
        if kind == NEWS:
            uid, plan.mask = sample_block(g.csr(NEWS), plan.ids, self.cfg.user_samples, rng)
            plan.child = self._plan(g, USER, uid.reshape(-1), hop - 1, rng)
            plan.topic = self._plan(g, TOPIC, g.news_topic[plan.ids], hop - 1, rng)
            plan.self_rows = np.arange(len(plan.ids)) if self.cfg.self_loops else np.zeros(0, np.int64)
        else:
            nid, plan.mask = sample_block(g.csr(kind), plan.ids, self.cfg.news_samples, rng)
            plan.child = self._plan(g, NEWS, nid.reshape(-1), hop - 1, rng)
            if self.cfg.self_loops:
                plan.self_rows = np.arange(len(plan.ids))
            else:
                plan.self_rows = np.flatnonzero(~plan.mask.any(axis=1))
        if plan.self_rows.size:
            plan.self_plan = self._plan(g, kind, plan.ids[plan.self_rows], hop - 1, rng)
        return plan

    def _leaf_news(self, plan: _Plan, out: list) -> None:
        if plan.hop == 0:
            if plan.kind == NEWS:
                out.append(plan.ids)
            return
        for sub in (plan.child, plan.topic, plan.self_plan):
            if sub is not None:
                self._leaf_news(sub, out)

    def _eval(self, plan: _Plan, news0: Callable[[np.ndarray], Tensor]) -> Tensor:
        n, D = len(plan.ids), self.cfg.dim
        if plan.hop == 0:
            if plan.kind == NEWS:
                return news0(plan.ids)
            table = self.user_emb if plan.kind == USER else self.topic_emb
            return take_rows(table, plan.ids)
        width = plan.mask.shape[1]
        if plan.kind == NEWS:
            agg = dense(self._eval(plan.topic, news0), self.W_z)
            if width:
                users = dense(self._eval(plan.child, news0), self.W_u).reshape(n, width, D)
                agg = agg + masked_mean(users, plan.mask)
        else:
            if width:
                news = dense(self._eval(plan.child, news0), self.W_n[plan.kind]).reshape(n, width, D)
                agg = masked_mean(news, plan.mask)
            else:
                agg = Tensor(np.zeros((n, D), dtype=self.user_emb.dtype))
        if plan.self_plan is not None:
            own = self._eval(plan.self_plan, news0)
            agg = agg + (own if len(plan.self_rows) == n else place_rows(n, plan.self_rows, own))
        return self.gnn_layer(agg, plan.hop)

    def plan(self, g: HetGraph, users, news, rng: np.random.Generator,
             layers: int | None = None) -> tuple[_Plan, _Plan, np.ndarray]:
        """Draw every neighbor sample for a batch up front.

        Returns the user and news plans plus the sorted unique news ids whose
        hop-0 features the computation tree reads.
        """
        H = layers or self.cfg.layers
        if not 1 <= H <= len(self.W):
            raise ValueError(f"layers={H} but {len(self.W)} layer parameter sets exist")
        u_plan = self._plan(g, USER, users, H, rng)
        d_plan = self._plan(g, NEWS, news, H, rng)
        needed: list[np.ndarray] = []
        self._leaf_news(u_plan, needed)
        self._leaf_news(d_plan, needed)
        flat = np.concatenate(needed) if needed else np.zeros(0, dtype=np.int64)
        return u_plan, d_plan, np.unique(flat)

    def evaluate(self, u_plan: _Plan, d_plan: _Plan,
                 news0: Callable[[np.ndarray], Tensor]) -> tuple[Tensor, Tensor]:
        return self._eval(u_plan, news0), self._eval(d_plan, news0)

    def propagate(self, g: HetGraph, users, news, news_features: Callable[[np.ndarray], Tensor],
                  rng: np.random.Generator, layers: int | None = None) -> tuple[Tensor, Tensor]:
        """Long-term user embeddings and high-order news embeddings for a batch.

        ``news_features(ids)`` returns hop-0 text features [len(ids), D]; it is
        called once with the unique news ids the sampled computation tree needs.
        """
        u_plan, d_plan, uniq = self.plan(g, users, news, rng, layers)
        return self.evaluate(u_plan, d_plan, feature_lookup(uniq, news_features, self.cfg.dim,
                                                            self.user_emb.dtype))


def feature_lookup(uniq: np.ndarray, news_features: Callable[[np.ndarray], Tensor], dim: int,
                   dtype=np.float64) -> Callable[[np.ndarray], Tensor]:
    """Compute features for ``uniq`` once; return a row gatherer over them."""
    feats = news_features(uniq) if uniq.size else None

    def news0(ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return Tensor(np.zeros(ids.shape + (dim,), dtype=dtype))
        return take_rows(feats, np.searchsorted(uniq, ids))

    return news0
