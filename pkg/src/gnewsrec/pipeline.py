"""From a raw click log to graphs, topic links and sample sets ready for training."""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import RunConfig
from .data import ClickEvent, encode_news, preprocess
from .evaluation import SplitPlan, Splits, make_splits
from .hetgraph import HetGraph, build_graph
from .numerics import make_rng
from .predictor import GNewsRec, Samples, sample_negatives
from .text_extractor import PAD, UNK, NewsItem, Vocabulary
from .topic_model import LdaModel, assign_topic, infer_topics, train_lda

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    cfg: RunConfig
    plan: SplitPlan
    splits: Splits                 # cleaned events per window
    vocab: Vocabulary
    user_index: dict[str, int]
    news_index: dict[str, int]
    items: list[NewsItem]
    lda: LdaModel
    news_topic: np.ndarray
    theta: np.ndarray              # [n_news, K]
    train_graph: HetGraph          # graph window only
    eval_graph: HetGraph           # graph + training windows
    train: Samples
    val: Samples
    test: Samples

    def build_model(self, cfg: RunConfig | None = None) -> GNewsRec:
        return GNewsRec(cfg or self.cfg, self.items, len(self.vocab.words), len(self.vocab.entities),
                        len(self.vocab.types), len(self.user_index), self.lda.n_topics)


def lda_document(item: NewsItem, n_words: int) -> list[int]:
    """Title words and profile entities in one id space (entities offset by ``n_words``)."""
    words = [int(w) for w in item.title if w not in (PAD, UNK)]
    ents = [n_words + int(e) for e in item.entities if e not in (PAD, UNK)]
    return words + ents


def link_topics(items: Sequence[NewsItem], known: np.ndarray, vocab: Vocabulary, cfg: RunConfig
                ) -> tuple[LdaModel, np.ndarray]:
    """Fit LDA on the ``known`` news, fold in the rest; returns (model, theta per news)."""
    n_words = len(vocab.words)
    V = n_words + len(vocab.entities)
    docs = [lda_document(items[i], n_words) for i in known]
    lda = train_lda(docs, cfg.n_topics, cfg.lda_alpha, cfg.lda_beta, cfg.lda_iters,
                    make_rng(cfg.seed, 10), n_words=V)
    theta = np.zeros((len(items), cfg.n_topics))
    theta[known] = lda.theta
    rest = np.setdiff1d(np.arange(len(items)), known)
    for i in rest:
        theta[i] = infer_topics(lda, lda_document(items[i], n_words), cfg.lda_infer_iters,
                                make_rng(cfg.seed, 11, int(i)))
    return lda, theta


def recent_clicks(timelines: dict[int, tuple[list, list]], user: int, t: int, l: int
                  ) -> list[int]:
    times, news = timelines.get(user, ([], []))
    end = bisect.bisect_left(times, t)
    return news[max(0, end - l):end]


def build_samples(pairs: Sequence[tuple[int, int, int, int]], timelines, l: int) -> Samples:
    """``pairs`` holds ``(user, news, label, timestamp)``."""
    n = len(pairs)
    clicks = np.zeros((n, l), dtype=np.int64)
    mask = np.zeros((n, l), dtype=bool)
    for i, (u, _, _, t) in enumerate(pairs):
        seq = recent_clicks(timelines, u, t, l)
        clicks[i, :len(seq)] = seq
        mask[i, :len(seq)] = True
    arr = np.array([p[:3] for p in pairs], dtype=np.int64).reshape(n, 3)
    return Samples(arr[:, 0], arr[:, 1], arr[:, 2], clicks, mask)


def _labelled(events: Sequence[ClickEvent], uidx, nidx, clicked, pool, rng) -> list[tuple]:
    """Positives from ``events`` plus one sampled negative each, as (user, news, label, time)."""
    pos = [(uidx[e.user_id], nidx[e.news_id], e.timestamp) for e in events]
    neg = sample_negatives([(u, d) for u, d, _ in pos], clicked, pool, rng)
    # sample_negatives keeps positive order (minus skipped users), so each
    # negative inherits the timestamp of its positive
    times: dict[int, list] = {}
    for u, _, t in pos:
        times.setdefault(u, []).append(t)
    cursor = dict.fromkeys(times, 0)
    pairs = [(u, d, 1, t) for u, d, t in pos]
    for u, d in neg:
        pairs.append((u, d, 0, times[u][cursor[u]]))
        cursor[u] += 1
    return pairs


def prepare(events: Sequence[ClickEvent], cfg: RunConfig, stopwords: frozenset | None = None
            ) -> Prepared:
    plan = SplitPlan.for_events(events, graph_days=cfg.graph_days, train_days=cfg.train_days,
                                final_days=cfg.final_days, val_fraction=cfg.val_fraction)
    raw = make_splits(events, plan)
    cleaned, vocab = preprocess(raw.graph + raw.train + raw.val + raw.test,
                                vocab_events=raw.graph + raw.train, stopwords=stopwords)
    n_g, n_t, n_v = len(raw.graph), len(raw.train), len(raw.val)
    splits = Splits(cleaned[:n_g], cleaned[n_g:n_g + n_t], cleaned[n_g + n_t:n_g + n_t + n_v],
                    cleaned[n_g + n_t + n_v:])
    all_events = cleaned
    user_index = {}
    for e in all_events:
        user_index.setdefault(e.user_id, len(user_index))
    by_id = encode_news(all_events, vocab)
    news_index = {nid: i for i, nid in enumerate(by_id)}
    items = list(by_id.values())

    known = np.array(sorted({news_index[e.news_id] for e in splits.graph + splits.train}), dtype=np.int64)
    lda, theta = link_topics(items, known, vocab, cfg)
    news_topic = np.array([assign_topic(t) for t in theta], dtype=np.int64)

    def graph_of(evts):
        clicks = [(user_index[e.user_id], news_index[e.news_id]) for e in evts]
        return build_graph(clicks, news_topic, len(user_index), len(items), cfg.n_topics)

    train_graph = graph_of(splits.graph)
    eval_graph = graph_of(splits.graph + splits.train)

    timelines: dict[int, tuple[list, list]] = {}
    for e in all_events:
        times, news = timelines.setdefault(user_index[e.user_id], ([], []))
        times.append(e.timestamp)
        news.append(news_index[e.news_id])

    clicked: dict[int, set] = {}
    for e in all_events:
        clicked.setdefault(user_index[e.user_id], set()).add(news_index[e.news_id])

    def window_samples(evts, key):
        pool = np.array(sorted({news_index[e.news_id] for e in evts}), dtype=np.int64)
        pairs = _labelled(evts, user_index, news_index, clicked, pool, make_rng(cfg.seed, 20, key))
        return build_samples(pairs, timelines, cfg.history)

    return Prepared(cfg, plan, splits, vocab, user_index, news_index, items, lda, news_topic, theta,
                    train_graph, eval_graph, window_samples(splits.train, 0),
                    window_samples(splits.val, 1) if splits.val else build_samples([], timelines, cfg.history),
                    window_samples(splits.test, 2))
