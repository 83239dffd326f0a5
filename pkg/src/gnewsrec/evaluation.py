"""AUC / F1 metrics and the chronological split protocol."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .data import DAY, ClickEvent

log = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    pass


class EmptyWindowError(ValueError):
    pass


def auc(labels, scores) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1(labels, scores, threshold: float = 0.5) -> float:
    """F1 of ``score >= threshold`` against the labels; 0 when nothing is predicted positive."""
    labels = np.asarray(labels).astype(bool)
    pred = np.asarray(scores, dtype=np.float64) >= threshold
    tp = int((pred & labels).sum())
    if pred.sum() == 0 or tp == 0:
        return 0.0
    precision = tp / pred.sum()
    recall = tp / labels.sum()
    return float(2 * precision * recall / (precision + recall))


@dataclass(frozen=True)
class SplitPlan:
    """Half-open windows ``[start, graph_end)``, ``[graph_end, train_end)``, ``[train_end, end)``.

    The final window is split by event order: the first ``val_fraction``
    validates, the rest tests.
    """

    start: int
    graph_end: int
    train_end: int
    end: int
    val_fraction: float = 0.2

    def __post_init__(self):
        if not self.start <= self.graph_end <= self.train_end <= self.end:
            raise ValueError(f"split boundaries out of order: {self}")
        if not 0.0 <= self.val_fraction <= 1.0:
            raise ValueError("val_fraction must lie in [0, 1]")

    @classmethod
    def from_days(cls, start: int, graph_days: int = 5, train_days: int = 1, final_days: int = 1,
                  val_fraction: float = 0.2) -> "SplitPlan":
        g = start + graph_days * DAY
        t = g + train_days * DAY
        return cls(start, g, t, t + final_days * DAY, val_fraction)

    @classmethod
    def for_events(cls, events: Sequence[ClickEvent], **kw) -> "SplitPlan":
        """Day-aligned plan starting at UTC midnight of the first event."""
        first = min(e.timestamp for e in events)
        return cls.from_days(first - first % DAY, **kw)


@dataclass
class Splits:
    graph: list[ClickEvent]
    train: list[ClickEvent]
    val: list[ClickEvent]
    test: list[ClickEvent]


def make_splits(events: Sequence[ClickEvent], plan: SplitPlan) -> Splits:
    ordered = sorted(events, key=lambda e: e.timestamp)
    outside = sum(1 for e in ordered if not plan.start <= e.timestamp < plan.end)
    if outside:
        log.warning("make_splits: %d event(s) fall outside the plan span and are dropped", outside)
    graph = [e for e in ordered if plan.start <= e.timestamp < plan.graph_end]
    train = [e for e in ordered if plan.graph_end <= e.timestamp < plan.train_end]
    final = [e for e in ordered if plan.train_end <= e.timestamp < plan.end]
    for name, window in (("graph", graph), ("training", train), ("final", final)):
        if not window:
            raise EmptyWindowError(f"make_splits: the {name} window is empty under {plan}")
    n_val = int(round(plan.val_fraction * len(final)))
    return Splits(graph, train, final[:n_val], final[n_val:])


def popularity_scores(history: Sequence[ClickEvent], news_ids: Sequence[str]) -> np.ndarray:
    """Baseline score: click count of each news in ``history``."""
    counts = Counter(e.news_id for e in history)
    return np.array([counts.get(n, 0) for n in news_ids], dtype=np.float64)


def write_metrics(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["split", "auc", "f1", "n_pos", "n_neg"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
