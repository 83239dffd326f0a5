"""User-news-topic graph and fixed-size uniform neighbor sampling.

Nodes of each type are numbered densely from zero: users ``0..n_users-1``,
news ``0..n_news-1`` and topics ``0..n_topics-1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

USER, NEWS, TOPIC = "user", "news", "topic"


@dataclass
class HetGraph:
    n_users: int
    n_news: int
    n_topics: int
    user_news: list[np.ndarray]     # clicked news per user, sorted
    news_users: list[np.ndarray]    # clicking users per news, sorted
    news_topic: np.ndarray          # exactly one topic per news
    topic_news: list[np.ndarray]    # member news per topic, sorted

    def csr(self, node_type: str) -> tuple[np.ndarray, np.ndarray]:
        """Compressed neighbor lists: news->users, user->news or topic->news."""
        cache = self.__dict__.setdefault("_csr_cache", {})
        if node_type not in cache:
            lists = {NEWS: self.news_users, USER: self.user_news, TOPIC: self.topic_news}[node_type]
            cache[node_type] = _csr(lists)
        return cache[node_type]

    @property
    def n_click_edges(self) -> int:
        return int(sum(len(a) for a in self.user_news))

    def neighbors(self, node_type: str, node: int, of_type: str) -> np.ndarray:
        if node_type == NEWS and of_type == USER:
            self._check(NEWS, node)
            return self.news_users[node]
        if node_type == NEWS and of_type == TOPIC:
            self._check(NEWS, node)
            return self.news_topic[node:node + 1]
        if node_type == USER and of_type == NEWS:
            self._check(USER, node)
            return self.user_news[node]
        if node_type == TOPIC and of_type == NEWS:
            self._check(TOPIC, node)
            return self.topic_news[node]
        if {node_type, of_type} <= {USER, NEWS, TOPIC}:
            return np.zeros(0, dtype=np.int64)
        raise ValueError(f"unknown node types {node_type!r}/{of_type!r}")

    def _check(self, node_type: str, node: int) -> None:
        size = {USER: self.n_users, NEWS: self.n_news, TOPIC: self.n_topics}[node_type]
        if not 0 <= node < size:
            raise IndexError(f"{node_type} node {node} not in graph (size {size})")

    def edges(self):
        """Yield ``(edge_type, src, dst)`` once per undirected edge."""
        for u, items in enumerate(self.user_news):
            for d in items:
                yield "click", f"u{u}", f"n{int(d)}"
        for d, t in enumerate(self.news_topic):
            yield "topic", f"n{d}", f"t{int(t)}"

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for etype, src, dst in self.edges():
                fh.write(f"{etype}\t{src}\t{dst}\n")

    def counts(self) -> dict:
        return {"users": self.n_users, "news": self.n_news, "topics": self.n_topics,
                "click_edges": self.n_click_edges, "topic_edges": self.n_news}


def build_graph(clicks: Iterable[tuple[int, int]], assignments: Mapping[int, int] | np.ndarray,
                n_users: int, n_news: int, n_topics: int) -> HetGraph:
    """Graph from ``(user, news)`` click pairs and a topic per news.

    Repeated clicks collapse to one edge.  Every news node needs a topic.
    """
    topic = np.full(n_news, -1, dtype=np.int64)
    if isinstance(assignments, Mapping):
        for d, t in assignments.items():
            topic[d] = t
    else:
        topic[:] = np.asarray(assignments, dtype=np.int64)
    missing = np.flatnonzero(topic < 0)
    if missing.size:
        raise ValueError(f"build_graph: {missing.size} news without topic assignment, e.g. {missing[:5].tolist()}")
    if topic.max(initial=-1) >= n_topics:
        raise ValueError("build_graph: topic id out of range")
    pairs = {(int(u), int(d)) for u, d in clicks}
    by_user: list[list[int]] = [[] for _ in range(n_users)]
    by_news: list[list[int]] = [[] for _ in range(n_news)]
    for u, d in pairs:
        if not (0 <= u < n_users and 0 <= d < n_news):
            raise IndexError(f"build_graph: click ({u}, {d}) outside node ranges")
        by_user[u].append(d)
        by_news[d].append(u)
    by_topic: list[list[int]] = [[] for _ in range(n_topics)]
    for d, t in enumerate(topic):
        by_topic[t].append(d)
    as_arrays = lambda lists: [np.array(sorted(x), dtype=np.int64) for x in lists]  # noqa: E731
    return HetGraph(n_users, n_news, n_topics, as_arrays(by_user), as_arrays(by_news), topic,
                    as_arrays(by_topic))


def _csr(lists: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    indptr = np.zeros(len(lists) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(a) for a in lists])
    indices = np.concatenate(lists) if indptr[-1] else np.zeros(0, dtype=np.int64)
    return indptr, indices.astype(np.int64)


def sample_block(csr: tuple[np.ndarray, np.ndarray], nodes: np.ndarray, size: int | None,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Samples for many nodes at once as an ``(ids, mask)`` pair of [n, width] arrays.

    Per node: ``size`` uniform draws with replacement when its degree is
    below ``size``, without replacement otherwise; a node without neighbors
    gets an all-False mask row (ids are filler zeros).  ``size=None`` takes
    every neighbor and the width is the largest degree.
    """
    indptr, indices = csr
    nodes = np.asarray(nodes, dtype=np.int64)
    start = indptr[nodes]
    deg = indptr[nodes + 1] - start
    n = len(nodes)
    if size is None:
        width = int(deg.max(initial=0))
        rank = np.arange(width)[None, :]
        mask = rank < deg[:, None]
        ids = np.where(mask, indices[np.minimum(start[:, None] + rank, max(len(indices) - 1, 0))], 0) \
            if width else np.zeros((n, 0), dtype=np.int64)
        return ids.astype(np.int64), mask
    if not (deg > 0).any():
        return np.zeros((n, 0), dtype=np.int64), np.zeros((n, 0), dtype=bool)
    pos = np.zeros((n, size), dtype=np.int64)
    mask = np.repeat((deg > 0)[:, None], size, axis=1)
    small = np.flatnonzero((deg > 0) & (deg < size))
    if small.size:
        draws = rng.random((small.size, size))
        pos[small] = start[small, None] + np.minimum((draws * deg[small, None]).astype(np.int64),
                                                     deg[small, None] - 1)
    big = np.flatnonzero(deg >= size)
    if big.size:
        # random keys per neighbor; the ``size`` smallest keys of each segment win
        seg_len = deg[big]
        seg = np.repeat(np.arange(big.size), seg_len)
        offs = np.arange(seg_len.sum()) - np.repeat(np.cumsum(seg_len) - seg_len, seg_len)
        keys = rng.random(seg.size)
        order = np.lexsort((keys, seg))
        rank = np.arange(seg.size) - np.repeat(np.cumsum(seg_len) - seg_len, seg_len)
        keep = order[rank < size]
        pos[big] = (start[big][seg[keep]] + offs[keep]).reshape(big.size, size)
    ids = np.where(mask, indices[np.minimum(pos, len(indices) - 1)], 0)
    return ids, mask


def sample_neighbors(neigh: np.ndarray, size: int | None, rng: np.random.Generator) -> np.ndarray:
    """Uniform fixed-size sample of one neighbor list (see :func:`sample_block`)."""
    neigh = np.asarray(neigh, dtype=np.int64)
    ids, mask = sample_block(_csr([neigh]), np.zeros(1, dtype=np.int64), size, rng)
    return ids[0][mask[0]]


def sample_news_user_neighbors(g: HetGraph, d: int, size: int | None, rng) -> np.ndarray:
    return sample_neighbors(g.neighbors(NEWS, d, USER), size, rng)


def sample_node_news_neighbors(g: HetGraph, node_type: str, node: int, size: int | None, rng) -> np.ndarray:
    if node_type not in (USER, TOPIC):
        raise ValueError(f"expected a user or topic node, got {node_type!r}")
    return sample_neighbors(g.neighbors(node_type, node, NEWS), size, rng)
