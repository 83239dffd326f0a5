"""LDA by collapsed Gibbs sampling, fold-in inference and argmax topic assignment.

Documents are integer token-id sequences over a vocabulary of size ``V``.
The sweep kernel is compiled with numba; uniforms are drawn from a numpy
generator outside the kernel so a given seed reproduces the chain exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .numerics import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

MODEL_FORMAT = "lda-v1"


@njit(cache=True)
def _gibbs_sweep(words, docs, z, ndk, nkw, nk, alpha, beta, vbeta, uniforms, frozen):
    n_topics = nk.shape[0]
    cum = np.empty(n_topics)
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        ndk[d, k] -= 1
        if not frozen:
            nkw[k, w] -= 1
            nk[k] -= 1
        total = 0.0
        for t in range(n_topics):
            total += (nkw[t, w] + beta) / (nk[t] + vbeta) * (ndk[d, t] + alpha)
            cum[t] = total
        r = uniforms[i] * total
        k = 0
        while k < n_topics - 1 and cum[k] <= r:
            k += 1
        z[i] = k
        ndk[d, k] += 1
        if not frozen:
            nkw[k, w] += 1
            nk[k] += 1


@dataclass
class LdaModel:
    n_topics: int
    n_words: int
    alpha: float
    beta: float
    topic_word: np.ndarray          # [K, V] counts
    doc_topic: np.ndarray           # [n_docs, K] counts from the final sweep
    assignments: list[np.ndarray]   # per-token topic ids, one array per doc

    @property
    def phi(self) -> np.ndarray:
        """Topic-word distributions, rows sum to one."""
        num = self.topic_word + self.beta
        return num / num.sum(axis=1, keepdims=True)

    @property
    def theta(self) -> np.ndarray:
        """Training-document topic distributions."""
        return estimate_theta(self.doc_topic, self.alpha)

    def save(self, path) -> None:
        save_checkpoint(path, {"topic_word": self.topic_word.astype(np.float64)},
                        meta={"format": MODEL_FORMAT, "n_topics": self.n_topics,
                              "n_words": self.n_words, "alpha": self.alpha, "beta": self.beta})

    @classmethod
    def load(cls, path) -> "LdaModel":
        arrays, meta = load_checkpoint(path)
        if meta.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path}: not an LDA model file")
        tw = arrays["topic_word"].astype(np.int64)
        return cls(meta["n_topics"], meta["n_words"], meta["alpha"], meta["beta"], tw,
                   np.zeros((0, meta["n_topics"]), dtype=np.int64), [])


def estimate_theta(doc_topic: np.ndarray, alpha: float) -> np.ndarray:
    doc_topic = np.asarray(doc_topic, dtype=np.float64)
    k = doc_topic.shape[-1]
    return (doc_topic + alpha) / (doc_topic.sum(axis=-1, keepdims=True) + k * alpha)


def _flatten(corpus: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = [len(d) for d in corpus]
    words = np.concatenate([np.asarray(d, dtype=np.int64) for d in corpus]) if sum(lengths) else \
        np.zeros(0, dtype=np.int64)
    docs = np.repeat(np.arange(len(corpus), dtype=np.int64), lengths)
    return words, docs


def train_lda(corpus: Sequence[Sequence[int]], n_topics: int = 20, alpha: float | None = None,
              beta: float = 0.01, iters: int = 1000, rng: np.random.Generator | None = None,
              n_words: int | None = None) -> LdaModel:
    """Fit LDA with ``iters`` collapsed Gibbs sweeps.

    ``alpha`` defaults to ``50 / n_topics``.  Empty documents are allowed and
    end up with a uniform topic distribution.
    """
    if len(corpus) == 0:
        raise ValueError("train_lda: empty corpus")
    if n_topics < 1:
        raise ValueError("train_lda: need at least one topic")
    alpha = 50.0 / n_topics if alpha is None else alpha
    rng = rng or np.random.default_rng(0)
    words, docs = _flatten(corpus)
    if words.size and words.min() < 0:
        raise ValueError("train_lda: negative token id")
    V = int(n_words if n_words is not None else (words.max() + 1 if words.size else 1))
    if words.size and words.max() >= V:
        raise ValueError(f"train_lda: token id {words.max()} outside vocabulary of size {V}")
    z = rng.integers(0, n_topics, size=words.size).astype(np.int64)
    ndk = np.zeros((len(corpus), n_topics), dtype=np.int64)
    nkw = np.zeros((n_topics, V), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    np.add.at(nkw, (z, words), 1)
    nk = nkw.sum(axis=1)
    for _ in range(iters):
        _gibbs_sweep(words, docs, z, ndk, nkw, nk, alpha, beta, V * beta, rng.random(words.size), False)
    bounds = np.cumsum([len(d) for d in corpus])[:-1]
    return LdaModel(n_topics, V, alpha, beta, nkw, ndk, list(np.split(z, bounds)))


def infer_topics(model: LdaModel, doc: Sequence[int], iters: int = 100,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Fold-in Gibbs sampling of one new document against the frozen model.

    Token ids outside the model vocabulary are dropped; a document with no
    known token gets the uniform distribution.
    """
    rng = rng or np.random.default_rng(0)
    words = np.asarray([w for w in doc if 0 <= w < model.n_words], dtype=np.int64)
    k = model.n_topics
    if words.size == 0:
        return np.full(k, 1.0 / k)
    docs = np.zeros(words.size, dtype=np.int64)
    z = rng.integers(0, k, size=words.size).astype(np.int64)
    ndk = np.zeros((1, k), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    nkw = model.topic_word
    nk = nkw.sum(axis=1)
    vbeta = model.n_words * model.beta
    for _ in range(iters):
        _gibbs_sweep(words, docs, z, ndk, nkw, nk, model.alpha, model.beta, vbeta,
                     rng.random(words.size), True)
    return estimate_theta(ndk[0], model.alpha)


def assign_topic(theta) -> int:
    """Index of the most probable topic; ties go to the lowest index."""
    return int(np.argmax(np.asarray(theta)))
