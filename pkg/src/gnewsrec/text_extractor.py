"""News text features from two parallel CNNs over the title and entity profile."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .numerics import (ParameterStore, Tensor, concat, conv1d, dense, max_pool_over_time,
                       stack, take_rows)

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class TokenIndex:
    """Dense token -> id map with reserved padding (0) and unknown (1) ids."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.stoi: dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.itos):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path) -> "TokenIndex":
        index = cls()
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, idx = line.rsplit("\t", 1)
                rows.append((int(idx), tok))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: ids are not dense from 0")
        index.itos = [t for _, t in rows]
        index.stoi = {t: i for i, t in enumerate(index.itos)}
        if index.stoi.get(PAD_TOKEN) != PAD or index.stoi.get(UNK_TOKEN) != UNK:
            raise ValueError(f"{path}: missing reserved padding/unknown tokens")
        return index


@dataclass
class Vocabulary:
    words: TokenIndex = field(default_factory=TokenIndex)
    entities: TokenIndex = field(default_factory=TokenIndex)
    types: TokenIndex = field(default_factory=TokenIndex)

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        self.words.save(os.path.join(directory, "words.tsv"))
        self.entities.save(os.path.join(directory, "entities.tsv"))
        self.types.save(os.path.join(directory, "entity_types.tsv"))

    @classmethod
    def load(cls, directory) -> "Vocabulary":
        return cls(TokenIndex.load(os.path.join(directory, "words.tsv")),
                   TokenIndex.load(os.path.join(directory, "entities.tsv")),
                   TokenIndex.load(os.path.join(directory, "entity_types.tsv")))


@dataclass
class NewsItem:
    news_id: str
    title: np.ndarray
    entities: np.ndarray
    types: np.ndarray

    def __post_init__(self):
        self.title = np.asarray(self.title, dtype=np.int64)
        self.entities = np.asarray(self.entities, dtype=np.int64)
        self.types = np.asarray(self.types, dtype=np.int64)
        if self.entities.shape != self.types.shape:
            raise ValueError(f"news {self.news_id}: {len(self.entities)} entities but {len(self.types)} types")


@dataclass
class TextConfig:
    word_dim: int = 50
    type_dim: int = 50
    out_dim: int = 128
    n_filters: int = 128
    windows: tuple = (2, 3)


class TextExtractor:
    """Maps a :class:`NewsItem` to its feature vector ``d`` (length ``out_dim``).

    Title and profile each go through their own bank of convolutions
    (one per window size), ReLU and max-over-time pooling; the pooled
    vectors are concatenated and passed through a ReLU dense layer.
    """

    def __init__(self, store: ParameterStore, n_words: int, n_entities: int, n_types: int,
                 config: TextConfig | None = None, prefix: str = "text"):
        self.cfg = cfg = config or TextConfig()
        self.store = store
        self.prefix = prefix
        k1, k2 = cfg.word_dim, cfg.type_dim
        p = prefix
        self.word_emb = store.add(f"{p}.word_emb", (n_words, k1), decay=False)
        self.entity_emb = store.add(f"{p}.entity_emb", (n_entities, k1), decay=False)
        self.type_emb = store.add(f"{p}.type_emb", (n_types, k2), decay=False)
        for table in (self.word_emb, self.entity_emb, self.type_emb):
            table.data[PAD] = 0.0
        self.W_c = store.add(f"{p}.W_c", (k1, k2))
        self.convs = {}
        for branch in ("title", "profile"):
            for w in cfg.windows:
                self.convs[branch, w] = (
                    store.add(f"{p}.{branch}_conv{w}.W", (cfg.n_filters, w, k1)),
                    store.add(f"{p}.{branch}_conv{w}.b", (cfg.n_filters,), decay=False),
                )
        pooled = 2 * cfg.n_filters * len(cfg.windows)
        self.fc_W = store.add(f"{p}.fc.W", (cfg.out_dim, pooled))
        self.fc_b = store.add(f"{p}.fc.b", (cfg.out_dim,), decay=False)

    @property
    def min_len(self) -> int:
        return max(self.cfg.windows)

    @staticmethod
    def _lookup(table: Tensor, ids: np.ndarray) -> Tensor:
        # padding rows contribute exact zeros and receive no gradient
        rows = take_rows(table, ids)
        return rows * Tensor((ids != PAD).astype(table.dtype)[..., None])

    def _pad_ids(self, seqs: Sequence[np.ndarray], min_len: int) -> tuple[np.ndarray, np.ndarray]:
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        width = max(int(lengths.max(initial=0)), min_len)
        ids = np.zeros((len(seqs), width), dtype=np.int64)
        for i, s in enumerate(seqs):
            ids[i, :len(s)] = s
        return ids, lengths

    def build_title_matrix(self, item: NewsItem) -> Tensor:
        ids, _ = self._pad_ids([item.title], self.min_len)
        return self._lookup(self.word_emb, ids[0])

    def _profile_rows(self, ent_ids: np.ndarray, type_ids: np.ndarray) -> Tensor:
        e = self._lookup(self.entity_emb, ent_ids)
        f = self._lookup(self.type_emb, type_ids) @ self.W_c.T
        pair = stack([e, f], axis=-2)
        return pair.reshape(*ent_ids.shape[:-1], 2 * ent_ids.shape[-1], self.cfg.word_dim)

    def build_profile_matrix(self, item: NewsItem) -> Tensor:
        n = len(item.entities)
        rows = max(2 * n, self.min_len)
        n_slots = (rows + 1) // 2
        ent = np.zeros(n_slots, dtype=np.int64)
        typ = np.zeros(n_slots, dtype=np.int64)
        ent[:n] = item.entities
        typ[:n] = item.types
        return self._profile_rows(ent, typ)[:rows]

    def _branch(self, branch: str, mats: Tensor, lengths: np.ndarray) -> Tensor:
        pooled = []
        width = mats.shape[-2]
        for w in self.cfg.windows:
            filt, bias = self.convs[branch, w]
            feat = conv1d(mats, filt, bias).relu()
            n_valid = np.maximum(lengths, w) - w + 1
            mask = np.arange(width - w + 1)[None, :] < n_valid[:, None]
            pooled.append(max_pool_over_time(feat, mask))
        return concat(pooled, axis=-1)

    def extract_batch(self, items: Sequence[NewsItem]) -> Tensor:
        """Feature matrix [len(items), out_dim]."""
        title_ids, title_len = self._pad_ids([it.title for it in items], self.min_len)
        titles = self._lookup(self.word_emb, title_ids)
        ent_ids, n_ent = self._pad_ids([it.entities for it in items], (self.min_len + 1) // 2)
        typ_ids, _ = self._pad_ids([it.types for it in items], (self.min_len + 1) // 2)
        profiles = self._profile_rows(ent_ids, typ_ids)
        t_feat = self._branch("title", titles, title_len)
        p_feat = self._branch("profile", profiles, 2 * n_ent)
        return dense(concat([t_feat, p_feat], axis=-1), self.fc_W, self.fc_b).relu()

    def extract_text_feature(self, item: NewsItem) -> Tensor:
        return self.extract_batch([item])[0]
