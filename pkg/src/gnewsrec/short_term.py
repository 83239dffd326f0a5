"""Short-term user interest from the latest clicked news.

Clicks arrive as a right-padded batch ``[B, l, D]`` with a boolean mask;
padded rows are zero vectors and never receive attention weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (ParameterStore, Tensor, concat, conv1d, dense, lstm_cell, masked_softmax,
                       max_pool_over_time, stack)


@dataclass
class ShortTermConfig:
    dim: int = 128
    history: int = 10        # l
    seq_window: int = 3


class _Attention:
    """Additive attention: score_j = v . (tanh(W q + b) + tanh(W' k_j + b'))."""

    def __init__(self, store: ParameterStore, D: int, prefix: str):
        self.W_key = store.add(f"{prefix}.W_key", (D, D))
        self.b_key = store.add(f"{prefix}.b_key", (D,), decay=False)
        self.W_query = store.add(f"{prefix}.W_query", (D, D))
        self.b_query = store.add(f"{prefix}.b_query", (D,), decay=False)
        self.v = store.add(f"{prefix}.v", (D,), decay=False)

    def key_scores(self, keys: Tensor) -> Tensor:
        return dense(keys, self.W_key, self.b_key).tanh() @ self.v

    def query_scores(self, queries: Tensor) -> Tensor:
        return dense(queries, self.W_query, self.b_query).tanh() @ self.v


class ShortTerm:
    def __init__(self, store: ParameterStore, config: ShortTermConfig | None = None,
                 prefix: str = "short"):
        self.cfg = cfg = config or ShortTermConfig()
        D = cfg.dim
        p = prefix
        self.content_att = _Attention(store, D, f"{p}.content_att")
        self.seq_att = _Attention(store, D, f"{p}.seq_att")
        self.lstm = {"W": store.add(f"{p}.lstm.W", (4 * D, D)),
                     "U": store.add(f"{p}.lstm.U", (4 * D, D)),
                     "b": store.add(f"{p}.lstm.b", (4 * D,), decay=False)}
        self.conv_W = store.add(f"{p}.seq_conv.W", (D, cfg.seq_window, D))
        self.conv_b = store.add(f"{p}.seq_conv.b", (D,), decay=False)
        self.fc_W = store.add(f"{p}.seq_fc.W", (D, D))
        self.fc_b = store.add(f"{p}.seq_fc.b", (D,), decay=False)
        self.W_s = store.add(f"{p}.W_s", (D, 2 * D))

    def content_attention(self, clicks: Tensor, mask: np.ndarray, candidate: Tensor
                          ) -> tuple[Tensor, Tensor]:
        """Candidate-aware weighted sum of clicked news; returns ``(u_c, alpha)``.

        Shapes: clicks [B, l, D], mask [B, l], candidate [B, D].  A row with
        no valid click yields ``u_c = 0`` and all-zero weights.
        """
        scores = self.content_att.key_scores(clicks) + self.content_att.query_scores(candidate).reshape(-1, 1)
        alpha = masked_softmax(scores, mask)
        u_c = (alpha.reshape(*alpha.shape, 1) * clicks).sum(axis=-2)
        return u_c, alpha

    def hidden_states(self, clicks: Tensor) -> Tensor:
        B, l, D = clicks.shape
        h = Tensor(np.zeros((B, D), dtype=clicks.dtype))
        c = Tensor(np.zeros((B, D), dtype=clicks.dtype))
        hs = []
        for j in range(l):
            h, c = lstm_cell(clicks[:, j, :], h, c, self.lstm)
            hs.append(h)
        return stack(hs, axis=1)

    def sequence_encode(self, clicks: Tensor, mask: np.ndarray) -> Tensor:
        """Sequence feature: LSTM states, attention over earlier states, CNN, dense."""
        mask = np.asarray(mask, dtype=bool)
        B, l, D = clicks.shape
        H = self.hidden_states(clicks)
        # s_j attends over h_1..h_{j-1}; s_1 is h_1 itself
        q = self.seq_att.query_scores(H)                      # [B, l]
        k = self.seq_att.key_scores(H)                        # [B, l]
        scores = q.reshape(B, l, 1) + k.reshape(B, 1, l)
        earlier = np.tril(np.ones((l, l), dtype=bool), k=-1)
        alpha = masked_softmax(scores, earlier[None, :, :] & mask[:, None, :])
        first = np.zeros((1, l, 1), dtype=clicks.dtype)
        first[0, 0, 0] = 1.0
        S = alpha @ H + H * Tensor(first)
        S = S * Tensor(mask[..., None].astype(clicks.dtype))
        w = self.cfg.seq_window
        if l < w:
            S = concat([S, Tensor(np.zeros((B, w - l, D), dtype=clicks.dtype))], axis=1)
        pooled = max_pool_over_time(conv1d(S, self.conv_W, self.conv_b).relu())
        return dense(pooled, self.fc_W, self.fc_b)

    def fuse_short_term(self, u_c: Tensor, s_tilde: Tensor) -> Tensor:
        return dense(concat([u_c, s_tilde], axis=-1), self.W_s)

    def __call__(self, clicks: Tensor, mask: np.ndarray, candidate: Tensor) -> Tensor:
        u_c, _ = self.content_attention(clicks, mask, candidate)
        return self.fuse_short_term(u_c, self.sequence_encode(clicks, mask))
