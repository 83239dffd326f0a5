"""Run configuration: every hyperparameter in one flat namespace."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace


@dataclass(frozen=True)
class RunConfig:
    # text extractor
    word_dim: int = 50
    type_dim: int = 50
    n_filters: int = 128
    windows: tuple = (2, 3)
    # embeddings / graph
    dim: int = 128
    layers: int = 2
    user_samples: int = 10
    news_samples: int = 30
    self_loops: bool = False
    # topics
    n_topics: int = 20
    lda_alpha: float | None = None
    lda_beta: float = 0.01
    lda_iters: int = 1000
    lda_infer_iters: int = 100
    # short-term interest
    history: int = 10
    seq_window: int = 3
    use_short_term: bool = True
    # prediction network hidden sizes; empty means [dim, dim // 2]
    hidden: tuple = field(default_factory=tuple)
    # optimisation
    lr: float = 3e-4
    l2: float = 0.005
    dropout: float = 0.5
    batch_size: int = 128
    epochs: int = 20
    patience: int = 5
    init_std: float = 0.1
    dtype: str = "float32"
    # evaluation and split protocol
    threshold: float = 0.5
    graph_days: int = 5
    train_days: int = 1
    final_days: int = 1
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if not 1 <= self.layers <= 3:
            raise ValueError(f"layers must be 1, 2 or 3, got {self.layers}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def hidden_sizes(self) -> tuple:
        return self.hidden or (self.dim, max(1, self.dim // 2))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["windows"] = list(self.windows)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def names(cls) -> set:
        return {f.name for f in fields(cls)}

    def override(self, **kw) -> "RunConfig":
        unknown = set(kw) - self.names()
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls().override(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
