"""Click-log ingestion, text preprocessing and synthetic datasets.

Two input layouts are accepted:

* Adressa JSON lines: one event object per line with ``userId``, ``id``
  (news id), ``time``, ``title``, ``profile`` and optional
  ``sessionStart``/``sessionStop``.
* TSV, one event per line, UTF-8::

      user_id<TAB>news_id<TAB>timestamp<TAB>title<TAB>entity:type;entity:type;...

  The profile field may be empty.  Each ``entity:type`` pair splits on its
  last colon, so entities may contain colons but neither field may contain
  a semicolon or tab.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .text_extractor import NewsItem, Vocabulary

log = logging.getLogger(__name__)

ALLOWED_ENTITY_TYPES = frozenset({
    "concept", "sentiment", "entity", "classification", "category", "adressa-tag",
    "person", "location", "company", "taxonomy", "acronym",
})

_TOKEN = re.compile(r"\w+", re.UNICODE)


class IngestError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClickEvent:
    user_id: str
    news_id: str
    timestamp: int
    title: str = ""
    profile: tuple = ()
    session_start: bool = False
    session_stop: bool = False


# -- ingestion -----------------------------------------------------------------

def _adressa_profile(raw) -> tuple:
    pairs = []
    for entry in raw or ():
        item = entry.get("item")
        if not item:
            continue
        for g in entry.get("groups") or ():
            if g.get("group"):
                pairs.append((str(item), str(g["group"])))
    return tuple(pairs)


def parse_json_line(line: str) -> ClickEvent:
    obj = json.loads(line)
    user, news, ts = obj.get("userId"), obj.get("id"), obj.get("time")
    if not user or not news or ts is None:
        raise ValueError("missing userId, id or time")
    ts = int(ts)
    if ts <= 0:
        raise ValueError("non-positive timestamp")
    return ClickEvent(str(user), str(news), ts, obj.get("title") or "",
                      _adressa_profile(obj.get("profile")),
                      bool(obj.get("sessionStart", False)), bool(obj.get("sessionStop", False)))


def format_profile(profile: Iterable[tuple[str, str]]) -> str:
    return ";".join(f"{e}:{t}" for e, t in profile)


def parse_profile(field_: str) -> tuple:
    pairs = []
    for chunk in field_.split(";"):
        if not chunk:
            continue
        ent, sep, typ = chunk.rpartition(":")
        if not sep or not ent or not typ:
            raise ValueError(f"bad profile entry {chunk!r}")
        pairs.append((ent, typ))
    return tuple(pairs)


def parse_tsv_line(line: str) -> ClickEvent:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5:
        raise ValueError(f"expected 5 tab-separated fields, got {len(parts)}")
    user, news, ts, title, profile = parts
    if not user or not news:
        raise ValueError("empty user or news id")
    ts = int(ts)
    if ts <= 0:
        raise ValueError("non-positive timestamp")
    return ClickEvent(user, news, ts, title, parse_profile(profile))


def format_tsv_line(e: ClickEvent) -> str:
    return f"{e.user_id}\t{e.news_id}\t{e.timestamp}\t{e.title}\t{format_profile(e.profile)}\n"


def write_tsv(events: Iterable[ClickEvent], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in events:
            fh.write(format_tsv_line(e))


@dataclass
class IngestReport:
    lines: int
    skipped: int
    examples: list


def ingest_with_report(path, max_bad_fraction: float = 0.1) -> tuple[list[ClickEvent], IngestReport]:
    """Parse a JSON-lines or TSV click log into timestamp-sorted events.

    Malformed lines are skipped and counted; more than ``max_bad_fraction``
    of them aborts with an :class:`IngestError`.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if ln.strip()]
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    parse = parse_json_line if lines and lines[0].lstrip().startswith("{") else parse_tsv_line
    events, bad = [], []
    for n, line in enumerate(lines, 1):
        try:
            events.append(parse(line))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            bad.append((n, str(exc)))
    if bad:
        log.warning("%s: skipped %d malformed line(s) of %d", path, len(bad), len(lines))
    if lines and len(bad) > max_bad_fraction * len(lines):
        sample = "; ".join(f"line {n}: {msg}" for n, msg in bad[:3])
        raise IngestError(f"{path}: {len(bad)}/{len(lines)} malformed lines ({sample})")
    events.sort(key=lambda e: e.timestamp)
    return events, IngestReport(len(lines), len(bad), bad[:10])


def ingest(path, max_bad_fraction: float = 0.1) -> list[ClickEvent]:
    return ingest_with_report(path, max_bad_fraction)[0]


# -- preprocessing -----------------------------------------------------------------

def load_stopwords(path=None) -> frozenset:
    if path is None:
        text = resources.files("gnewsrec.resources").joinpath("stopwords_no.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


def tokenize(title: str, stopwords: frozenset = frozenset()) -> list[str]:
    return [t for t in _TOKEN.findall(title.lower()) if t not in stopwords]


def clean_event(e: ClickEvent, stopwords: frozenset, allowed_types=ALLOWED_ENTITY_TYPES) -> ClickEvent:
    title = " ".join(tokenize(e.title, stopwords))
    profile = tuple((ent.strip().lower().replace(";", " ").replace("\t", " "), typ.strip().lower())
                    for ent, typ in e.profile if typ.strip().lower() in allowed_types and ent.strip())
    return ClickEvent(e.user_id, e.news_id, e.timestamp, title, profile, e.session_start, e.session_stop)


def build_vocabulary(events: Iterable[ClickEvent]) -> Vocabulary:
    """Vocabulary over already-cleaned events, ids assigned in first-seen order."""
    vocab = Vocabulary()
    seen = set()
    for e in events:
        if e.news_id in seen:
            continue
        seen.add(e.news_id)
        for w in e.title.split():
            vocab.words.add(w)
        for ent, typ in e.profile:
            vocab.entities.add(ent)
            vocab.types.add(typ)
    return vocab


def preprocess(events: Sequence[ClickEvent], vocab_events: Sequence[ClickEvent] | None = None,
               stopwords: frozenset | None = None, allowed_types=ALLOWED_ENTITY_TYPES
               ) -> tuple[list[ClickEvent], Vocabulary]:
    """Lowercase and stopword-filter titles, drop profile entries of filtered types.

    The vocabulary is built from ``vocab_events`` (the training window) when
    given, otherwise from all events.  Tokens outside it encode as unknown.
    """
    stopwords = load_stopwords() if stopwords is None else stopwords
    cleaned = [clean_event(e, stopwords, allowed_types) for e in events]
    if vocab_events is None:
        source = cleaned
    else:
        source = [clean_event(e, stopwords, allowed_types) for e in vocab_events]
    return cleaned, build_vocabulary(source)


def encode_news(events: Iterable[ClickEvent], vocab: Vocabulary) -> dict[str, NewsItem]:
    """One :class:`NewsItem` per distinct news id (text from its first event)."""
    items = {}
    for e in events:
        if e.news_id in items:
            continue
        items[e.news_id] = NewsItem(
            e.news_id,
            vocab.words.encode(e.title.split()),
            vocab.entities.encode(ent for ent, _ in e.profile),
            vocab.types.encode(typ for _, typ in e.profile),
        )
    return items


def dataset_stats(events: Sequence[ClickEvent]) -> dict:
    """Summary counts in the layout of the usual dataset-statistics table."""
    first = {}
    for e in events:
        first.setdefault(e.news_id, e)
    words = {w for e in first.values() for w in e.title.split()}
    types = {t for e in first.values() for _, t in e.profile}
    n_news = len(first)
    return {
        "users": len({e.user_id for e in events}),
        "news": n_news,
        "events": len(events),
        "vocabulary": len(words),
        "entity_types": len(types),
        "avg_words_per_title": (sum(len(e.title.split()) for e in first.values()) / n_news) if n_news else 0.0,
        "avg_entities_per_news": (sum(len(e.profile) for e in first.values()) / n_news) if n_news else 0.0,
    }


# -- synthetic data -----------------------------------------------------------------

SYNTHETIC_START = 1483228800  # 2017-01-01 00:00:00 UTC
DAY = 86400


@dataclass
class SyntheticSpec:
    """Desk-scale click log with planted interest structure.

    News belong to one of ``n_topics`` categories.  Every user has
    ``n_interest_clusters`` categories of interest: the first is the
    long-term one, the rest are drift targets.  Clicks come in sessions;
    each session follows one interest, which is a drift target with
    probability ``drift``.  ``affinity`` is the chance a click follows the
    session interest rather than a uniformly random category.  With
    ``repeat_clicks`` off a user never clicks the same news twice, so a
    held-out click is never already a user-news edge of the history graph.
    """

    n_users: int = 20
    n_news: int = 300
    n_topics: int = 4
    n_interest_clusters: int = 2
    events_per_user: int = 500
    days: int = 7
    affinity: float = 0.98
    drift: float = 0.5
    session_length: int = 12
    news_lifetime_days: float = 2.0
    words_per_topic: int = 30
    shared_words: int = 60
    title_length: int = 6
    title_signal: float = 0.7
    entities_per_topic: int = 20
    entities_per_news: int = 4
    repeat_clicks: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticTruth:
    news_topic: dict[str, int]
    user_clusters: dict[str, list[int]]
    event_interest: list[int] = field(default_factory=list)   # session interest per event


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[ClickEvent], SyntheticTruth]:
    rng = np.random.default_rng(spec.seed)
    if spec.n_interest_clusters > spec.n_topics:
        raise ValueError("n_interest_clusters cannot exceed n_topics")
    types = sorted(ALLOWED_ENTITY_TYPES)
    topic_words = [[f"t{k}w{i}" for i in range(spec.words_per_topic)] for k in range(spec.n_topics)]
    shared = [f"sw{i}" for i in range(spec.shared_words)]
    topic_entities = [[(f"t{k}e{i}", types[(k * 7 + i) % len(types)]) for i in range(spec.entities_per_topic)]
                      for k in range(spec.n_topics)]

    span = spec.days * DAY
    news_topic = rng.integers(0, spec.n_topics, size=spec.n_news)
    publish = np.sort(rng.uniform(-spec.news_lifetime_days * DAY / 2, span, size=spec.n_news))
    popularity = rng.pareto(2.0, size=spec.n_news) + 1.0
    news = []
    for j in range(spec.n_news):
        k = news_topic[j]
        words = []
        for _ in range(spec.title_length):
            pool = topic_words[k] if (rng.random() < spec.title_signal or not shared) else shared
            words.append(pool[rng.integers(len(pool))])
        n_ent = min(spec.entities_per_news, spec.entities_per_topic)
        ents = [topic_entities[k][i] for i in rng.choice(spec.entities_per_topic, size=n_ent, replace=False)]
        news.append((f"N{j:05d}", " ".join(words), tuple(ents)))

    events: list[tuple] = []
    user_clusters = {}
    lifetime = spec.news_lifetime_days * DAY
    for u in range(spec.n_users):
        uid = f"U{u:04d}"
        clusters = rng.choice(spec.n_topics, size=spec.n_interest_clusters, replace=False).tolist()
        user_clusters[uid] = clusters
        n_sessions = max(1, int(np.ceil(spec.events_per_user / spec.session_length)))
        starts = np.sort(rng.uniform(0, span - 3600, size=n_sessions))
        remaining = spec.events_per_user
        seen = np.zeros(spec.n_news, dtype=bool)
        for s, t0 in enumerate(starts):
            if remaining <= 0:
                break
            if spec.n_interest_clusters > 1 and rng.random() < spec.drift:
                mood = clusters[1 + rng.integers(spec.n_interest_clusters - 1)]
            else:
                mood = clusters[0]
            t = t0
            for _ in range(min(spec.session_length, remaining)):
                t += rng.integers(30, 300)
                topic = mood if rng.random() < spec.affinity else int(rng.integers(spec.n_topics))
                allowed = (publish <= t) & (news_topic == topic)
                if not spec.repeat_clicks:
                    allowed &= ~seen
                alive = np.flatnonzero(allowed & (publish + lifetime > t))
                if alive.size == 0:
                    alive = np.flatnonzero(allowed)
                if alive.size == 0:
                    continue
                w = popularity[alive] / popularity[alive].sum()
                j = int(alive[rng.choice(alive.size, p=w)])
                seen[j] = True
                events.append((int(SYNTHETIC_START + t), uid, j, mood))
                remaining -= 1
    events.sort(key=lambda x: (x[0], x[1]))
    out = []
    moods = []
    for ts, uid, j, mood in events:
        nid, title, profile = news[j]
        out.append(ClickEvent(uid, nid, ts, title, profile))
        moods.append(mood)
    truth = SyntheticTruth({news[j][0]: int(news_topic[j]) for j in range(spec.n_news)}, user_clusters, moods)
    return out, truth


def save_json(obj, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
