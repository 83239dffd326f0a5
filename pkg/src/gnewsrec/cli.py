"""Batch entry points: ingest, build-graph, infer-topics, train, eval.

Exit codes are 0 on success, 1 for user errors (bad paths, bad config,
malformed data) and 2 for anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import RunConfig
from .data import (IngestError, SyntheticSpec, dataset_stats, encode_news, generate_synthetic,
                   ingest_with_report, preprocess, save_json, write_tsv)
from .evaluation import EmptyWindowError, auc, f1, popularity_scores, write_metrics
from .numerics import load_checkpoint, make_rng, save_checkpoint
from .pipeline import lda_document, prepare
from .predictor import evaluate, train
from .text_extractor import Vocabulary
from .topic_model import LdaModel, assign_topic, infer_topics

log = logging.getLogger("gnewsrec")

EVENTS_FILE = "events.tsv"
CHECKPOINT_FILE = "checkpoint.bin"


class UserError(Exception):
    """Problem the caller can fix: missing files, bad flags or config values."""


def _events_path(data: str) -> str:
    path = os.path.join(data, EVENTS_FILE) if os.path.isdir(data) else data
    if not os.path.exists(path):
        raise UserError(f"no event log at {path}")
    return path


def _load_events(data: str):
    events, _ = ingest_with_report(_events_path(data))
    if not events:
        raise UserError(f"{data}: no events")
    return events


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def resolve_config(args) -> RunConfig:
    """Defaults, then the ``--config`` file, then ``--set`` pairs, then dedicated flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise UserError(f"config file not found: {args.config}")
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = cfg.override(**json.load(fh))
        except json.JSONDecodeError as exc:
            raise UserError(f"{args.config}: invalid JSON ({exc})") from exc
    overrides = {}
    for pair in getattr(args, "set", None) or []:
        key, sep, raw = pair.partition("=")
        if not sep:
            raise UserError(f"--set expects key=value, got {pair!r}")
        overrides[key.strip()] = _parse_value(raw)
    for flag in ("layers", "seed", "epochs", "threshold"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    cfg = cfg.override(**overrides)
    changed = {k: v for k, v in cfg.to_dict().items() if v != RunConfig().to_dict()[k]}
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    if changed:
        log.info("overrides of the defaults: %s", json.dumps(changed, sort_keys=True))
    return cfg


# -- commands ----------------------------------------------------------------

def cmd_ingest(args) -> None:
    if bool(args.input) == bool(args.synthetic):
        raise UserError("give exactly one of --input or --synthetic")
    os.makedirs(args.out, exist_ok=True)
    report = None
    if args.synthetic:
        if not os.path.exists(args.synthetic):
            raise UserError(f"synthetic spec not found: {args.synthetic}")
        with open(args.synthetic, encoding="utf-8") as fh:
            spec = SyntheticSpec.from_dict(json.load(fh))
        events, truth = generate_synthetic(spec)
        save_json({"news_topic": truth.news_topic, "user_clusters": truth.user_clusters},
                  os.path.join(args.out, "truth.json"))
    else:
        if not os.path.exists(args.input):
            raise UserError(f"input not found: {args.input}")
        events, report = ingest_with_report(args.input)
    write_tsv(events, os.path.join(args.out, EVENTS_FILE))
    stats = dataset_stats(events)
    if report is not None:
        stats["lines"], stats["skipped_lines"] = report.lines, report.skipped
    save_json(stats, os.path.join(args.out, "stats.json"))
    print(json.dumps(stats, indent=2, sort_keys=True))


def cmd_build_graph(args) -> None:
    cfg = resolve_config(args)
    prep = prepare(_load_events(args.data), cfg)
    graph = prep.eval_graph if args.window == "eval" else prep.train_graph
    user_ids = list(prep.user_index)
    news_ids = list(prep.news_index)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "edges.tsv"), "w", encoding="utf-8") as fh:
        for u, clicked in enumerate(graph.user_news):
            for d in clicked:
                fh.write(f"click\t{user_ids[u]}\t{news_ids[int(d)]}\n")
        for d, t in enumerate(graph.news_topic):
            fh.write(f"topic\t{news_ids[d]}\tT{int(t)}\n")
    counts = graph.counts()
    save_json(counts, os.path.join(args.out, "graph_stats.json"))
    print(json.dumps(counts, indent=2, sort_keys=True))


def _fold_in_saved(run: str, events, cfg: RunConfig):
    """Topic mixtures of every news in ``events`` under a trained run's LDA model."""
    lda_path, vocab_dir = os.path.join(run, "lda.bin"), os.path.join(run, "vocab")
    if not os.path.exists(lda_path) or not os.path.isdir(vocab_dir):
        raise UserError(f"{run}: no trained topic model (expected lda.bin and vocab/)")
    lda, vocab = LdaModel.load(lda_path), Vocabulary.load(vocab_dir)
    cleaned, _ = preprocess(events, vocab_events=[])
    items = encode_news(cleaned, vocab)
    n_words = len(vocab.words)
    return {nid: infer_topics(lda, lda_document(item, n_words), cfg.lda_infer_iters,
                              make_rng(cfg.seed, 11, i))
            for i, (nid, item) in enumerate(items.items())}


def cmd_infer_topics(args) -> None:
    events = _load_events(args.data)
    if args.run:
        cfg_path = os.path.join(args.run, "run_config.json")
        cfg = RunConfig.from_file(cfg_path) if os.path.exists(cfg_path) else resolve_config(args)
        thetas = _fold_in_saved(args.run, events, cfg)
    else:
        cfg = resolve_config(args)
        prep = prepare(events, cfg)
        thetas = {nid: prep.theta[i] for nid, i in prep.news_index.items()}
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("news_id\ttopic\ttheta\n")
        for nid, theta in thetas.items():
            out.write(f"{nid}\t{assign_topic(theta)}\t{','.join(f'{w:.6f}' for w in theta)}\n")
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_train(args) -> None:
    cfg = resolve_config(args)
    prep = prepare(_load_events(args.data), cfg)
    log.info("samples: train %d, validation %d, test %d", len(prep.train), len(prep.val), len(prep.test))
    model = prep.build_model()
    tlog = train(model, prep.train_graph, prep.train, prep.eval_graph, prep.val, cfg)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "run_config.json"))
    tlog.write(os.path.join(args.out, "train_log.csv"))
    save_checkpoint(os.path.join(args.out, CHECKPOINT_FILE), model.store.values(),
                    {"best_epoch": tlog.best_epoch, "config": cfg.to_dict(), "step": model.store.step})
    prep.lda.save(os.path.join(args.out, "lda.bin"))
    prep.vocab.save(os.path.join(args.out, "vocab"))
    log.info("best epoch %d, validation AUC %.4f; run written to %s", tlog.best_epoch,
             tlog.best_val_auc, args.out)


def cmd_eval(args) -> None:
    ckpt = os.path.join(args.run, CHECKPOINT_FILE)
    cfg_path = os.path.join(args.run, "run_config.json")
    if not os.path.exists(ckpt) or not os.path.exists(cfg_path):
        raise UserError(f"{args.run}: no trained run (expected {CHECKPOINT_FILE} and run_config.json)")
    cfg = RunConfig.from_file(cfg_path)
    if args.threshold is not None:
        cfg = cfg.override(threshold=args.threshold)
    prep = prepare(_load_events(args.data), cfg)
    model = prep.build_model()
    arrays, _ = load_checkpoint(ckpt)
    try:
        model.store.load_values(arrays)
    except (KeyError, ValueError) as exc:
        raise UserError(f"checkpoint does not match the data/config: {exc}") from exc
    rows = []
    history = prep.splits.graph + prep.splits.train
    for name, samples in (("validation", prep.val), ("test", prep.test)):
        if not len(samples):
            continue
        res = evaluate(model, prep.eval_graph, samples, cfg.seed, cfg.threshold)
        rows.append({"split": name, "auc": f"{res['auc']:.6f}", "f1": f"{res['f1']:.6f}",
                     "n_pos": samples.n_pos, "n_neg": len(samples) - samples.n_pos})
    if args.baseline and len(prep.test):
        news_ids = list(prep.news_index)
        scores = popularity_scores(history, [news_ids[i] for i in prep.test.news])
        rows.append({"split": "test-popularity", "auc": f"{auc(prep.test.labels, scores):.6f}",
                     "f1": f"{f1(prep.test.labels, scores / max(scores.max(), 1), cfg.threshold):.6f}",
                     "n_pos": prep.test.n_pos, "n_neg": len(prep.test) - prep.test.n_pos})
    out = args.out or os.path.join(args.run, "metrics.csv")
    write_metrics(rows, out)
    for r in rows:
        print(f"{r['split']}: auc {r['auc']} f1 {r['f1']}")


# -- argument parsing --------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with a flat key/value config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable); values parse as JSON when possible")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnewsrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a click log or generate a synthetic one")
    p.add_argument("--input", help="JSON-lines or TSV click log")
    p.add_argument("--synthetic", help="JSON file with synthetic dataset parameters")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-graph", help="dump the user-news-topic graph edges")
    p.add_argument("--data", required=True, help="dataset directory or event file")
    p.add_argument("--out", required=True)
    p.add_argument("--window", choices=("train", "eval"), default="eval",
                   help="graph window: history only (train) or history plus training day (eval)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("infer-topics", help="write news_id, assigned topic and topic mixture per news")
    p.add_argument("--data", required=True)
    p.add_argument("--run", help="fold documents into this trained run's topic model instead of refitting")
    p.add_argument("--out", help="output TSV (stdout if omitted)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_infer_topics)

    p = sub.add_parser("train", help="train a model and write checkpoint and log")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--layers", type=int, choices=(1, 2, 3))
    p.add_argument("--epochs", type=int)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score validation and test splits of a trained run")
    p.add_argument("--run", required=True, help="run directory from train")
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--baseline", action="store_true", help="also report the popularity baseline")
    p.add_argument("--out", help="metrics CSV (default: <run>/metrics.csv)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UserError, IngestError, EmptyWindowError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # config validation and data contract violations
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
