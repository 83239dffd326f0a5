import csv
import json

import numpy as np
import pytest

from gnewsrec.cli import build_parser, main, resolve_config
from gnewsrec.config import RunConfig

SPEC = {"n_users": 8, "n_news": 40, "n_topics": 2, "events_per_user": 60}
CONFIG = {"word_dim": 6, "type_dim": 6, "n_filters": 6, "dim": 8, "n_topics": 2, "lda_iters": 50,
          "lda_alpha": 0.1, "epochs": 2, "batch_size": 32, "history": 4, "lr": 3e-3}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC))
    (root / "config.json").write_text(json.dumps(CONFIG))
    assert main(["ingest", "--synthetic", str(root / "spec.json"), "--out", str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "run"),
                 "--config", str(root / "config.json")]) == 0
    return root


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_ingest_writes_stats(workspace):
    stats = json.loads((workspace / "data" / "stats.json").read_text())
    assert stats["users"] == 8 and stats["events"] == 8 * 60
    assert (workspace / "data" / "truth.json").exists()


def test_ingest_is_deterministic(workspace, tmp_path):
    assert main(["ingest", "--synthetic", str(workspace / "spec.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "events.tsv").read_bytes() == (workspace / "data" / "events.tsv").read_bytes()


def test_ingest_real_file(workspace, tmp_path):
    src = workspace / "data" / "events.tsv"
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "events.tsv").read_bytes() == src.read_bytes()
    assert json.loads((tmp_path / "stats.json").read_text())["skipped_lines"] == 0


def test_missing_input_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    assert main(["ingest", "--input", str(missing), "--out", str(tmp_path / "o")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_train_outputs(workspace):
    run = workspace / "run"
    for name in ("checkpoint.bin", "train_log.csv", "run_config.json", "lda.bin"):
        assert (run / name).exists(), name
    rows = read_rows(run / "train_log.csv")
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert json.loads((run / "run_config.json").read_text())["dim"] == 8


def test_train_is_deterministic(workspace, tmp_path):
    args = ["train", "--data", str(workspace / "data"), "--config", str(workspace / "config.json"),
            "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("train_log.csv", "checkpoint.bin", "run_config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_eval_threshold_changes_f1_only(workspace, tmp_path):
    run = str(workspace / "run")
    data = str(workspace / "data")
    assert main(["eval", "--run", run, "--data", data, "--out", str(tmp_path / "a.csv")]) == 0
    assert main(["eval", "--run", run, "--data", data, "--threshold", "0.4", "--out",
                 str(tmp_path / "b.csv")]) == 0
    a, b = read_rows(tmp_path / "a.csv"), read_rows(tmp_path / "b.csv")
    assert [r["split"] for r in a] == ["validation", "test"]
    assert [r["auc"] for r in a] == [r["auc"] for r in b]
    assert 0.0 <= float(a[1]["auc"]) <= 1.0


def test_eval_baseline_row(workspace, tmp_path):
    assert main(["eval", "--run", str(workspace / "run"), "--data", str(workspace / "data"), "--baseline",
                 "--out", str(tmp_path / "m.csv")]) == 0
    assert read_rows(tmp_path / "m.csv")[-1]["split"] == "test-popularity"


def test_eval_missing_checkpoint(workspace, tmp_path):
    assert main(["eval", "--run", str(tmp_path), "--data", str(workspace / "data")]) == 1


def test_build_graph(workspace, tmp_path):
    assert main(["build-graph", "--data", str(workspace / "data"), "--out", str(tmp_path),
                 "--config", str(workspace / "config.json")]) == 0
    counts = json.loads((tmp_path / "graph_stats.json").read_text())
    lines = (tmp_path / "edges.tsv").read_text().splitlines()
    assert sum(l.startswith("click\t") for l in lines) == counts["click_edges"]
    assert sum(l.startswith("topic\t") for l in lines) == counts["topic_edges"] == counts["news"]


@pytest.mark.parametrize("use_run", [False, True])
def test_infer_topics_full_mixture(workspace, tmp_path, use_run):
    args = ["infer-topics", "--data", str(workspace / "data"), "--out", str(tmp_path / "t.tsv"),
            "--config", str(workspace / "config.json")]
    if use_run:
        args += ["--run", str(workspace / "run")]
    assert main(args) == 0
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert lines[0] == "news_id\ttopic\ttheta"
    for line in lines[1:]:
        _, topic, theta = line.split("\t")
        weights = np.array([float(w) for w in theta.split(",")])
        assert len(weights) == 2 and abs(weights.sum() - 1) < 1e-5
        assert int(topic) == int(np.argmax(weights))


def test_config_precedence(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"dim": 16, "layers": 1, "lr": 0.1}))
    args = build_parser().parse_args(["train", "--data", "x", "--out", "y", "--config", str(tmp_path / "c.json"),
                                      "--set", "lr=0.01", "--set", "windows=[2]", "--layers", "2"])
    cfg = resolve_config(args)
    assert (cfg.dim, cfg.lr, cfg.layers, cfg.windows) == (16, 0.01, 2, (2,))
    assert RunConfig().lr == 3e-4 and RunConfig().l2 == 0.005


def test_bad_config_values_are_user_errors(workspace, tmp_path):
    base = ["train", "--data", str(workspace / "data"), "--out", str(tmp_path)]
    assert main(base + ["--set", "no_such_key=1"]) == 1
    assert main(base + ["--set", "dtype=float16"]) == 1
    assert main(base + ["--config", str(tmp_path / "missing.json")]) == 1


def test_defaults_match_published_settings():
    cfg = RunConfig()
    assert (cfg.word_dim, cfg.type_dim, cfg.dim, cfg.n_topics) == (50, 50, 128, 20)
    assert (cfg.user_samples, cfg.news_samples, cfg.history, cfg.layers) == (10, 30, 10, 2)
    assert (cfg.lr, cfg.l2, cfg.dropout) == (3e-4, 0.005, 0.5)
