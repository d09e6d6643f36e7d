import json
from pathlib import Path

import numpy as np
import pytest

from bridgeplan import cli
from bridgeplan.corpus import save_corpus
from bridgeplan.planner import save_planner
from bridgeplan.mlp import zero_block
from bridgeplan.planner import PlannerParams

import synthdata


def small_corpus(seed, n=10, prefix="d"):
    return synthdata.cluster_corpus(
        n, np.random.default_rng(seed), n_clusters=4, topics_per_cluster=5,
        min_len=2, max_len=3, id_prefix=prefix,
    )


@pytest.fixture
def workspace(tmp_path):
    corpus = small_corpus(0, n=10, prefix="tr")
    test_id = small_corpus(1, n=4, prefix="id")
    test_ood = small_corpus(2, n=4, prefix="ood")
    save_corpus(corpus, tmp_path / "train.jsonl")
    save_corpus(test_id, tmp_path / "test_id.jsonl")
    save_corpus(test_ood, tmp_path / "test_ood.jsonl")
    config = {
        "seed": 3,
        "d": 4,
        "m": 64,
        "epochs": 2,
        "batch_size": 8,
        "lr_encoder": 1e-3,
        "lr_planner": 1e-3,
        "lambda": 0.5,
        "corpus": str(tmp_path / "train.jsonl"),
        "test_id": str(tmp_path / "test_id.jsonl"),
        "test_ood": str(tmp_path / "test_ood.jsonl"),
        "out_dir": str(tmp_path / "out"),
        "episodes": 8,
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config), encoding="utf-8")
    return tmp_path, config_path, config


def run(argv):
    return cli.main(argv)


def train_both(config_path):
    assert run(["--config", str(config_path), "train-encoder"]) == 0
    assert run(["--config", str(config_path), "train-planner"]) == 0


# -- training commands --------------------------------------------------------------

def test_train_encoder_writes_artifacts(workspace, capsys):
    tmp, config_path, config = workspace
    assert run(["--config", str(config_path), "train-encoder"]) == 0
    out = Path(config["out_dir"])
    assert (out / "encoder.json").exists()
    losses = json.loads((out / "encoder_losses.json").read_text())["losses"]
    assert len(losses) == config["epochs"]
    assert (out / "encoder_losses.csv").exists()
    assert (out / "encoder_losses.png").exists()
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["epochs"] == config["epochs"]


def test_missing_corpus_exits_one(workspace, capsys):
    tmp, config_path, config = workspace
    config["corpus"] = str(tmp / "nope.jsonl")
    config_path.write_text(json.dumps(config), encoding="utf-8")
    assert run(["--config", str(config_path), "train-encoder"]) == 1
    assert "nope.jsonl" in capsys.readouterr().err


def test_rerun_is_byte_identical(workspace):
    tmp, config_path, config = workspace
    assert run(["--config", str(config_path), "train-encoder", ]) == 0
    assert run(["--config", str(config_path), "train-planner"]) == 0
    assert run(["--config", str(config_path), "evaluate"]) == 0
    first = {
        p.name: p.read_bytes() for p in sorted(Path(config["out_dir"]).iterdir())
    }
    run(["--config", str(config_path), "train-encoder"])
    run(["--config", str(config_path), "train-planner"])
    run(["--config", str(config_path), "evaluate"])
    second = {
        p.name: p.read_bytes() for p in sorted(Path(config["out_dir"]).iterdir())
    }
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], f"{name} differs between reruns"


def test_seed_flag_overrides_config(workspace):
    tmp, config_path, config = workspace
    run(["--config", str(config_path), "train-encoder"])
    baseline = (Path(config["out_dir"]) / "encoder.json").read_bytes()
    run(["--config", str(config_path), "--seed", "99", "train-encoder"])
    assert (Path(config["out_dir"]) / "encoder.json").read_bytes() != baseline


# -- plan ------------------------------------------------------------------------------

def test_plan_copy_rule_prints_target(workspace, capsys):
    tmp, config_path, config = workspace
    run(["--config", str(config_path), "train-encoder"])
    # rig the horizon predictor to always answer zero transitions
    rigged = zero_block([config["m"], 4, 4, 9])
    rigged.biases[-1][0] = 1000.0
    save_planner(PlannerParams(f_t=rigged, t_max=8, m=config["m"]),
                 Path(config["out_dir"]) / "planner.json", seed=0)
    capsys.readouterr()
    instance = {
        "context_text": "hello", "knowledge_text": "",
        "target": {"action": None, "topic": "goal"},
        "candidates": [{"action": None, "topic": "goal"},
                       {"action": None, "topic": "other"}],
    }
    inst = tmp / "instance.json"
    inst.write_text(json.dumps(instance), encoding="utf-8")
    assert run(["--config", str(config_path), "plan", str(inst)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "[T]goal"
    assert (Path(config["out_dir"]) / "plan.json").exists()


def test_plan_same_seed_identical_output(workspace, capsys):
    tmp, config_path, config = workspace
    train_both(config_path)
    corpus = small_corpus(0, n=10, prefix="tr")
    vocab = sorted(corpus.vocab, key=lambda p: p.serialize())
    instance = {
        "context_text": "hello there", "knowledge_text": "k rel v",
        "target": vocab[0].to_dict(),
        "candidates": [p.to_dict() for p in vocab[:6]] + [vocab[0].to_dict()],
    }
    inst = tmp / "instance.json"
    inst.write_text(json.dumps(instance), encoding="utf-8")
    capsys.readouterr()
    assert run(["--config", str(config_path), "plan", str(inst)]) == 0
    first = capsys.readouterr().out
    assert run(["--config", str(config_path), "plan", str(inst)]) == 0
    assert capsys.readouterr().out == first


def test_plan_malformed_instance(workspace, capsys):
    tmp, config_path, config = workspace
    train_both(config_path)
    inst = tmp / "broken.json"
    inst.write_text("{oops", encoding="utf-8")
    capsys.readouterr()
    assert run(["--config", str(config_path), "plan", str(inst)]) == 1
    assert "broken.json:1:" in capsys.readouterr().err


def test_plan_missing_checkpoint(workspace, capsys):
    tmp, config_path, config = workspace
    inst = tmp / "instance.json"
    inst.write_text("{}", encoding="utf-8")
    assert run(["--config", str(config_path), "plan", str(inst)]) == 1


# -- evaluate ----------------------------------------------------------------------------

def test_evaluate_reports_both_splits(workspace, capsys):
    tmp, config_path, config = workspace
    train_both(config_path)
    capsys.readouterr()
    assert run(["--config", str(config_path), "evaluate"]) == 0
    reports = json.loads(capsys.readouterr().out.strip())
    assert set(reports) == {"id", "ood"}
    for split in ("id", "ood"):
        assert set(reports[split]) == {"f1", "bi_f1", "goal_success", "n"}
    out = Path(config["out_dir"])
    assert (out / "evaluation.csv").exists()
    assert (out / "evaluation.png").exists()


def test_evaluate_empty_split_exits_one(workspace, capsys):
    tmp, config_path, config = workspace
    train_both(config_path)
    (tmp / "test_id.jsonl").write_text("", encoding="utf-8")
    capsys.readouterr()
    assert run(["--config", str(config_path), "evaluate"]) == 1
    assert "no test instances" in capsys.readouterr().err


# -- simulate ----------------------------------------------------------------------------

def write_graph(tmp, start="a", target="a", nodes=("a", "b"), edges=(("a", "b"),)):
    path = tmp / "graph.json"
    path.write_text(json.dumps({
        "nodes": list(nodes), "edges": [list(e) for e in edges],
        "start": start, "target": target,
    }), encoding="utf-8")
    return path


def set_policy(config_path, config, policy):
    config["policy"] = policy
    config_path.write_text(json.dumps(config), encoding="utf-8")


def test_simulate_start_equals_target(workspace, capsys):
    tmp, config_path, config = workspace
    set_policy(config_path, config, "oracle")
    graph = write_graph(tmp)
    assert run(["--config", str(config_path), "simulate", str(graph)]) == 0
    report = json.loads(capsys.readouterr().out.strip())
    assert report["success_rate"] == 1.0
    assert report["mean_turns"] == 0.0


def test_simulate_disconnected_target(workspace, capsys):
    tmp, config_path, config = workspace
    set_policy(config_path, config, "oracle")
    graph = write_graph(tmp, start="a", target="c", nodes=("a", "b", "c"))
    assert run(["--config", str(config_path), "simulate", str(graph)]) == 0
    report = json.loads(capsys.readouterr().out.strip())
    assert report["success_rate"] == 0.0


def test_simulate_deterministic_and_jobs_order_independent(workspace, capsys):
    tmp, config_path, config = workspace
    set_policy(config_path, config, "random_walk")
    graph = write_graph(tmp, start="a", target="d",
                        nodes=("a", "b", "c", "d"),
                        edges=(("a", "b"), ("b", "c"), ("c", "d"), ("a", "c")))
    assert run(["--config", str(config_path), "simulate", str(graph)]) == 0
    first = capsys.readouterr().out
    assert run(["--config", str(config_path), "--jobs", "4", "simulate", str(graph)]) == 0
    assert capsys.readouterr().out == first
    csv_text = (Path(config["out_dir"]) / "simulate.csv").read_text()
    assert len(csv_text.strip().splitlines()) == config["episodes"] + 1


def test_simulate_bad_graph_exits_one(workspace, capsys):
    tmp, config_path, config = workspace
    graph = tmp / "graph.json"
    graph.write_text('{"nodes": []}', encoding="utf-8")
    assert run(["--config", str(config_path), "simulate", str(graph)]) == 1


# -- config handling ---------------------------------------------------------------------

def test_unknown_config_field_rejected(workspace, capsys):
    tmp, config_path, config = workspace
    config["mystery"] = 1
    config_path.write_text(json.dumps(config), encoding="utf-8")
    assert run(["--config", str(config_path), "train-encoder"]) == 1
    assert "mystery" in capsys.readouterr().err


def test_invalid_config_value_rejected(workspace, capsys):
    tmp, config_path, config = workspace
    config["d"] = 0
    config_path.write_text(json.dumps(config), encoding="utf-8")
    assert run(["--config", str(config_path), "train-encoder"]) == 1


def test_embeddings_flag_loads_table(workspace, tmp_path):
    tmp, config_path, config = workspace
    table = tmp / "emb.jsonl"
    rows = [json.dumps({"text": "hello", "vector": [0.0] * config["m"]})]
    table.write_text("\n".join(rows) + "\n", encoding="utf-8")
    assert run(["--config", str(config_path), "--embeddings", str(table),
                "train-encoder"]) == 0
