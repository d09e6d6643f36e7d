"""Command-line entry point wiring corpora, training, planning, and evaluation.

Subcommands: train-encoder, train-planner, plan, evaluate, simulate.  All of
them read a JSON config file; individual flags override config fields, and
the effective config is echoed into every artifact written to disk so runs
can be reproduced from their outputs alone.  Every command is a pure
function of (config, input files, seed): a rerun produces byte-identical
artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .bridge import DECAY_KINDS, BridgeConfig
from .corpus import Corpus, load_corpus, system_turn_indices, remaining_path
from .embedder import Featurizer, load_embedding_table
from .encoder import (
    EncoderTrainConfig,
    load_encoder,
    save_encoder,
    train_encoder,
)
from .evaluation import (
    OraclePolicy,
    RandomWalkPolicy,
    TopicGraph,
    TrainedPolicy,
    TurnPrediction,
    bigram_f1,
    goal_success,
    metrics_report,
    micro_f1,
    self_play,
)
from .planner import (
    PlannerTrainConfig,
    format_prompt,
    load_planner,
    plan,
    plan_input_from_dialogue,
    plan_input_from_dict,
    save_planner,
    train_planner,
)
from . import report


@dataclass
class RunConfig:
    """Run parameters; JSON keys match field names ('lambda' maps to lam)."""

    seed: int = 0
    d: int = 16
    m: int = 256
    decay_kind: str = "linear"
    lam: float = 0.5
    t_max: int = 8
    batch_size: int = 64
    planner_batch_size: int = 16
    lr_encoder: float = 2e-4
    lr_planner: float = 2e-5
    epochs: int = 10
    snapshots: str = "all"
    window: int = 2
    prompt_style: str = "auto"
    episodes: int = 100
    follow_prob: float = 1.0
    max_turns: int = 8
    policy: str = "trained"
    corpus: str = ""
    test_id: str = ""
    test_ood: str = ""
    encoder_ckpt: str = "encoder.json"
    planner_ckpt: str = "planner.json"
    out_dir: str = "out"
    embeddings: str = ""

    def __post_init__(self) -> None:
        positive = ("d", "m", "t_max", "batch_size", "planner_batch_size",
                    "lr_encoder", "lr_planner", "episodes", "max_turns")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")
        if self.epochs < 0 or self.window < 0:
            raise ValueError("epochs and window must be >= 0")
        if self.decay_kind not in DECAY_KINDS:
            raise ValueError(f"decay_kind must be one of {DECAY_KINDS}")
        if not 0.0 <= self.follow_prob <= 1.0:
            raise ValueError("follow_prob must lie in [0, 1]")

    def bridge(self) -> BridgeConfig:
        return BridgeConfig(d=self.d, decay_kind=self.decay_kind, lam=self.lam)


def load_config(path: str | Path, overrides: dict) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown config fields {sorted(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**raw)


def _featurizer(cfg: RunConfig) -> Featurizer:
    table = load_embedding_table(cfg.embeddings, cfg.m) if cfg.embeddings else None
    return Featurizer(cfg.m, table)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(obj: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _print_json(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _load_required_corpus(path: str, what: str) -> Corpus:
    if not path:
        raise FileNotFoundError(f"config does not name a {what} corpus")
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} corpus file not found: {path}")
    return load_corpus(path)


def _style_for(cfg: RunConfig, path_points) -> str:
    if cfg.prompt_style != "auto":
        return cfg.prompt_style
    return "action_topic" if all(p.action for p in path_points) else "topic_only"


# -- subcommands -----------------------------------------------------------------

def cmd_train_encoder(cfg: RunConfig) -> int:
    corpus = _load_required_corpus(cfg.corpus, "training")
    train_cfg = EncoderTrainConfig(
        m=cfg.m, d=cfg.d, epochs=cfg.epochs, batch_size=cfg.batch_size,
        lr=cfg.lr_encoder, seed=cfg.seed, snapshots=cfg.snapshots, bridge=cfg.bridge(),
    )
    params, losses = train_encoder(corpus, train_cfg, _featurizer(cfg))
    out = _out_dir(cfg)
    save_encoder(params, out / cfg.encoder_ckpt, seed=cfg.seed, extra={"config": asdict(cfg)})
    _dump_json({"losses": losses, "config": asdict(cfg)}, out / "encoder_losses.json")
    report.write_csv(
        out / "encoder_losses.csv",
        ["epoch", "loss"],
        [[i + 1, loss] for i, loss in enumerate(losses)],
    )
    if losses:
        report.save_loss_curve(losses, out / "encoder_losses.png", "contrastive training loss")
    _print_json({"checkpoint": str(out / cfg.encoder_ckpt), "epochs": len(losses)})
    return 0


def cmd_train_planner(cfg: RunConfig) -> int:
    corpus = _load_required_corpus(cfg.corpus, "training")
    encoder = load_encoder(Path(cfg.out_dir) / cfg.encoder_ckpt)
    train_cfg = PlannerTrainConfig(
        t_max=cfg.t_max, epochs=cfg.epochs, batch_size=cfg.planner_batch_size,
        lr=cfg.lr_planner, seed=cfg.seed, snapshots=cfg.snapshots,
    )
    params, losses = train_planner(corpus, encoder, train_cfg, _featurizer(cfg))
    out = _out_dir(cfg)
    save_planner(params, out / cfg.planner_ckpt, seed=cfg.seed, extra={"config": asdict(cfg)})
    _dump_json({"losses": losses, "config": asdict(cfg)}, out / "planner_losses.json")
    report.write_csv(
        out / "planner_losses.csv",
        ["epoch", "loss"],
        [[i + 1, loss] for i, loss in enumerate(losses)],
    )
    if losses:
        report.save_loss_curve(losses, out / "planner_losses.png", "horizon predictor loss")
    _print_json({"checkpoint": str(out / cfg.planner_ckpt), "epochs": len(losses)})
    return 0


def cmd_plan(cfg: RunConfig, instance_path: str, num_samples: int) -> int:
    encoder = load_encoder(Path(cfg.out_dir) / cfg.encoder_ckpt)
    planner = load_planner(Path(cfg.out_dir) / cfg.planner_ckpt)
    with open(instance_path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(
                f"{instance_path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})"
            ) from exc
    inp = plan_input_from_dict(obj)
    feat = _featurizer(cfg)
    style = _style_for(cfg, inp.candidates)
    outputs = []
    for i in range(num_samples):
        rng = np.random.default_rng(cfg.seed + i)
        path = plan(inp, encoder, planner, cfg.bridge(), rng, feat)
        prompt = format_prompt(inp.knowledge_text, inp.context_text, path, style)
        serialized = prompt.rsplit("\n", 1)[-1]
        outputs.append({"path": serialized, "prompt": prompt, "sample": i})
        print(serialized)
        print(prompt)
    out = _out_dir(cfg)
    _dump_json({"plans": outputs, "config": asdict(cfg)}, out / "plan.json")
    return 0


def _evaluate_split(cfg: RunConfig, corpus: Corpus, encoder, planner, feat) -> dict:
    vocab = corpus.sorted_vocab()
    preds: list[TurnPrediction] = []
    dialogue_rows: list[tuple[list[str], str, int]] = []
    for d_idx, d in enumerate(corpus.dialogues):
        indices = [i for i in system_turn_indices(d) if remaining_path(d, i)]
        if not indices:
            continue
        for turn_idx in indices:
            remaining = remaining_path(d, turn_idx)
            inp = plan_input_from_dialogue(d, vocab, turn_idx)
            rng = np.random.default_rng((cfg.seed, d_idx, turn_idx))
            path = plan(inp, encoder, planner, cfg.bridge(), rng, feat)
            realized = len(d.path) - len(remaining)
            window = {remaining[0]}
            if realized >= 1:
                window.add(d.path[realized - 1])
            if len(remaining) >= 2:
                window.add(remaining[1])
            preds.append(
                TurnPrediction(predicted=path[0], gold=remaining[0], gold_window=window)
            )
            if turn_idx == indices[0]:
                dialogue_rows.append(
                    ([p.topic for p in path], d.target.topic, len(remaining))
                )
    if not preds:
        raise ValueError("no test instances")
    return metrics_report(
        f1=micro_f1(preds, "topic"),
        bi_f1=bigram_f1(preds, "topic"),
        goal=goal_success(dialogue_rows, window=cfg.window),
        n=len(dialogue_rows),
    )


def cmd_evaluate(cfg: RunConfig) -> int:
    encoder = load_encoder(Path(cfg.out_dir) / cfg.encoder_ckpt)
    planner = load_planner(Path(cfg.out_dir) / cfg.planner_ckpt)
    feat = _featurizer(cfg)
    splits: dict[str, Corpus] = {}
    if cfg.test_id:
        splits["id"] = _load_required_corpus(cfg.test_id, "in-domain test")
    if cfg.test_ood:
        splits["ood"] = _load_required_corpus(cfg.test_ood, "out-of-domain test")
    if not splits:
        raise FileNotFoundError("config names no test corpus (test_id or test_ood)")
    reports = {
        name: _evaluate_split(cfg, corpus, encoder, planner, feat)
        for name, corpus in splits.items()
    }
    _print_json(reports)
    out = _out_dir(cfg)
    _dump_json({"reports": reports, "config": asdict(cfg)}, out / "evaluation.json")
    report.write_csv(
        out / "evaluation.csv",
        ["split", "metric", "value"],
        [[s, k, v] for s, r in sorted(reports.items()) for k, v in sorted(r.items())],
    )
    report.save_metrics_chart(reports, out / "evaluation.png")
    return 0


def _run_episode(cfg: RunConfig, graph: TopicGraph, policy, episode: int) -> tuple[bool, int]:
    rng = np.random.default_rng(cfg.seed + episode)
    return self_play(policy, graph, cfg.follow_prob, cfg.max_turns, rng)


def _make_policy(cfg: RunConfig, graph: TopicGraph):
    if cfg.policy == "random_walk":
        return lambda: RandomWalkPolicy(graph)
    if cfg.policy == "oracle":
        return lambda: OraclePolicy(graph)
    if cfg.policy != "trained":
        raise ValueError(f"policy must be trained, oracle, or random_walk, got {cfg.policy!r}")
    encoder = load_encoder(Path(cfg.out_dir) / cfg.encoder_ckpt)
    planner = load_planner(Path(cfg.out_dir) / cfg.planner_ckpt)
    feat = _featurizer(cfg)
    return lambda: TrainedPolicy(encoder, planner, cfg.bridge(), graph, feat)


def cmd_simulate(cfg: RunConfig, graph_path: str, jobs: int) -> int:
    graph = TopicGraph.from_json(graph_path)
    make_policy = _make_policy(cfg, graph)

    def episode(i: int) -> tuple[bool, int]:
        # fresh policy per episode: histories must not leak across episodes
        return _run_episode(cfg, graph, make_policy(), i)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(episode, range(cfg.episodes)))
    else:
        results = [episode(i) for i in range(cfg.episodes)]
    successes = [ok for ok, _ in results]
    turns = [t for _, t in results]
    rate = sum(successes) / len(results)
    mean_turns = float(np.mean([t for ok, t in results if ok])) if any(successes) else float(
        cfg.max_turns
    )
    summary = {
        "success_rate": rate,
        "mean_turns": mean_turns,
        "n": cfg.episodes,
        "policy": cfg.policy,
        "follow_prob": cfg.follow_prob,
    }
    _print_json(summary)
    out = _out_dir(cfg)
    _dump_json({"report": summary, "config": asdict(cfg)}, out / "simulate.json")
    report.write_csv(
        out / "simulate.csv",
        ["episode", "success", "turns"],
        [[i, int(ok), t] for i, (ok, t) in enumerate(results)],
    )
    report.save_selfplay_chart(turns, successes, out / "simulate.png")
    return 0


# -- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridgeplan",
        description="Goal-directed dialogue path planning over a bridge latent space",
    )
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel episodes in simulate")
    parser.add_argument("--embeddings", default=None, help="JSONL text-to-vector override table")
    parser.add_argument("--out-dir", default=None, help="override config out_dir")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-encoder", help="contrastive training of the latent encoder")
    sub.add_parser("train-planner", help="train the transition-count predictor")
    p_plan = sub.add_parser("plan", help="plan a path for one JSON instance")
    p_plan.add_argument("instance", help="JSON file holding one plan input")
    p_plan.add_argument("--num-samples", type=int, default=1,
                        help="latent trajectories to draw (each printed)")
    sub.add_parser("evaluate", help="run planning metrics over the test split(s)")
    p_sim = sub.add_parser("simulate", help="seeded self-play episodes on a topic graph")
    p_sim.add_argument("graph", help="graph JSON: nodes, edges, start, target")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "embeddings": args.embeddings,
        "out_dir": args.out_dir,
    }
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "train-encoder":
            return cmd_train_encoder(cfg)
        if args.command == "train-planner":
            return cmd_train_planner(cfg)
        if args.command == "plan":
            return cmd_plan(cfg, args.instance, args.num_samples)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.graph, args.jobs)
        raise ValueError(f"unknown command {args.command!r}")
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
