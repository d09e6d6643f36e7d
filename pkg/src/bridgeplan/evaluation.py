"""Planning metrics and a graph-based self-play simulator.

Turn-level metrics compare one predicted path point per turn against the
gold point (micro F1) or against the gold expanded with the neighboring
turns' points (bigram F1, always >= micro F1).  Dialogue-level goal success
asks whether the target topic shows up within a window of turns around the
designated target turn.

Self-play replaces the pair of fine-tuned generators with a topic graph and
a stochastic user: each system turn the policy proposes a path, the system
moves to its first point when that point is adjacent to the current topic,
and the user then keeps the topic with probability ``follow_prob`` or hops
to a random neighbor.  Success means landing on the target within the turn
budget.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bridge import BridgeConfig
from .corpus import PathPoint
from .embedder import Featurizer
from .encoder import EncoderParams
from .planner import PlanInput, PlannerParams, plan

FOLLOW_UTTERANCE = "sure tell me more"
SWERVE_UTTERANCE = "let's talk about {topic}"


@dataclass
class TurnPrediction:
    predicted: PathPoint
    gold: PathPoint
    gold_window: set[PathPoint]

    def __post_init__(self) -> None:
        if self.gold not in self.gold_window:
            raise ValueError("gold point must belong to its own window")


def _field_value(point: PathPoint, fieldname: str):
    if fieldname == "action":
        return point.action
    if fieldname == "topic":
        return point.topic
    raise ValueError(f"field must be 'action' or 'topic', got {fieldname!r}")


def micro_f1(preds: list[TurnPrediction], fieldname: str) -> float:
    """Micro-averaged F1 with one prediction per gold: the exact-match rate."""
    if not preds:
        raise ValueError("no predictions to score")
    hits = sum(
        1 for p in preds if _field_value(p.predicted, fieldname) == _field_value(p.gold, fieldname)
    )
    return hits / len(preds)


def bigram_f1(preds: list[TurnPrediction], fieldname: str) -> float:
    """Micro F1 where a prediction matching any window member counts."""
    if not preds:
        raise ValueError("no predictions to score")
    hits = 0
    for p in preds:
        window = {_field_value(g, fieldname) for g in p.gold_window}
        if _field_value(p.predicted, fieldname) in window:
            hits += 1
    return hits / len(preds)


def goal_success(
    per_dialogue: list[tuple[list[str], str, int]], window: int = 2
) -> float:
    """Fraction of dialogues whose target topic lands near the target turn.

    Each entry is (topics by turn, target topic, target turn), turns counted
    from 1.  A dialogue succeeds when the target topic appears at any turn
    in [target_turn - window, target_turn + window], clipped to range.
    """
    if not per_dialogue:
        raise ValueError("no dialogues to score")
    successes = 0
    for topics, target_topic, target_turn in per_dialogue:
        if not 1 <= target_turn:
            raise ValueError(f"target turn must be >= 1, got {target_turn}")
        lo = max(1, target_turn - window)
        hi = min(len(topics), target_turn + window)
        if any(topics[turn - 1] == target_topic for turn in range(lo, hi + 1)):
            successes += 1
    return successes / len(per_dialogue)


# -- topic graph ---------------------------------------------------------------

@dataclass
class TopicGraph:
    nodes: list[str]
    adjacency: dict[str, list[str]]
    start: str
    target: str

    def __post_init__(self) -> None:
        members = set(self.nodes)
        if self.start not in members:
            raise ValueError(f"start topic {self.start!r} not in graph")
        if self.target not in members:
            raise ValueError(f"target topic {self.target!r} not in graph")

    def neighbors(self, node: str) -> list[str]:
        return self.adjacency.get(node, [])

    @classmethod
    def from_edges(
        cls, nodes: list[str], edges: list[tuple[str, str]], start: str, target: str
    ) -> TopicGraph:
        adjacency: dict[str, set[str]] = {n: set() for n in nodes}
        for a, b in edges:
            if a not in adjacency or b not in adjacency:
                raise ValueError(f"edge ({a!r}, {b!r}) references an unknown node")
            if a != b:
                adjacency[a].add(b)
                adjacency[b].add(a)
        return cls(
            nodes=sorted(nodes),
            adjacency={n: sorted(adjacency[n]) for n in sorted(nodes)},
            start=start,
            target=target,
        )

    @classmethod
    def from_json(cls, path: str | Path) -> TopicGraph:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        for key in ("nodes", "edges", "start", "target"):
            if key not in obj:
                raise ValueError(f"{path}: graph JSON missing key {key!r}")
        edges = [(a, b) for a, b in obj["edges"]]
        return cls.from_edges(obj["nodes"], edges, obj["start"], obj["target"])


def bfs_path(graph: TopicGraph, source: str, goal: str) -> list[str] | None:
    """Shortest node sequence from source to goal, or None when unreachable."""
    if source == goal:
        return [source]
    seen = {source}
    queue: deque[str] = deque([source])
    parent: dict[str, str] = {}
    while queue:
        node = queue.popleft()
        for nbr in graph.neighbors(node):
            if nbr in seen:
                continue
            parent[nbr] = node
            if nbr == goal:
                path = [goal]
                while path[-1] != source:
                    path.append(parent[path[-1]])
                return path[::-1]
            seen.add(nbr)
            queue.append(nbr)
    return None


# -- self-play policies ---------------------------------------------------------

class OraclePolicy:
    """Proposes the shortest graph path to the target (for sanity baselines)."""

    def __init__(self, graph: TopicGraph):
        self.graph = graph

    def propose(self, current: str, user_text: str, rng: np.random.Generator) -> list[PathPoint]:
        route = bfs_path(self.graph, current, self.graph.target)
        if route is None or len(route) < 2:
            return [PathPoint(topic=self.graph.target)]
        return [PathPoint(topic=n) for n in route[1:]]


class RandomWalkPolicy:
    """Moves to a uniformly random neighbor; the no-planning baseline."""

    def __init__(self, graph: TopicGraph):
        self.graph = graph

    def propose(self, current: str, user_text: str, rng: np.random.Generator) -> list[PathPoint]:
        nbrs = self.graph.neighbors(current)
        if not nbrs:
            return [PathPoint(topic=self.graph.target)]
        step = nbrs[int(rng.integers(len(nbrs)))]
        return [PathPoint(topic=step), PathPoint(topic=self.graph.target)]


@dataclass
class TrainedPolicy:
    """Plans with the trained encoder + horizon predictor over the local graph view.

    Each proposal treats the current topic as a fresh dialogue start:
    knowledge is the fan of edges at the current topic and the candidates
    are its neighbors plus the target, so every proposed first step is a
    legal move (or the target itself).
    """

    encoder: EncoderParams
    planner: PlannerParams
    bridge_cfg: BridgeConfig
    graph: TopicGraph
    featurizer: Featurizer | None = None

    def propose(self, current: str, user_text: str, rng: np.random.Generator) -> list[PathPoint]:
        nbrs = self.graph.neighbors(current)
        knowledge = " ".join(f"{current} related_to {n}" for n in nbrs)
        target = PathPoint(topic=self.graph.target)
        candidates = sorted(
            {PathPoint(topic=n) for n in nbrs} | {target},
            key=lambda p: p.serialize(),
        )
        inp = PlanInput(
            context_text=f"let's talk about {current}",
            knowledge_text=knowledge,
            target=target,
            user_text=user_text or FOLLOW_UTTERANCE,
            candidates=candidates,
        )
        return plan(inp, self.encoder, self.planner, self.bridge_cfg, rng, self.featurizer)


def self_play(
    policy,
    graph: TopicGraph,
    follow_prob: float,
    max_turns: int = 8,
    rng: np.random.Generator | None = None,
) -> tuple[bool, int]:
    """Run one episode; returns (reached target, system turns used)."""
    if not 0.0 <= follow_prob <= 1.0:
        raise ValueError(f"follow_prob must lie in [0, 1], got {follow_prob}")
    if graph.start not in set(graph.nodes):
        raise ValueError(f"start topic {graph.start!r} not in graph")
    rng = rng if rng is not None else np.random.default_rng(0)
    if hasattr(policy, "reset"):
        policy.reset(graph.start)
    current = graph.start
    if current == graph.target:
        return True, 0
    user_text = ""
    for turn in range(1, max_turns + 1):
        path = policy.propose(current, user_text, rng)
        step = path[0].topic
        if step in graph.neighbors(current):
            current = step
        if current == graph.target:
            return True, turn
        if rng.random() < follow_prob:
            user_text = FOLLOW_UTTERANCE
        else:
            nbrs = graph.neighbors(current)
            if nbrs:
                current = nbrs[int(rng.integers(len(nbrs)))]
                user_text = SWERVE_UTTERANCE.format(topic=current)
                if current == graph.target:
                    return True, turn
    return False, max_turns


def metrics_report(
    f1: float,
    bi_f1: float,
    goal: float,
    n: int,
    self_play_success: float | None = None,
) -> dict:
    """Assemble the standard metrics object (self-play rate only when measured)."""
    report: dict = {"f1": f1, "bi_f1": bi_f1, "goal_success": goal, "n": n}
    if self_play_success is not None:
        report["self_play_success"] = self_play_success
    return report
