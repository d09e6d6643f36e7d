"""Path planning: horizon prediction, latent trajectory decoding, prompts.

Planning an explicit path from a context to a designated target runs in
three steps.  A small classifier predicts the number of transitions left
(0 .. t_max) from the pooled features of knowledge + context + target; zero
means the target is due now and is copied out directly.  Otherwise a latent
trajectory of that length is sampled from the feedback-perturbed bridge and
each interior trajectory point is decoded by retrieval: the candidate path
point whose latent sits nearest in Euclidean distance, with ties broken by
serialized form and immediate repeats replaced by the next-nearest distinct
candidate.  The final position is always the target.

The decoded path can be rendered as a plain-text prompt, either with action
tags ("[A]act[T]topic...") or topics only ("[T]topic...").
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bridge import BridgeConfig, sample_trajectory
from .corpus import (
    Corpus,
    Dialogue,
    PathPoint,
    context_text,
    knowledge_text,
    latest_user_text,
    remaining_path,
    system_turn_indices,
)
from .embedder import Featurizer, default_featurizer
from .encoder import EncoderParams, encode_feedback, encode_point
from .mlp import (
    Adam,
    MlpBlock,
    assign_flat,
    block_from_state,
    block_state,
    blocks_to_vector,
    make_block,
)

DEFAULT_T_MAX = 8
PROMPT_STYLES = ("action_topic", "topic_only")


@dataclass
class PlannerParams:
    """Transition-count classifier: features -> t_max + 1 logits."""

    f_t: MlpBlock
    t_max: int
    m: int

    def to_vector(self) -> np.ndarray:
        return blocks_to_vector([self.f_t])

    def set_vector(self, vec: np.ndarray) -> None:
        assign_flat([self.f_t], vec)


@dataclass
class PlanInput:
    """Everything one planning call needs."""

    context_text: str
    knowledge_text: str
    target: PathPoint
    user_text: str = ""
    candidates: list[PathPoint] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("candidate set must be non-empty")
        if self.target not in self.candidates:
            raise ValueError("candidate set must contain the target")


def init_planner(m: int, t_max: int, seed: int, hidden: int = 64) -> PlannerParams:
    rng = np.random.default_rng(seed)
    return PlannerParams(f_t=make_block([m, hidden, hidden, t_max + 1], rng), t_max=t_max, m=m)


def feature_text(knowledge: str, context: str, target: PathPoint) -> str:
    return f"{knowledge} {context} {target.serialize()}".strip()


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def predict_T(
    inp: PlanInput, params: PlannerParams, featurizer: Featurizer | None = None
) -> np.ndarray:
    """Probability vector over 0..t_max transitions."""
    feat = featurizer or default_featurizer(params.m)
    x = feat(feature_text(inp.knowledge_text, inp.context_text, inp.target))
    logits = params.f_t(x[None, :])[0]
    return _softmax(logits)


# -- training ----------------------------------------------------------------

@dataclass
class PlannerTrainConfig:
    t_max: int = DEFAULT_T_MAX
    hidden: int = 64
    epochs: int = 10
    batch_size: int = 16
    lr: float = 2e-5
    seed: int = 0
    snapshots: str = "all"


def planner_pairs(
    corpus: Corpus, t_max: int, snapshots: str = "all"
) -> list[tuple[str, int]]:
    """(feature text, true transition count) per snapshot; counts above t_max clamp."""
    if snapshots not in ("all", "first"):
        raise ValueError(f"snapshots must be 'all' or 'first', got {snapshots!r}")
    pairs: list[tuple[str, int]] = []
    clamped = 0
    for d in corpus.dialogues:
        indices = system_turn_indices(d)
        if snapshots == "first":
            indices = indices[:1]
        for idx in indices:
            label = len(remaining_path(d, idx))
            if label > t_max:
                clamped += 1
                label = t_max
            pairs.append((feature_text(knowledge_text(d), context_text(d, idx), d.target), label))
    if clamped:
        warnings.warn(f"{clamped} training pairs exceeded t_max={t_max} and were clamped")
    return pairs


def train_planner(
    corpus: Corpus,
    encoder: EncoderParams,
    cfg: PlannerTrainConfig,
    featurizer: Featurizer | None = None,
) -> tuple[PlannerParams, list[float]]:
    """Cross-entropy training of the transition-count classifier with Adam."""
    pairs = planner_pairs(corpus, cfg.t_max, cfg.snapshots)
    if not pairs:
        raise ValueError("no planner training pairs in corpus")
    feat = featurizer or default_featurizer(encoder.m)
    x_all = np.stack([feat(text) for text, _ in pairs])
    y_all = np.asarray([label for _, label in pairs], dtype=np.int64)

    rng = np.random.default_rng(cfg.seed)
    params = init_planner(encoder.m, cfg.t_max, seed=cfg.seed, hidden=cfg.hidden)
    theta = params.to_vector()
    opt = Adam(theta.size, lr=cfg.lr)
    losses: list[float] = []
    n = len(pairs)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, y = x_all[idx], y_all[idx]
            logits, cache = params.f_t.forward(x)
            probs = _softmax(logits)
            nll = -np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))
            loss = float(nll.mean())
            d_logits = probs
            d_logits[np.arange(len(y)), y] -= 1.0
            d_logits /= len(y)
            _, grads = params.f_t.backward(cache, d_logits)
            theta = opt.step(theta, np.concatenate([g.ravel() for g in grads]))
            params.set_vector(theta)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
    return params, losses


# -- decoding ----------------------------------------------------------------

def decode_path(
    trajectory: list[np.ndarray],
    inp: PlanInput,
    encoder: EncoderParams,
    featurizer: Featurizer | None = None,
) -> list[PathPoint]:
    """Retrieve the nearest candidate per interior trajectory point.

    Selection at each position skips the immediately preceding point (the
    next-nearest distinct candidate is used instead); the last position is
    the target, and a duplicate created by that final overwrite collapses.
    """
    if not inp.candidates:
        raise ValueError("candidate set must be non-empty")
    feat = featurizer or default_featurizer(encoder.m)
    horizon = len(trajectory)
    if horizon < 1:
        raise ValueError("trajectory must contain at least one point")
    ordered = sorted(set(inp.candidates), key=lambda p: p.serialize())
    emb = np.stack([encode_point(p.serialize(), encoder, feat) for p in ordered])

    path: list[PathPoint] = []
    for t in range(1, horizon):
        z = np.asarray(trajectory[t - 1], dtype=np.float64)
        dist = np.einsum("ij,ij->i", emb - z, emb - z)
        # argsort on (distance, serialized form) implements the tie-break
        for idx in np.argsort(dist, kind="stable"):
            point = ordered[idx]
            if not path or point != path[-1]:
                path.append(point)
                break
    path.append(inp.target)
    if len(path) >= 2 and path[-2] == inp.target:
        path.pop()  # forced final position duplicated the decoded one
    return path


def plan(
    inp: PlanInput,
    encoder: EncoderParams,
    planner: PlannerParams,
    cfg: BridgeConfig,
    rng: np.random.Generator,
    featurizer: Featurizer | None = None,
) -> list[PathPoint]:
    """Full planning step: predict the horizon, sample, decode.

    A predicted horizon of zero short-circuits to copying the target with no
    sampling at all.
    """
    probs = predict_T(inp, planner, featurizer)
    horizon = int(np.argmax(probs))
    if horizon == 0:
        return [inp.target]
    feat = featurizer or default_featurizer(encoder.m)
    z0 = encode_point(f"{inp.knowledge_text} {inp.context_text}".strip(), encoder, feat)
    zT = encode_point(inp.target.serialize(), encoder, feat)
    zu, delta = encode_feedback(inp.user_text, encoder, feat)
    trajectory = sample_trajectory(z0, zT, zu, delta, horizon, cfg, rng)
    return decode_path(trajectory, inp, encoder, feat)


def format_prompt(
    knowledge_text: str, context_text: str, path: list[PathPoint], style: str
) -> str:
    """Render knowledge, context, and the serialized path as one prompt."""
    if style not in PROMPT_STYLES:
        raise ValueError(f"style must be one of {PROMPT_STYLES}, got {style!r}")
    if not path:
        raise ValueError("path must be non-empty")
    parts = []
    for point in path:
        if style == "action_topic":
            if not point.action:
                raise ValueError(f"point {point.topic!r} has no action for action_topic style")
            parts.append(f"[A]{point.action}[T]{point.topic}")
        else:
            parts.append(f"[T]{point.topic}")
    return f"{knowledge_text}\n{context_text}\n{''.join(parts)}"


# -- plan-input assembly -------------------------------------------------------

def grounded_candidates(
    vocab: list[PathPoint], knowledge: list[tuple[str, str, str]], target: PathPoint
) -> list[PathPoint]:
    """Vocabulary restricted to topics named in the knowledge triples.

    Topics are grounded in the subjects and objects of the triples; when no
    vocabulary point is grounded, the full vocabulary is used.  The target
    is always included.
    """
    terms = {s for s, _, _ in knowledge} | {o for _, _, o in knowledge}
    grounded = [p for p in vocab if p.topic in terms]
    pool = grounded if grounded else list(vocab)
    if target not in pool:
        pool.append(target)
    return sorted(set(pool), key=lambda p: p.serialize())


def plan_input_from_dialogue(
    d: Dialogue, vocab: list[PathPoint], snapshot_turn: int
) -> PlanInput:
    return PlanInput(
        context_text=context_text(d, snapshot_turn),
        knowledge_text=knowledge_text(d),
        target=d.target,
        user_text=latest_user_text(d, snapshot_turn),
        candidates=grounded_candidates(vocab, d.knowledge, d.target),
    )


def plan_input_from_dict(obj: dict) -> PlanInput:
    return PlanInput(
        context_text=obj.get("context_text", ""),
        knowledge_text=obj.get("knowledge_text", ""),
        target=PathPoint.from_dict(obj["target"]),
        user_text=obj.get("user_text", ""),
        candidates=[PathPoint.from_dict(c) for c in obj.get("candidates", [])],
    )


# -- checkpoints ---------------------------------------------------------------

def save_planner(
    params: PlannerParams, path: str | Path, seed: int, extra: dict | None = None
) -> None:
    state = {
        "kind": "planner",
        "m": params.m,
        "t_max": params.t_max,
        "seed": seed,
        "blocks": {"f_t": block_state(params.f_t)},
    }
    if extra:
        state.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state, fh, sort_keys=True)
        fh.write("\n")


def load_planner(path: str | Path) -> PlannerParams:
    with open(path, encoding="utf-8") as fh:
        state = json.load(fh)
    if state.get("kind") != "planner":
        raise ValueError(f"{path}: not a planner checkpoint")
    return PlannerParams(
        f_t=block_from_state(state["blocks"]["f_t"]), t_max=state["t_max"], m=state["m"]
    )
