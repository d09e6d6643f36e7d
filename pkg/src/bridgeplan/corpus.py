"""Dialogue corpus: on-disk format, contrastive tuples, batches, and splits.

Corpora are UTF-8 JSON Lines, one dialogue per line:

    {"id": str,
     "target": {"action": str|null, "topic": str},
     "knowledge": [[str, str, str], ...],
     "user_profile": [[str, str], ...] | null,
     "turns": [{"role": "user"|"system", "utterance": str}, ...],
     "path": [{"action": str|null, "topic": str}, ...]}

The annotated path is the system's plan for the whole dialogue; its last
element is the target.  Each system turn realizes one path point in order,
so the "remaining path" at a snapshot is the suffix of points not yet
realized by earlier system turns.

All functions here are pure over immutable corpora; the only mutable input
is the caller-owned seeded generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True, order=True)
class PathPoint:
    """One planning unit: a topic, optionally tagged with a dialogue action."""

    topic: str
    action: str | None = None

    def serialize(self) -> str:
        if self.action:
            return f"{self.action} {self.topic}"
        return self.topic

    def to_dict(self) -> dict:
        return {"action": self.action, "topic": self.topic}

    @classmethod
    def from_dict(cls, d: dict) -> PathPoint:
        action = d.get("action")
        return cls(topic=d["topic"], action=action if action else None)


@dataclass
class Dialogue:
    id: str
    target: PathPoint
    knowledge: list[tuple[str, str, str]]
    turns: list[tuple[str, str]]  # (role, utterance)
    path: list[PathPoint]
    user_profile: list[tuple[str, str]] | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "target": self.target.to_dict(),
            "knowledge": [list(k) for k in self.knowledge],
            "user_profile": [list(p) for p in self.user_profile] if self.user_profile else None,
            "turns": [{"role": r, "utterance": u} for r, u in self.turns],
            "path": [p.to_dict() for p in self.path],
        }


@dataclass
class TupleSample:
    """One contrastive observation: feedback, start, interior point, target.

    ``dialogue_id`` records provenance so in-batch negatives can be drawn
    from other dialogues only.
    """

    u_text: str
    s0_text: str
    st_text: str
    sT_text: str
    t: int
    T: int
    dialogue_id: str = ""

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not 0 < self.t < self.T:
            raise ValueError(f"t={self.t} must be interior to (0, {self.T})")


@dataclass
class Corpus:
    dialogues: list[Dialogue]
    vocab: set[PathPoint] = field(default_factory=set)

    def __post_init__(self) -> None:
        if not self.vocab:
            for d in self.dialogues:
                self.vocab.update(d.path)

    def __len__(self) -> int:
        return len(self.dialogues)

    def sorted_vocab(self) -> list[PathPoint]:
        return sorted(self.vocab, key=lambda p: p.serialize())


@dataclass
class BatchItem:
    sample: TupleSample
    negatives: list[str]  # serialized path points from other dialogues


@dataclass
class Batch:
    items: list[BatchItem]


class CorpusFormatError(ValueError):
    """Raised for malformed corpus lines, with file/line context."""


# -- parsing -----------------------------------------------------------------

_ROLES = ("user", "system")


def _parse_dialogue(obj: dict, where: str) -> Dialogue:
    for key in ("id", "target", "knowledge", "turns", "path"):
        if key not in obj:
            raise CorpusFormatError(f"{where}: missing required field '{key}'")
    did = obj["id"]
    try:
        target = PathPoint.from_dict(obj["target"])
    except (KeyError, TypeError) as exc:
        raise CorpusFormatError(f"{where}: bad target: {exc}") from exc
    knowledge = []
    for i, triple in enumerate(obj["knowledge"]):
        if len(triple) != 3:
            raise CorpusFormatError(f"{where}: knowledge[{i}] is not a triple")
        knowledge.append(tuple(str(x) for x in triple))
    profile = None
    if obj.get("user_profile") is not None:
        profile = [(str(k), str(v)) for k, v in obj["user_profile"]]
    turns = []
    for i, turn in enumerate(obj["turns"]):
        if "role" not in turn or "utterance" not in turn:
            raise CorpusFormatError(f"{where}: turns[{i}] needs 'role' and 'utterance'")
        if turn["role"] not in _ROLES:
            raise CorpusFormatError(f"{where}: turns[{i}] role {turn['role']!r} invalid")
        turns.append((turn["role"], str(turn["utterance"])))
    if not turns:
        raise CorpusFormatError(f"{where}: dialogue {did!r} has no turns")
    path = []
    for i, point in enumerate(obj["path"]):
        try:
            p = PathPoint.from_dict(point)
        except (KeyError, TypeError) as exc:
            raise CorpusFormatError(f"{where}: path[{i}]: {exc}") from exc
        if not p.topic:
            raise CorpusFormatError(f"{where}: path[{i}] has an empty topic")
        path.append(p)
    if not path:
        raise CorpusFormatError(f"{where}: dialogue {did!r} has an empty path")
    if not target.topic:
        raise CorpusFormatError(f"{where}: dialogue {did!r} has an empty target topic")
    if path[-1] != target:
        raise CorpusFormatError(
            f"{where}: dialogue {did!r} path ends at {path[-1].serialize()!r}, "
            f"not the target {target.serialize()!r}"
        )
    return Dialogue(
        id=str(did),
        target=target,
        knowledge=knowledge,
        turns=turns,
        path=path,
        user_profile=profile,
    )


def load_corpus(file_path: str | Path) -> Corpus:
    """Parse a JSON Lines corpus; malformed lines raise with line numbers."""
    dialogues = []
    with open(file_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{file_path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{where}: invalid JSON ({exc.msg})") from exc
            dialogues.append(_parse_dialogue(obj, where))
    return Corpus(dialogues=dialogues)


def save_corpus(corpus: Corpus, file_path: str | Path) -> None:
    with open(file_path, "w", encoding="utf-8") as fh:
        for d in corpus.dialogues:
            fh.write(json.dumps(d.to_dict(), ensure_ascii=False) + "\n")


# -- text assembly -----------------------------------------------------------

def knowledge_text(d: Dialogue) -> str:
    return " ".join(" ".join(triple) for triple in d.knowledge)


def context_text(d: Dialogue, upto_turn: int) -> str:
    return " ".join(utt for _, utt in d.turns[:upto_turn])


def profile_text(d: Dialogue) -> str:
    if not d.user_profile:
        return ""
    return " ".join(f"{k} {v}" for k, v in d.user_profile)


def latest_user_text(d: Dialogue, upto_turn: int) -> str:
    """Latest user utterance before the snapshot, plus profile when present."""
    utterance = ""
    for role, utt in reversed(d.turns[:upto_turn]):
        if role == "user":
            utterance = utt
            break
    profile = profile_text(d)
    if utterance and profile:
        return f"{utterance} {profile}"
    return utterance or profile


def system_turn_indices(d: Dialogue) -> list[int]:
    return [i for i, (role, _) in enumerate(d.turns) if role == "system"]


def remaining_path(d: Dialogue, snapshot_turn: int) -> list[PathPoint]:
    """Path points not yet realized at the snapshot (one per prior system turn)."""
    if not 0 <= snapshot_turn < len(d.turns):
        raise IndexError(f"snapshot_turn {snapshot_turn} out of range for {d.id!r}")
    if d.turns[snapshot_turn][0] != "system":
        raise ValueError(f"snapshot_turn {snapshot_turn} of {d.id!r} is not a system turn")
    realized = sum(1 for role, _ in d.turns[:snapshot_turn] if role == "system")
    return d.path[realized:]


def build_tuples(d: Dialogue, snapshot_turn: int) -> list[TupleSample]:
    """Contrastive tuples for one snapshot: one per interior remaining point.

    With remaining path (p_1, ..., p_T), p_T the target, one tuple is emitted
    for each t in 1..T-1; T = 1 means no interior points and an empty list.
    """
    remaining = remaining_path(d, snapshot_turn)
    if not remaining:
        raise ValueError(f"dialogue {d.id!r}: remaining path empty at turn {snapshot_turn}")
    horizon = len(remaining)
    u_text = latest_user_text(d, snapshot_turn)
    s0 = f"{knowledge_text(d)} {context_text(d, snapshot_turn)}".strip()
    sT = remaining[-1].serialize()
    return [
        TupleSample(
            u_text=u_text,
            s0_text=s0,
            st_text=remaining[t - 1].serialize(),
            sT_text=sT,
            t=t,
            T=horizon,
            dialogue_id=d.id,
        )
        for t in range(1, horizon)
    ]


def corpus_tuples(corpus: Corpus, snapshots: str = "all") -> list[TupleSample]:
    """All tuples of a corpus; snapshots is 'all' (every system turn) or 'first'."""
    if snapshots not in ("all", "first"):
        raise ValueError(f"snapshots must be 'all' or 'first', got {snapshots!r}")
    out: list[TupleSample] = []
    for d in corpus.dialogues:
        indices = system_turn_indices(d)
        if snapshots == "first":
            indices = indices[:1]
        for idx in indices:
            if remaining_path(d, idx):
                out.extend(build_tuples(d, idx))
    return out


# -- batching ----------------------------------------------------------------

def make_batch(samples: list[TupleSample]) -> Batch:
    """In-batch negatives: other members' st_text where the dialogue differs."""
    items = []
    for i, s in enumerate(samples):
        negs = [
            o.st_text
            for j, o in enumerate(samples)
            if j != i and o.dialogue_id != s.dialogue_id
        ]
        items.append(BatchItem(sample=s, negatives=negs))
    return Batch(items=items)


def sample_batch(
    tuples: list[TupleSample], batch_size: int, rng: np.random.Generator
) -> Batch:
    """Draw positives (without replacement when possible) and attach negatives."""
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    if len({s.dialogue_id for s in tuples}) < 2:
        raise ValueError("contrastive batches need tuples from >= 2 dialogues")
    replace = len(tuples) < batch_size
    idx = rng.choice(len(tuples), size=batch_size, replace=replace)
    return make_batch([tuples[i] for i in idx])


# -- splits -------------------------------------------------------------------

def split_ood(
    corpus: Corpus, test_fraction: float, rng: np.random.Generator
) -> tuple[Corpus, Corpus, Corpus]:
    """Split into train / in-domain test / out-of-domain test.

    Out-of-domain dialogues have target topics that appear in no training
    dialogue; whole target-topic groups are held out to guarantee it.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(corpus.dialogues)
    groups: dict[str, list[Dialogue]] = {}
    for d in corpus.dialogues:
        groups.setdefault(d.target.topic, []).append(d)
    topics = sorted(groups)
    if len(topics) < 2:
        raise ValueError(
            f"cannot build an out-of-domain split: {n} dialogues share "
            f"{len(topics)} target topic(s)"
        )
    n_test = max(2, round(test_fraction * n))
    ood_quota = max(1, n_test // 2)
    id_quota = max(1, n_test - ood_quota)

    order = [topics[i] for i in rng.permutation(len(topics))]
    ood: list[Dialogue] = []
    held = set()
    for topic in order:
        if len(ood) >= ood_quota:
            break
        group = groups[topic]
        # never hold out so much that train + in-domain test become infeasible
        if n - len(ood) - len(group) < id_quota + 1:
            continue
        ood.extend(group)
        held.add(topic)
    if not ood:
        raise ValueError(
            f"cannot build an out-of-domain split: no target-topic group can be "
            f"held out from {n} dialogues over {len(topics)} topics "
            f"(largest group {max(len(g) for g in groups.values())})"
        )
    rest = [d for d in corpus.dialogues if d.target.topic not in held]
    pick = set(rng.choice(len(rest), size=min(id_quota, len(rest) - 1), replace=False).tolist())
    test_id = [d for i, d in enumerate(rest) if i in pick]
    train = [d for i, d in enumerate(rest) if i not in pick]
    return Corpus(dialogues=train), Corpus(dialogues=test_id), Corpus(dialogues=ood)
