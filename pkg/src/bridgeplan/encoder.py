"""Trainable latent mapping: MLP heads, contrastive loss, exact gradients.

Three blocks sit on top of the base featurizer:

    f_p : feature vector -> latent point (shared by start, interior, target)
    f_c : feature vector -> feedback feature (same dimension as input)
    f_e : feedback feature -> engagement pre-activation (scalar)

A tuple sample yields latents z0, zst, zT, a feedback vector zu = f_p(f_c(u))
and an engagement scalar delta = sigmoid(f_e(f_c(u))).  The perturbed bridge
pinned by (z0 + zu, zT) with variance widened by delta scores the positive
interior point and every negative; the per-item loss is the softmax
cross-entropy of the positive score against positive + negatives (so ties
give log of the term count and the loss is bounded below by zero).

Gradients are exact backpropagation through every path, including the bridge
mean (via z0, zT, zu) and variance (via delta).  Training is plain Adam over
shuffled in-batch-negative batches, bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bridge import BridgeConfig
from .corpus import Batch, Corpus, corpus_tuples, make_batch
from .embedder import Featurizer, default_featurizer
from .mlp import (
    Adam,
    MlpBlock,
    assign_flat,
    block_from_state,
    block_state,
    blocks_to_vector,
    flatten_arrays,
    make_block,
)

HIDDEN_WIDTH = 64


@dataclass
class EncoderParams:
    """The three trainable blocks plus the dimensions they assume."""

    f_p: MlpBlock  # m -> d
    f_c: MlpBlock  # m -> m
    f_e: MlpBlock  # m -> 1
    m: int
    d: int

    def blocks(self) -> list[MlpBlock]:
        return [self.f_p, self.f_c, self.f_e]

    def to_vector(self) -> np.ndarray:
        return blocks_to_vector(self.blocks())

    def set_vector(self, vec: np.ndarray) -> None:
        assign_flat(self.blocks(), vec)

    def copy(self) -> EncoderParams:
        return EncoderParams(self.f_p.copy(), self.f_c.copy(), self.f_e.copy(), self.m, self.d)


@dataclass
class Gradients:
    """Partials with the same block/layer layout as EncoderParams."""

    f_p: list[np.ndarray]
    f_c: list[np.ndarray]
    f_e: list[np.ndarray]

    def to_vector(self) -> np.ndarray:
        return flatten_arrays(self.f_p + self.f_c + self.f_e)


def init_encoder(
    m: int, d: int, seed: int, hidden: int = HIDDEN_WIDTH
) -> EncoderParams:
    rng = np.random.default_rng(seed)
    return EncoderParams(
        f_p=make_block([m, hidden, hidden, d], rng),
        f_c=make_block([m, hidden, hidden, m], rng),
        f_e=make_block([m, hidden, hidden, 1], rng),
        m=m,
        d=d,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def encode_point(
    text: str, params: EncoderParams, featurizer: Featurizer | None = None
) -> np.ndarray:
    """Latent for a serialized path point, start context, or target."""
    feat = featurizer or default_featurizer(params.m)
    return params.f_p(feat(text)[None, :])[0]


def encode_feedback(
    text: str, params: EncoderParams, featurizer: Featurizer | None = None
) -> tuple[np.ndarray, float]:
    """Feedback vector and engagement scalar from the latest user utterance."""
    feat = featurizer or default_featurizer(params.m)
    c = params.f_c(feat(text)[None, :])
    zu = params.f_p(c)[0]
    delta = float(_sigmoid(params.f_e(c))[0, 0])
    return zu, delta


# -- batch features ----------------------------------------------------------

@dataclass
class BatchFeatures:
    """Featurized batch: parameters-independent, reusable across loss calls."""

    f_u: np.ndarray  # (B, m)
    f_s0: np.ndarray  # (B, m)
    f_st: np.ndarray  # (B, m)
    f_sT: np.ndarray  # (B, m)
    f_neg: np.ndarray  # (K, m) flattened over items
    neg_owner: np.ndarray  # (K,) item index per negative row
    t: np.ndarray  # (B,)
    T: np.ndarray  # (B,)


def batch_features(batch: Batch, m: int, featurizer: Featurizer | None = None) -> BatchFeatures:
    feat = featurizer or default_featurizer(m)
    if not batch.items:
        raise ValueError("empty batch")
    for i, item in enumerate(batch.items):
        if not item.negatives:
            raise ValueError(f"batch item {i} has no negatives")
    rows_u, rows_s0, rows_st, rows_sT, rows_neg, owners = [], [], [], [], [], []
    for i, item in enumerate(batch.items):
        s = item.sample
        rows_u.append(feat(s.u_text))
        rows_s0.append(feat(s.s0_text))
        rows_st.append(feat(s.st_text))
        rows_sT.append(feat(s.sT_text))
        for neg in item.negatives:
            rows_neg.append(feat(neg))
            owners.append(i)
    return BatchFeatures(
        f_u=np.stack(rows_u),
        f_s0=np.stack(rows_s0),
        f_st=np.stack(rows_st),
        f_sT=np.stack(rows_sT),
        f_neg=np.stack(rows_neg),
        neg_owner=np.asarray(owners, dtype=np.int64),
        t=np.asarray([it.sample.t for it in batch.items], dtype=np.float64),
        T=np.asarray([it.sample.T for it in batch.items], dtype=np.float64),
    )


def _decay_terms(
    delta: np.ndarray, t: np.ndarray, T: np.ndarray, cfg: BridgeConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized decay phi(delta, t) and d phi / d delta."""
    if cfg.decay_kind == "linear":
        slope = 1.0 - t / T
    else:
        slope = np.exp(-t / (cfg.lam * T))
    return delta * slope, slope


def loss_from_features(
    bf: BatchFeatures,
    params: EncoderParams,
    cfg: BridgeConfig,
    want_grads: bool = False,
) -> tuple[float, Gradients | None]:
    """Contrastive loss (and exact gradients) from precomputed features."""
    B = bf.f_u.shape[0]

    c, cache_c = params.f_c.forward(bf.f_u)
    e, cache_e = params.f_e.forward(c)
    delta = _sigmoid(e[:, 0])

    # f_p applies to: start rows, positive rows, target rows, feedback rows,
    # then all negative rows, stacked in that order.
    x_p = np.vstack([bf.f_s0, bf.f_st, bf.f_sT, c, bf.f_neg])
    z, cache_p = params.f_p.forward(x_p)
    z0 = z[0:B]
    zst = z[B : 2 * B]
    zT = z[2 * B : 3 * B]
    zu = z[3 * B : 4 * B]
    zneg = z[4 * B :]

    a = 1.0 - bf.t / bf.T
    b = bf.t / bf.T
    mu = a[:, None] * (z0 + zu) + b[:, None] * zT
    base_var = bf.t * (bf.T - bf.t) / bf.T
    phi, dphi_ddelta = _decay_terms(delta, bf.t, bf.T, cfg)
    var = base_var + phi
    if np.any(var <= 0.0):
        raise ValueError("bridge variance vanished at an interior time index")

    diff_pos = zst - mu
    q_pos = np.einsum("ij,ij->i", diff_pos, diff_pos)
    s_pos = -q_pos / (2.0 * var)

    diff_neg = zneg - mu[bf.neg_owner]
    q_neg = np.einsum("ij,ij->i", diff_neg, diff_neg)
    s_neg = -q_neg / (2.0 * var[bf.neg_owner])

    # stable per-item log-sum-exp over the positive and its negatives
    m_shift = s_pos.copy()
    np.maximum.at(m_shift, bf.neg_owner, s_neg)
    exp_pos = np.exp(s_pos - m_shift)
    exp_neg = np.exp(s_neg - m_shift[bf.neg_owner])
    denom = exp_pos.copy()
    np.add.at(denom, bf.neg_owner, exp_neg)
    lse = m_shift + np.log(denom)
    loss = float(np.mean(-s_pos + lse))

    if not want_grads:
        return loss, None

    # d loss / d score: softmax probability minus the positive indicator
    g_pos = (exp_pos / denom - 1.0) / B
    g_neg = (exp_neg / denom[bf.neg_owner]) / B

    inv_var = 1.0 / var
    dz_pos = g_pos[:, None] * (-diff_pos) * inv_var[:, None]
    dz_neg = g_neg[:, None] * (-diff_neg) * inv_var[bf.neg_owner][:, None]

    dmu = g_pos[:, None] * diff_pos * inv_var[:, None]
    np.add.at(dmu, bf.neg_owner, g_neg[:, None] * diff_neg * inv_var[bf.neg_owner][:, None])

    dvar = g_pos * q_pos / (2.0 * var**2)
    np.add.at(dvar, bf.neg_owner, g_neg * q_neg / (2.0 * var[bf.neg_owner] ** 2))

    dz0 = a[:, None] * dmu
    dzu = a[:, None] * dmu
    dzT = b[:, None] * dmu
    ddelta = dvar * dphi_ddelta
    de = (ddelta * delta * (1.0 - delta))[:, None]

    d_out_p = np.vstack([dz0, dz_pos, dzT, dzu, dz_neg])
    dx_p, grads_p = params.f_p.backward(cache_p, d_out_p)
    dc = dx_p[3 * B : 4 * B].copy()
    dc_e, grads_e = params.f_e.backward(cache_e, de)
    dc += dc_e
    _, grads_c = params.f_c.backward(cache_c, dc)
    return loss, Gradients(f_p=grads_p, f_c=grads_c, f_e=grads_e)


def contrastive_loss(
    batch: Batch,
    params: EncoderParams,
    cfg: BridgeConfig,
    featurizer: Featurizer | None = None,
) -> float:
    loss, _ = loss_from_features(batch_features(batch, params.m, featurizer), params, cfg)
    return loss


def loss_gradients(
    batch: Batch,
    params: EncoderParams,
    cfg: BridgeConfig,
    featurizer: Featurizer | None = None,
) -> tuple[float, Gradients]:
    loss, grads = loss_from_features(
        batch_features(batch, params.m, featurizer), params, cfg, want_grads=True
    )
    assert grads is not None
    return loss, grads


# -- training ----------------------------------------------------------------

@dataclass
class EncoderTrainConfig:
    m: int = 256
    d: int = 16
    hidden: int = HIDDEN_WIDTH
    epochs: int = 10
    batch_size: int = 64
    lr: float = 2e-4
    seed: int = 0
    snapshots: str = "all"
    bridge: BridgeConfig | None = None

    def bridge_config(self) -> BridgeConfig:
        return self.bridge or BridgeConfig(d=self.d)


def _epoch_batches(
    tuples: list, batch_size: int, rng: np.random.Generator
) -> list[Batch]:
    """Shuffle once, chunk, and drop items that end up without negatives."""
    order = rng.permutation(len(tuples))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [tuples[i] for i in order[start : start + batch_size]]
        if len(chunk) < 2:
            continue
        batch = Batch(items=[it for it in make_batch(chunk).items if it.negatives])
        if len(batch.items) >= 2:
            batches.append(batch)
    return batches


def train_encoder(
    corpus: Corpus,
    train_cfg: EncoderTrainConfig,
    featurizer: Featurizer | None = None,
) -> tuple[EncoderParams, list[float]]:
    """Adam over shuffled batches; returns final params and per-epoch mean loss."""
    cfg = train_cfg.bridge_config()
    tuples = corpus_tuples(corpus, train_cfg.snapshots)
    if len({s.dialogue_id for s in tuples}) < 2:
        raise ValueError("training needs contrastive tuples from >= 2 dialogues")
    rng = np.random.default_rng(train_cfg.seed)
    params = init_encoder(train_cfg.m, train_cfg.d, seed=train_cfg.seed, hidden=train_cfg.hidden)
    feat = featurizer or default_featurizer(train_cfg.m)
    theta = params.to_vector()
    opt = Adam(theta.size, lr=train_cfg.lr)
    losses: list[float] = []
    for epoch in range(train_cfg.epochs):
        epoch_losses = []
        for i, batch in enumerate(_epoch_batches(tuples, train_cfg.batch_size, rng)):
            bf = batch_features(batch, train_cfg.m, feat)
            loss, grads = loss_from_features(bf, params, cfg, want_grads=True)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {i}")
            theta = opt.step(theta, grads.to_vector())
            params.set_vector(theta)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
    return params, losses


# -- checkpoints ---------------------------------------------------------------

def save_encoder(
    params: EncoderParams, path: str | Path, seed: int, extra: dict | None = None
) -> None:
    state = {
        "kind": "encoder",
        "m": params.m,
        "d": params.d,
        "seed": seed,
        "blocks": {
            "f_p": block_state(params.f_p),
            "f_c": block_state(params.f_c),
            "f_e": block_state(params.f_e),
        },
    }
    if extra:
        state.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state, fh, sort_keys=True)
        fh.write("\n")


def load_encoder(path: str | Path) -> EncoderParams:
    with open(path, encoding="utf-8") as fh:
        state = json.load(fh)
    if state.get("kind") != "encoder":
        raise ValueError(f"{path}: not an encoder checkpoint")
    return EncoderParams(
        f_p=block_from_state(state["blocks"]["f_p"]),
        f_c=block_from_state(state["blocks"]["f_c"]),
        f_e=block_from_state(state["blocks"]["f_e"]),
        m=state["m"],
        d=state["d"],
    )
