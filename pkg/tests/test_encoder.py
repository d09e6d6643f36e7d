import numpy as np
import pytest

from bridgeplan.bridge import BridgeConfig
from bridgeplan.corpus import Batch, BatchItem, Corpus, TupleSample
from bridgeplan.embedder import Featurizer, hash64
from bridgeplan.encoder import (
    EncoderParams,
    EncoderTrainConfig,
    contrastive_loss,
    encode_feedback,
    encode_point,
    init_encoder,
    load_encoder,
    loss_gradients,
    save_encoder,
    train_encoder,
)
from bridgeplan.mlp import MlpBlock, zero_block

from test_corpus import make_dialogue

LINEAR = BridgeConfig(d=1, decay_kind="linear")


def zero_params(m=1, d=1):
    return EncoderParams(
        f_p=zero_block([m, 4, 4, d]),
        f_c=zero_block([m, 4, 4, m]),
        f_e=zero_block([m, 4, 4, 1]),
        m=m,
        d=d,
    )


def signed_token(sign):
    """Single letter whose m=1 hash feature is exactly +1 or -1."""
    for ch in "abcdefghijklmnopqrstuvwxyz":
        value = -1.0 if (hash64(ch) >> 63) & 1 else 1.0
        if value == sign:
            return ch
    raise AssertionError("no letter with the requested hash sign")


def saturating_scalar_block(out_scale):
    """1-d block mapping +/-1 -> +/-out_scale and 0 -> 0, exactly.

    tanh(38) rounds to 1.0 in float64, so the two hidden layers pass the
    sign through unchanged and the linear output applies the scale.
    """
    return MlpBlock(
        weights=[np.array([[38.0]]), np.array([[38.0]]), np.array([[out_scale]])],
        biases=[np.zeros(1), np.zeros(1), np.zeros(1)],
    )


def empty_sample(t=2, T=4, dialogue="a"):
    return TupleSample(u_text="", s0_text="", st_text="", sT_text="", t=t, T=T,
                       dialogue_id=dialogue)


# -- encoding -------------------------------------------------------------------

def test_zero_params_encode_to_zero():
    params = zero_params(m=8, d=3)
    assert np.array_equal(encode_point("any text at all", params), np.zeros(3))
    zu, delta = encode_feedback("whatever", params)
    assert np.array_equal(zu, np.zeros(3))
    assert delta == 0.5  # logistic of a zero pre-activation


def test_encode_deterministic_and_shaped():
    params = init_encoder(m=16, d=5, seed=3)
    a = encode_point("same text", params)
    b = encode_point("same text", params)
    assert a.shape == (5,)
    assert a.tobytes() == b.tobytes()


def test_delta_stays_in_unit_interval():
    params = init_encoder(m=16, d=4, seed=1)
    for text in ["", "yes", "a much longer utterance with many tokens", "x" * 200]:
        _, delta = encode_feedback(text, params)
        assert 0.0 < delta < 1.0


def test_shared_point_encoder_across_roles():
    params = init_encoder(m=16, d=4, seed=2)
    text = "shared topic text"
    assert np.array_equal(encode_point(text, params), encode_point(text, params))


# -- closed-form losses ------------------------------------------------------------

def test_loss_single_negative_closed_form():
    # d+ = 0 (everything embeds to zero), one negative at distance sqrt(5),
    # var at (t=2, T=4, delta=0.5 linear) = 1.25, so d- = -5 / 2.5 = -2
    params = EncoderParams(
        f_p=saturating_scalar_block(np.sqrt(5.0)),
        f_c=zero_block([1, 1, 1, 1]),
        f_e=zero_block([1, 1, 1, 1]),
        m=1,
        d=1,
    )
    batch = Batch(items=[BatchItem(sample=empty_sample(), negatives=[signed_token(1.0)])])
    loss = contrastive_loss(batch, params, LINEAR)
    assert loss == pytest.approx(np.log(1 + np.exp(-2.0)), abs=1e-9)


def test_loss_uniform_tie_is_log_batch_size():
    batch = Batch(items=[BatchItem(sample=empty_sample(), negatives=["x", "y", "z"])])
    loss = contrastive_loss(batch, zero_params(), LINEAR)
    assert loss == pytest.approx(np.log(4.0), abs=1e-12)


def test_loss_saturates_to_zero_when_positive_dominates():
    # negative embeds far away: the softmax concentrates on the positive
    params = EncoderParams(
        f_p=saturating_scalar_block(60.0),
        f_c=zero_block([1, 1, 1, 1]),
        f_e=zero_block([1, 1, 1, 1]),
        m=1,
        d=1,
    )
    batch = Batch(items=[BatchItem(sample=empty_sample(), negatives=[signed_token(1.0)])])
    assert contrastive_loss(batch, params, LINEAR) == pytest.approx(0.0, abs=1e-12)


def test_loss_requires_negatives():
    batch = Batch(items=[BatchItem(sample=empty_sample(), negatives=[])])
    with pytest.raises(ValueError, match="no negatives"):
        contrastive_loss(batch, zero_params(), LINEAR)


def test_loss_nonnegative_on_random_instances():
    rng = np.random.default_rng(0)
    params = init_encoder(m=8, d=3, seed=5)
    cfg = BridgeConfig(d=3)
    for _ in range(20):
        items = []
        for i in range(4):
            T = int(rng.integers(2, 6))
            s = TupleSample(u_text="u", s0_text="s zero", st_text=f"point {i}",
                            sT_text="target", t=int(rng.integers(1, T)), T=T,
                            dialogue_id=f"d{i}")
            items.append(BatchItem(sample=s, negatives=[f"neg {i} {j}" for j in range(3)]))
        assert contrastive_loss(Batch(items=items), params, cfg) >= 0.0


# -- gradients ---------------------------------------------------------------------

def random_batch(rng, batch_size=8):
    words = ["alpha", "beta", "gamma", "delta", "movie", "star", "song", "band"]

    def text(k):
        return " ".join(words[int(rng.integers(len(words)))] for _ in range(k))

    items = []
    for i in range(batch_size):
        T = int(rng.integers(2, 6))
        s = TupleSample(u_text=text(3), s0_text=text(5), st_text=text(2),
                        sT_text=text(2), t=int(rng.integers(1, T)), T=T,
                        dialogue_id=f"d{i}")
        items.append(BatchItem(sample=s, negatives=[text(2) for _ in range(int(rng.integers(1, 4)))]))
    return Batch(items=items)


def finite_difference(params, batch, cfg, feat, h=1e-5):
    from bridgeplan.encoder import batch_features, loss_from_features

    bf = batch_features(batch, params.m, feat)
    theta = params.to_vector()
    grad = np.empty_like(theta)
    for k in range(theta.size):
        bumped = theta.copy()
        bumped[k] += h
        params.set_vector(bumped)
        up, _ = loss_from_features(bf, params, cfg)
        bumped[k] -= 2 * h
        params.set_vector(bumped)
        down, _ = loss_from_features(bf, params, cfg)
        grad[k] = (up - down) / (2 * h)
    params.set_vector(theta)
    return grad


@pytest.mark.parametrize("kind", ["linear", "exponential"])
def test_gradients_match_finite_differences(kind):
    m, d = 16, 4
    feat = Featurizer(m)
    cfg = BridgeConfig(d=d, decay_kind=kind)
    params = init_encoder(m, d, seed=11)
    batch = random_batch(np.random.default_rng(13))
    loss, grads = loss_gradients(batch, params, cfg, feat)
    fd = finite_difference(params, batch, cfg, feat)
    analytic = grads.to_vector()
    rel = np.abs(fd - analytic) / np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-6)
    assert rel.max() <= 1e-4
    assert loss == contrastive_loss(batch, params, cfg, feat)


def test_zero_learning_signal_under_score_ties():
    # negatives are copies of the positive: the loss is constant log|B|,
    # so every gradient vanishes identically
    params = init_encoder(m=8, d=3, seed=7)
    cfg = BridgeConfig(d=3)
    s = TupleSample(u_text="hi", s0_text="start", st_text="point",
                    sT_text="goal", t=1, T=3, dialogue_id="a")
    batch = Batch(items=[BatchItem(sample=s, negatives=["point", "point"])])
    loss, grads = loss_gradients(batch, params, cfg)
    assert loss == pytest.approx(np.log(3.0), abs=1e-12)
    assert np.max(np.abs(grads.to_vector())) < 1e-14


# -- training -----------------------------------------------------------------------

def training_corpus(n=12):
    dialogues = [
        make_dialogue(f"d{i}", topics=tuple(f"t{i}_{j}" for j in range(4)))
        for i in range(n)
    ]
    return Corpus(dialogues=dialogues)


def test_zero_epochs_returns_initialization():
    cfg = EncoderTrainConfig(m=32, d=4, epochs=0, batch_size=4, seed=9)
    params, losses = train_encoder(training_corpus(), cfg)
    assert losses == []
    reference = init_encoder(32, 4, seed=9)
    assert np.array_equal(params.to_vector(), reference.to_vector())


def test_training_is_deterministic_per_seed():
    cfg = EncoderTrainConfig(m=32, d=4, epochs=2, batch_size=4, lr=1e-3, seed=21)
    a, losses_a = train_encoder(training_corpus(), cfg)
    b, losses_b = train_encoder(training_corpus(), cfg)
    assert losses_a == losses_b
    assert a.to_vector().tobytes() == b.to_vector().tobytes()


def test_training_reduces_loss():
    cfg = EncoderTrainConfig(m=64, d=4, epochs=5, batch_size=8, lr=5e-3, seed=3)
    _, losses = train_encoder(training_corpus(24), cfg)
    assert losses[-1] < losses[0]


def test_training_rejects_single_dialogue():
    corpus = Corpus(dialogues=[make_dialogue("only")])
    with pytest.raises(ValueError, match="2 dialogues"):
        train_encoder(corpus, EncoderTrainConfig(m=16, d=2, epochs=1))


def test_training_aborts_on_nonfinite_loss():
    # an absurd learning rate overflows the weights within a step or two
    cfg = EncoderTrainConfig(m=16, d=2, epochs=3, batch_size=4, lr=1e200, seed=0)
    with np.errstate(all="ignore"):
        with pytest.raises(RuntimeError, match=r"non-finite loss at epoch \d+, batch \d+"):
            train_encoder(training_corpus(), cfg)


# -- checkpoints -----------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    params = init_encoder(m=16, d=4, seed=5)
    path = tmp_path / "encoder.json"
    save_encoder(params, path, seed=5)
    loaded = load_encoder(path)
    assert loaded.m == 16 and loaded.d == 4
    assert np.array_equal(loaded.to_vector(), params.to_vector())
    text = "roundtrip check"
    assert np.array_equal(encode_point(text, loaded), encode_point(text, params))


def test_checkpoint_kind_mismatch(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"kind": "planner"}', encoding="utf-8")
    with pytest.raises(ValueError, match="not an encoder checkpoint"):
        load_encoder(path)
