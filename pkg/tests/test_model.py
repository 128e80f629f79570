"""Model forward/backward correctness, training behavior, checkpoints."""

import numpy as np
import pytest

import gbi.tensor as T
from gbi.checkpoint import load_checkpoint, save_checkpoint
from gbi.model import (
    BOS,
    EOS,
    ModelConfig,
    TrainConfig,
    _batched_seq2seq_loss,
    _example_loss,
    Tape,
    decode_step,
    encode,
    init_decoder,
    init_weights,
    sequence_logprob,
    span_logprob,
    tagger_logprobs,
    teacher_forced_accuracy,
    train,
)


def _cfg(**kw):
    base = dict(src_vocab=6, tgt_vocab=6, emb_dim=3, hidden_dim=4, layers=1)
    base.update(kw)
    return ModelConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(hidden_dim=0)
    with pytest.raises(ValueError):
        _cfg(cell="elman")
    with pytest.raises(ValueError):
        _cfg(mode="tagger", attention=True)
    with pytest.raises(ValueError):
        _cfg(mode="classifier")


def test_init_weights_deterministic():
    cfg = _cfg()
    a = init_weights(cfg, 3)
    b = init_weights(cfg, 3)
    c = init_weights(cfg, 4)
    for name, t in a.items():
        np.testing.assert_array_equal(t.data, b[name].data)
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a.names())


def test_decode_step_emits_log_distribution():
    cfg = _cfg()
    w = init_weights(cfg, 0)
    state = init_decoder(encode(w, cfg, [3, 4]), cfg)
    logdist, _ = decode_step(w, cfg, state, BOS)
    assert logdist.data.shape == (1, cfg.tgt_vocab)
    assert np.exp(logdist.data).sum() == pytest.approx(1.0)


def test_encode_rejects_bad_input():
    cfg = _cfg()
    w = init_weights(cfg, 0)
    with pytest.raises(ValueError):
        encode(w, cfg, [])
    with pytest.raises(ValueError):
        encode(w, cfg, [99])


@pytest.mark.parametrize(
    "kw",
    [
        dict(),
        dict(attention=True),
        dict(cell="gru"),
        dict(layers=2),
        dict(mode="tagger"),
        dict(mode="tagger", layers=2, cell="gru"),
    ],
)
def test_sequence_logprob_gradients(kw):
    cfg = _cfg(**kw)
    w = init_weights(cfg, 1)
    x = [3, 4, 5]
    y = [4, 3, 5] if cfg.mode == "tagger" else [5, 3]
    err = T.check_gradients(lambda: sequence_logprob(w, cfg, x, y), w)
    assert err < 1e-4, f"{kw}: {err}"


def test_span_logprob_matches_masked_sum():
    cfg = _cfg(mode="tagger")
    w = init_weights(cfg, 2)
    x = [3, 4, 5, 3]
    tags = [3, 4, 5, 3]
    lp = tagger_logprobs(w, cfg, x).data
    got = span_logprob(w, cfg, x, tags, (1, 3)).item()
    want = lp[1, 4] + lp[2, 5]
    assert got == pytest.approx(want)
    with pytest.raises(ValueError):
        span_logprob(w, cfg, x, tags, (3, 3))


def test_sequence_logprob_validation():
    cfg = _cfg()
    w = init_weights(cfg, 0)
    with pytest.raises(ValueError):
        sequence_logprob(w, cfg, [3], [])
    with pytest.raises(ValueError):
        sequence_logprob(w, cfg, [3], [99])
    tcfg = _cfg(mode="tagger")
    tw = init_weights(tcfg, 0)
    with pytest.raises(ValueError):
        sequence_logprob(tw, tcfg, [3, 4], [3])


def test_batched_loss_equals_per_example_mean():
    cfg = _cfg()
    w = init_weights(cfg, 3)
    xs = [[3, 4], [5, 3, 4], [4]]
    ys = [[5], [3, 4], [4, 4, 5]]
    with Tape():
        batched = _batched_seq2seq_loss(w, cfg, xs, ys).item()
    # batched normalization is by total token count (end tokens included)
    with Tape():
        nll = sum(-sequence_logprob(w, cfg, x, list(y) + [EOS]).item() for x, y in zip(xs, ys))
    manual = nll / sum(len(y) + 1 for y in ys)
    assert batched == pytest.approx(manual, rel=1e-12)


def test_batched_loss_gradients_match_per_example():
    cfg = _cfg()
    w = init_weights(cfg, 3)
    xs = [[3, 4], [5]]
    ys = [[5], [3, 4, 5]]
    with Tape() as tape:
        loss = _batched_seq2seq_loss(w, cfg, xs, ys)
    gb = T.backward(loss, tape, w)
    total_tokens = sum(len(y) + 1 for y in ys)
    with Tape() as tape:
        parts = [sequence_logprob(w, cfg, x, list(y) + [EOS]) for x, y in zip(xs, ys)]
        loss2 = T.scale(T.add(parts[0], parts[1]), -1.0 / total_tokens)
    gm = T.backward(loss2, tape, w)
    for name in w.names():
        np.testing.assert_allclose(gb[name], gm[name], atol=1e-12)


def test_train_reduces_loss_and_is_deterministic():
    cfg = _cfg()
    pairs = [([3, 4], [5, 5]), ([5], [3]), ([4, 4], [4])]
    hyper = TrainConfig(epochs=15, batch_size=2, lr=0.01, optimizer="adam", seed=0)
    w1, trace1 = train(init_weights(cfg, 0), cfg, pairs, hyper)
    w2, trace2 = train(init_weights(cfg, 0), cfg, pairs, hyper)
    assert trace1[-1] < trace1[0]
    assert trace1 == trace2
    for name in w1.names():
        np.testing.assert_array_equal(w1[name].data, w2[name].data)


def test_train_memorizes_tiny_corpus():
    cfg = _cfg()
    pairs = [([3, 4], [5, 5]), ([5, 3], [3])]
    hyper = TrainConfig(epochs=150, batch_size=2, lr=0.01, optimizer="adam", seed=1)
    w, _ = train(init_weights(cfg, 0), cfg, pairs, hyper)
    assert teacher_forced_accuracy(w, cfg, pairs) == 1.0


def test_train_rejects_empty_corpus():
    cfg = _cfg()
    with pytest.raises(ValueError):
        train(init_weights(cfg, 0), cfg, [], TrainConfig())


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = _cfg(attention=True)
    w = init_weights(cfg, 7)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, cfg, w, 7, extra={"task": "parsing"})
    cfg2, w2, seed, extra = load_checkpoint(path)
    assert cfg2 == cfg
    assert seed == 7
    assert extra == {"task": "parsing"}
    assert w.names() == w2.names()
    for name, t in w.items():
        assert t.data.tobytes() == w2[name].data.tobytes()


def test_checkpoint_rejects_truncation(tmp_path):
    cfg = _cfg()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, cfg, init_weights(cfg, 0), 0)
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(ValueError):
        load_checkpoint(path)
