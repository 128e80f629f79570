"""Recurrent encoder-decoder (seq2seq) and per-token tagger.

Reserved token ids are shared by every vocabulary: 0=pad, 1=start, 2=end.
The attention-less decoder receives the final encoder state concatenated to
its input at every step; the attention variant uses single-head additive
attention computed from the previous decoder hidden state.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .tensor import Parameters, Tape, Tensor

PAD, BOS, EOS = 0, 1, 2
NUM_RESERVED = 3


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    emb_dim: int = 16
    hidden_dim: int = 32
    layers: int = 1
    cell: str = "lstm"  # lstm | gru
    attention: bool = False
    mode: str = "seq2seq"  # seq2seq | tagger
    max_decode: int = 64

    def __post_init__(self):
        if min(self.src_vocab, self.tgt_vocab, self.emb_dim, self.hidden_dim, self.layers) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.cell not in ("lstm", "gru"):
            raise ValueError(f"unknown cell kind: {self.cell}")
        if self.mode not in ("seq2seq", "tagger"):
            raise ValueError(f"unknown mode: {self.mode}")
        if self.mode == "tagger" and self.attention:
            raise ValueError("tagger mode forbids attention")


def _gate_count(cell):
    return 4 if cell == "lstm" else 3


def _cell_params(rng, prefix, in_dim, hidden, cell):
    g = _gate_count(cell)
    return {
        f"{prefix}_Wx": T.glorot(rng, in_dim, hidden, (in_dim, g * hidden)),
        f"{prefix}_Wh": T.glorot(rng, hidden, hidden, (hidden, g * hidden)),
        f"{prefix}_b": Tensor(np.zeros(g * hidden)),
    }


def init_weights(config, seed):
    """Glorot-initialized parameter set; layout fully determined by config."""
    rng = T.seeded_rng(seed)
    H, E = config.hidden_dim, config.emb_dim
    p = {"src_emb": T.glorot(rng, config.src_vocab, E, (config.src_vocab, E))}
    if config.mode == "tagger":
        for l in range(config.layers):
            in_dim = E if l == 0 else 2 * H
            p.update(_cell_params(rng, f"enc_f{l}", in_dim, H, config.cell))
            p.update(_cell_params(rng, f"enc_b{l}", in_dim, H, config.cell))
        p["out_W"] = T.glorot(rng, 2 * H, config.tgt_vocab, (2 * H, config.tgt_vocab))
        p["out_b"] = Tensor(np.zeros(config.tgt_vocab))
        return Parameters(p)
    p["tgt_emb"] = T.glorot(rng, config.tgt_vocab, E, (config.tgt_vocab, E))
    for l in range(config.layers):
        in_dim = E if l == 0 else H
        p.update(_cell_params(rng, f"enc{l}", in_dim, H, config.cell))
    for l in range(config.layers):
        in_dim = (E + H) if l == 0 else H
        p.update(_cell_params(rng, f"dec{l}", in_dim, H, config.cell))
    if config.attention:
        p["att_We"] = T.glorot(rng, H, H)
        p["att_Wd"] = T.glorot(rng, H, H)
        p["att_v"] = T.glorot(rng, H, 1, (H, 1))
    p["out_W"] = T.glorot(rng, H, config.tgt_vocab, (H, config.tgt_vocab))
    p["out_b"] = Tensor(np.zeros(config.tgt_vocab))
    return Parameters(p)


def _cell_step(w, prefix, x, h, c, hidden, cell):
    """One recurrent step; x, h, c are (B, *) tensors. Returns (h', c')."""
    pre = T.add_bias(T.add(T.matmul(x, w[f"{prefix}_Wx"]), T.matmul(h, w[f"{prefix}_Wh"])), w[f"{prefix}_b"])
    H = hidden
    if cell == "lstm":
        i = T.sigmoid(T.slice_cols(pre, 0, H))
        f = T.sigmoid(T.slice_cols(pre, H, 2 * H))
        g = T.tanh(T.slice_cols(pre, 2 * H, 3 * H))
        o = T.sigmoid(T.slice_cols(pre, 3 * H, 4 * H))
        c2 = T.add(T.mul(f, c), T.mul(i, g))
        return T.mul(o, T.tanh(c2)), c2
    # gru: z, r gates from pre; candidate recomputed with the reset-gated state
    z = T.sigmoid(T.slice_cols(pre, 0, H))
    r = T.sigmoid(T.slice_cols(pre, H, 2 * H))
    xb = T.add_bias(T.matmul(x, w[f"{prefix}_Wx"]), w[f"{prefix}_b"])
    cand_pre = T.add(
        T.slice_cols(xb, 2 * H, 3 * H),
        T.matmul(T.mul(r, h), T.slice_cols(w[f"{prefix}_Wh"], 2 * H, 3 * H)),
    )
    hbar = T.tanh(cand_pre)
    one_minus_z = T.sub(T.constant(np.ones_like(z.data)), z)
    return T.add(T.mul(z, h), T.mul(one_minus_z, hbar)), c


def _zeros(b, h):
    return Tensor(np.zeros((b, h)))


@dataclass
class EncoderStates:
    states: object  # (T, H) Tensor of top-layer states, one row per position
    final_h: list  # per-layer (1, H)
    final_c: list


def encode(weights, config, x):
    """Run the encoder over token ids x; returns per-position and final states."""
    if len(x) == 0:
        raise ValueError("empty input")
    if any(t < 0 or t >= config.src_vocab for t in x):
        raise ValueError("out-of-vocab source token")
    H = config.hidden_dim
    hs = [_zeros(1, H) for _ in range(config.layers)]
    cs = [_zeros(1, H) for _ in range(config.layers)]
    tops = []
    for tok in x:
        inp = T.lookup(weights["src_emb"], [tok])
        for l in range(config.layers):
            hs[l], cs[l] = _cell_step(weights, f"enc{l}", inp, hs[l], cs[l], H, config.cell)
            inp = hs[l]
        tops.append(hs[-1])
    return EncoderStates(T.stack_rows(tops), hs, cs)


@dataclass
class DecoderState:
    hs: list
    cs: list
    enc: EncoderStates


def init_decoder(enc, config):
    H = config.hidden_dim
    return DecoderState([_zeros(1, H) for _ in range(config.layers)], [_zeros(1, H) for _ in range(config.layers)], enc)


def _attention_context(weights, enc, h_prev):
    # additive attention: softmax over v . tanh(We e_t + Wd h_prev)
    scores = T.matmul(T.tanh(T.add_bias(T.matmul(enc.states, weights["att_We"]), _row(T.matmul(h_prev, weights["att_Wd"])))), weights["att_v"])
    att = T.exp(T.log_softmax(T.transpose(scores)))  # (1, T)
    return T.matmul(att, enc.states)  # (1, H)


def _row(t):
    # (1, H) -> 1-D adapter usable as an add_bias operand
    return _Row(t)


class _Row:
    """Adapter presenting a (1, H) tensor as a 1-D bias for add_bias."""

    def __init__(self, t):
        self._t = t
        self.data = t.data[0]

    def _accum(self, g):
        self._t._accum(g[None, :])


def decode_step(weights, config, state, prev_token):
    """One decoder step; returns (log-distribution (V,), new state)."""
    if prev_token < 0 or prev_token >= config.tgt_vocab:
        raise ValueError("invalid token id")
    H = config.hidden_dim
    emb = T.lookup(weights["tgt_emb"], [prev_token])
    if config.attention:
        ctx = _attention_context(weights, state.enc, state.hs[-1])
    else:
        ctx = state.enc.final_h[-1]
    inp = T.concat_cols(emb, ctx)
    hs, cs = list(state.hs), list(state.cs)
    for l in range(config.layers):
        hs[l], cs[l] = _cell_step(weights, f"dec{l}", inp, hs[l], cs[l], H, config.cell)
        inp = hs[l]
    logits = T.add_bias(T.matmul(hs[-1], weights["out_W"]), weights["out_b"])
    logdist = T.log_softmax(logits)
    return logdist, DecoderState(hs, cs, state.enc)


def tagger_logprobs(weights, config, x):
    """Per-position tag log-distributions, (len(x), V) tensor. Tagger mode."""
    if config.mode != "tagger":
        raise ValueError("tagger mode required")
    if len(x) == 0:
        raise ValueError("empty input")
    H = config.hidden_dim
    n = len(x)
    embs = [T.lookup(weights["src_emb"], [t]) for t in x]
    layer_in = embs
    for l in range(config.layers):
        fh, fc = _zeros(1, H), _zeros(1, H)
        bh, bc = _zeros(1, H), _zeros(1, H)
        fwd, bwd = [], [None] * n
        for t in range(n):
            fh, fc = _cell_step(weights, f"enc_f{l}", layer_in[t], fh, fc, H, config.cell)
            fwd.append(fh)
        for t in reversed(range(n)):
            bh, bc = _cell_step(weights, f"enc_b{l}", layer_in[t], bh, bc, H, config.cell)
            bwd[t] = bh
        layer_in = [T.concat_cols(f, b) for f, b in zip(fwd, bwd)]
    states = T.stack_rows(layer_in)
    logits = T.add_bias(T.matmul(states, weights["out_W"]), weights["out_b"])
    return T.log_softmax(logits)


def sequence_logprob(weights, config, x, y):
    """Total log-probability of y given x (the compatibility score)."""
    if len(y) == 0:
        raise ValueError("empty target")
    if any(t < 0 or t >= config.tgt_vocab for t in y):
        raise ValueError("out-of-vocab target token")
    if config.mode == "tagger":
        if len(y) != len(x):
            raise ValueError("tagger target length must match input")
        lp = tagger_logprobs(weights, config, x)
        return T.ssum(T.pick(lp, y))
    if len(y) > config.max_decode:
        raise ValueError("target exceeds max decode length")
    enc = encode(weights, config, x)
    state = init_decoder(enc, config)
    prev = BOS
    total = None
    for tok in y:
        logdist, state = decode_step(weights, config, state, prev)
        term = T.ssum(T.pick(logdist, [tok]))
        total = term if total is None else T.add(total, term)
        prev = tok
    return total


def span_logprob(weights, config, x, tags, span):
    """Sum of tag log-probabilities over positions in [i, j). Tagger mode."""
    i, j = span
    if not (0 <= i < j <= len(x)):
        raise ValueError(f"span {span} out of range for length {len(x)}")
    if len(tags) != len(x):
        raise ValueError("tag sequence length must match input")
    lp = tagger_logprobs(weights, config, x)
    picked = T.pick(lp, tags)
    mask = np.zeros(len(x))
    mask[i:j] = 1.0
    return T.ssum(T.cmul(picked, mask))


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 0.003
    optimizer: str = "adam"
    seed: int = 0
    shuffle: bool = True


def _pad_batch(seqs, pad=PAD):
    n = max(len(s) for s in seqs)
    out = np.full((len(seqs), n), pad, dtype=np.intp)
    mask = np.zeros((len(seqs), n))
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return out, mask


def _batched_seq2seq_loss(weights, config, xs, ys):
    """Masked teacher-forced NLL for a padded batch (no attention)."""
    H = config.hidden_dim
    B = len(xs)
    xpad, xmask = _pad_batch(xs)
    ys_eos = [list(y) + [EOS] for y in ys]
    ypad, ymask = _pad_batch(ys_eos)
    hs = [Tensor(np.zeros((B, H))) for _ in range(config.layers)]
    cs = [Tensor(np.zeros((B, H))) for _ in range(config.layers)]
    for t in range(xpad.shape[1]):
        inp = T.lookup(weights["src_emb"], xpad[:, t])
        m = np.repeat(xmask[:, t : t + 1], H, axis=1)
        for l in range(config.layers):
            h2, c2 = _cell_step(weights, f"enc{l}", inp, hs[l], cs[l], H, config.cell)
            hs[l] = T.add(T.cmul(h2, m), T.cmul(hs[l], 1.0 - m))
            cs[l] = T.add(T.cmul(c2, m), T.cmul(cs[l], 1.0 - m))
            inp = hs[l]
    enc_final = hs[-1]
    dh = [Tensor(np.zeros((B, H))) for _ in range(config.layers)]
    dc = [Tensor(np.zeros((B, H))) for _ in range(config.layers)]
    prev = np.full(B, BOS, dtype=np.intp)
    total = None
    for t in range(ypad.shape[1]):
        inp = T.concat_cols(T.lookup(weights["tgt_emb"], prev), enc_final)
        for l in range(config.layers):
            dh[l], dc[l] = _cell_step(weights, f"dec{l}", inp, dh[l], dc[l], H, config.cell)
            inp = dh[l]
        logits = T.add_bias(T.matmul(dh[-1], weights["out_W"]), weights["out_b"])
        lp = T.pick(T.log_softmax(logits), ypad[:, t])
        term = T.ssum(T.cmul(lp, ymask[:, t]))
        total = term if total is None else T.add(total, term)
        prev = ypad[:, t]
    return T.scale(total, -1.0 / ymask.sum())


def _example_loss(weights, config, x, y):
    if config.mode == "tagger":
        lp = sequence_logprob(weights, config, x, y)
        return T.scale(lp, -1.0 / len(y))
    lp = sequence_logprob(weights, config, x, list(y) + [EOS])
    return T.scale(lp, -1.0 / (len(y) + 1))


def train(weights, config, pairs, hyper):
    """Teacher-forced training; returns (weights, per-epoch mean loss trace).

    pairs: list of (source ids, target ids). Deterministic given hyper.seed.
    Mutates and returns the given weights.
    """
    if not pairs:
        raise ValueError("empty corpus")
    opt = T.make_optimizer(hyper.optimizer, hyper.lr)
    rng = T.seeded_rng(hyper.seed)
    batched = config.mode == "seq2seq" and not config.attention
    trace = []
    order = np.arange(len(pairs))
    for _ in range(hyper.epochs):
        if hyper.shuffle:
            rng.shuffle(order)
        epoch_loss = 0.0
        nb = 0
        for start in range(0, len(pairs), hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            xs = [pairs[i][0] for i in idx]
            ys = [pairs[i][1] for i in idx]
            with Tape() as tape:
                if batched:
                    loss = _batched_seq2seq_loss(weights, config, xs, ys)
                else:
                    parts = [_example_loss(weights, config, x, y) for x, y in zip(xs, ys)]
                    total = parts[0]
                    for p in parts[1:]:
                        total = T.add(total, p)
                    loss = T.scale(total, 1.0 / len(parts))
            grads = T.backward(loss, tape, weights)
            if hyper.lr != 0.0:
                opt.step(weights, grads)
            epoch_loss += loss.item()
            nb += 1
        trace.append(epoch_loss / nb)
    return weights, trace


def teacher_forced_accuracy(weights, config, pairs):
    """Fraction of target tokens (incl. end token in seq2seq) predicted argmax-correct."""
    correct = 0
    total = 0
    for x, y in pairs:
        if config.mode == "tagger":
            lp = tagger_logprobs(weights, config, x)
            pred = lp.data.argmax(axis=1)
            gold = np.asarray(y)
        else:
            enc = encode(weights, config, x)
            state = init_decoder(enc, config)
            prev = BOS
            preds = []
            for tok in list(y) + [EOS]:
                logdist, state = decode_step(weights, config, state, prev)
                preds.append(int(logdist.data.argmax()))
                prev = tok
            pred = np.asarray(preds)
            gold = np.asarray(list(y) + [EOS])
        correct += int((pred == gold).sum())
        total += len(gold)
    return correct / total
