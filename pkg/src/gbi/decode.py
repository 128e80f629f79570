"""Inference strategies: greedy, beam, constrained-BIO Viterbi, and the
feasibility-masked greedy shift-reduce baseline.

All tie-breaks are by lowest token id so runs are bit-reproducible.
Beam hypotheses are ranked by total path log-probability including the
end-of-sequence step; DecodeResult.score stays the sum over emitted tokens
only, matching the sequence-level compatibility score.
"""

from dataclasses import dataclass, field

import numpy as np

from .model import BOS, EOS, decode_step, encode, init_decoder


@dataclass
class DecodeResult:
    tokens: list
    logprobs: list
    score: float  # sum of per-token log-probs (end token excluded)
    eos_logprob: float | None = None  # log-prob of the end step, when emitted
    dists: list | None = None  # per-step full log-distributions, when retained

    @property
    def path_score(self):
        return self.score + (self.eos_logprob or 0.0)


def greedy_decode(weights, config, x, max_len=None, keep_dists=False):
    """Argmax decoding; stops at the end token or max_len."""
    max_len = config.max_decode if max_len is None else max_len
    enc = encode(weights, config, x)
    state = init_decoder(enc, config)
    prev = BOS
    tokens, logprobs, dists = [], [], []
    eos_lp = None
    while len(tokens) < max_len:
        logdist, state = decode_step(weights, config, state, prev)
        tok = int(logdist.data.argmax())
        if keep_dists:
            dists.append(logdist.data.copy())
        if tok == EOS:
            eos_lp = float(logdist.data[0, EOS])
            break
        tokens.append(tok)
        logprobs.append(float(logdist.data[0, tok]))
        prev = tok
    return DecodeResult(tokens, logprobs, sum(logprobs), eos_lp, dists if keep_dists else None)


@dataclass
class BeamHypothesis:
    tokens: tuple
    logprobs: tuple
    score: float  # accumulated log-prob, incl. end step once finished
    state: object
    finished: bool
    eos_logprob: float | None = None

    def sort_key(self):
        # Finishing is represented by an explicit end token in the tie-break
        # key so exact ties resolve exactly as greedy argmax would.
        key_tokens = self.tokens + (EOS,) if self.finished else self.tokens
        return (-self.score, key_tokens)


def beam_decode(weights, config, x, width, max_len=None):
    """Beam search; returns (best DecodeResult, n-best DecodeResults)."""
    if width < 1:
        raise ValueError("beam width must be >= 1")
    max_len = config.max_decode if max_len is None else max_len
    enc = encode(weights, config, x)
    beam = [BeamHypothesis((), (), 0.0, init_decoder(enc, config), False)]
    for _ in range(max_len):
        candidates = [h for h in beam if h.finished]
        grew = False
        for h in beam:
            if h.finished:
                continue
            prev = h.tokens[-1] if h.tokens else BOS
            logdist, state = decode_step(weights, config, h.state, prev)
            row = logdist.data[0]
            for tok in range(config.tgt_vocab):
                lp = float(row[tok])
                if tok == EOS:
                    candidates.append(
                        BeamHypothesis(h.tokens, h.logprobs, h.score + lp, None, True, lp)
                    )
                else:
                    candidates.append(
                        BeamHypothesis(
                            h.tokens + (tok,), h.logprobs + (lp,), h.score + lp, state, False
                        )
                    )
            grew = True
        if not grew:
            break
        candidates.sort(key=BeamHypothesis.sort_key)
        seen = set()
        beam = []
        for h in candidates:
            key = (h.tokens, h.finished)
            if key in seen:
                continue
            seen.add(key)
            beam.append(h)
            if len(beam) == width:
                break
    results = []
    seen = set()
    for h in sorted(beam, key=BeamHypothesis.sort_key):
        if h.tokens in seen:
            continue
        seen.add(h.tokens)
        results.append(
            DecodeResult(list(h.tokens), list(h.logprobs), sum(h.logprobs), h.eos_logprob)
        )
    return results[0], results


# ---------------------------------------------------------------------------
# BIO Viterbi

class BioSchema:
    """Tag inventory O, B-role, I-role with ids after the reserved range."""

    def __init__(self, roles):
        self.roles = list(roles)
        self.labels = {3: "O"}
        for k, r in enumerate(self.roles):
            self.labels[4 + 2 * k] = f"B-{r}"
            self.labels[5 + 2 * k] = f"I-{r}"
        self.ids = {v: k for k, v in self.labels.items()}

    @property
    def tag_ids(self):
        return sorted(self.labels)

    @property
    def vocab_size(self):
        return 4 + 2 * len(self.roles)

    def start_allowed(self, tag):
        return not self.labels[tag].startswith("I-")

    def allowed(self, prev, cur):
        lab = self.labels[cur]
        if not lab.startswith("I-"):
            return True
        role = lab[2:]
        prev_lab = self.labels[prev]
        return prev_lab in (f"B-{role}", f"I-{role}")


def viterbi_bio(logits, schema):
    """Max-total-score valid tag sequence under BIO transition rules.

    logits: (T, V) array of per-position tag scores (log-probs or raw).
    Ties break toward the lowest tag id.
    """
    T = logits.shape[0]
    tags = schema.tag_ids
    score = {}
    back = {}
    for t in tags:
        score[t] = float(logits[0, t]) if schema.start_allowed(t) else -np.inf
        back[t] = None
    history = [back]
    for i in range(1, T):
        new_score, back = {}, {}
        for t in tags:
            best_prev, best = None, -np.inf
            for p in tags:
                if schema.allowed(p, t) and score[p] > best:
                    best, best_prev = score[p], p
            new_score[t] = best + float(logits[i, t])
            back[t] = best_prev
        score = new_score
        history.append(back)
    last, best = None, -np.inf
    for t in tags:
        if score[t] > best:
            best, last = score[t], t
    path = [last]
    for i in range(T - 1, 0, -1):
        path.append(history[i][path[-1]])
    return path[::-1]


# ---------------------------------------------------------------------------
# constrained greedy shift-reduce baseline

@dataclass(frozen=True)
class SrVocab:
    shift: int
    reduce: int
    bangs: tuple  # one or more stop-reduce ids (typed)


def constrained_greedy_sr(weights, config, x, m_x, sr_vocab, max_len=None):
    """Greedy decoding with per-step feasibility masking plus forced completion.

    The returned command token sequence always simulates to a single-root
    tree over exactly m_x tokens.
    """
    max_len = (4 * m_x + 8) if max_len is None else max_len
    enc = encode(weights, config, x)
    state = init_decoder(enc, config)
    prev = BOS
    tokens = []
    shifts = stack = run = 0
    lowest_bang = min(sr_vocab.bangs)
    while len(tokens) < max_len:
        logdist, state = decode_step(weights, config, state, prev)
        mask = np.full(config.tgt_vocab, -np.inf)
        if shifts < m_x:
            mask[sr_vocab.shift] = 0.0
        if stack >= 1:
            mask[sr_vocab.reduce] = 0.0
        if run >= 1:
            for b in sr_vocab.bangs:
                mask[b] = 0.0
        if shifts == m_x and stack == 1 and run == 0:
            mask[EOS] = 0.0
        tok = int((logdist.data[0] + mask).argmax())
        if tok == EOS:
            return tokens
        tokens.append(tok)
        prev = tok
        if tok == sr_vocab.shift:
            shifts += 1
            stack += 1
        elif tok == sr_vocab.reduce:
            stack -= 1
            run += 1
        else:
            stack += 1
            run = 0
    # forced completion: remaining shifts, close the open run, wrap to a root
    while shifts < m_x:
        tokens.append(sr_vocab.shift)
        shifts += 1
        stack += 1
    if run > 0:
        tokens.append(lowest_bang)
        stack += 1
        run = 0
    if stack > 1:
        tokens.extend([sr_vocab.reduce] * stack)
        tokens.append(lowest_bang)
    return tokens
