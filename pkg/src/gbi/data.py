"""Deterministic synthetic corpora for the three tasks.

Corpus files are JSON lines, one example per line:
    {"src": [...], "tgt": [...], "payload": {...}}
with a sidecar <name>.meta.json recording seed and parameters. Regeneration
with the same seed is byte-identical.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .constraint import leaf, node, sr_loss, tree_spans, tree_to_commands

RESERVED = ("<pad>", "<s>", "</s>")


class Vocab:
    """Token/id table with the reserved ids 0=pad, 1=start, 2=end."""

    def __init__(self, tokens):
        self._tokens = list(RESERVED) + list(tokens)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("duplicate tokens")

    def __len__(self):
        return len(self._tokens)

    def id(self, token):
        return self._ids[token]

    def token(self, i):
        return self._tokens[i]

    def encode(self, tokens):
        return [self._ids[t] for t in tokens]

    def decode(self, ids):
        return [self._tokens[i] for i in ids]


@dataclass
class Example:
    src: list  # source tokens (strings)
    tgt: list | None = None
    payload: dict = field(default_factory=dict)


@dataclass
class Corpus:
    examples: list
    meta: dict

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


def _meta_path(path):
    base = path.name[:-6] if path.name.endswith(".jsonl") else path.name
    return path.parent / (base + ".meta.json")


def save_corpus(corpus, path, force=False):
    path = Path(path)
    meta_path = _meta_path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists (use force to overwrite)")
    with open(path, "w") as f:
        for ex in corpus.examples:
            rec = {"src": ex.src, "tgt": ex.tgt, "payload": ex.payload}
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(meta_path, "w") as f:
        json.dump({"format_version": 1, **corpus.meta}, f, sort_keys=True, indent=2)
        f.write("\n")


def load_corpus(path):
    path = Path(path)
    examples = []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            payload = rec.get("payload") or {}
            examples.append(Example(rec["src"], rec.get("tgt"), payload))
    meta_path = _meta_path(path)
    meta = {}
    if meta_path.exists():
        with open(meta_path) as f:
            meta = json.load(f)
    return Corpus(examples, meta)


# ---------------------------------------------------------------------------
# transduction

def apply_transducer(source):
    """Rewrite az -> aaa and bz -> zb, left to right."""
    if len(source) % 2 != 0:
        raise ValueError("source not in (az|bz)*")
    out = []
    for i in range(0, len(source), 2):
        pair = source[i : i + 2]
        if pair == "az":
            out.append("aaa")
        elif pair == "bz":
            out.append("zb")
        else:
            raise ValueError(f"source not in (az|bz)*: {pair!r}")
    return "".join(out)


def _pair_string(bits):
    return "".join("az" if b else "bz" for b in bits)


TRANSDUCTION_TRAIN_SIZE = 1934
TRANSDUCTION_TEST_SIZE = 256


def gen_transduction(seed):
    """Train: 1934 unique sources of (even) lengths 2-20; test: 256 of 22/24.

    Lengths 2-18 are exhausted (1022 strings); the remainder is sampled
    without replacement from length 20. Targets come from the transducer, so
    every pair is feasible by construction.
    """
    rng = T.seeded_rng(seed)
    sources = []
    for npairs in range(1, 10):  # lengths 2..18
        for code in range(2**npairs):
            bits = [(code >> k) & 1 for k in range(npairs)]
            sources.append(_pair_string(bits))
    need = TRANSDUCTION_TRAIN_SIZE - len(sources)
    codes = rng.choice(2**10, size=need, replace=False)
    for code in sorted(int(c) for c in codes):
        bits = [(code >> k) & 1 for k in range(10)]
        sources.append(_pair_string(bits))
    test_sources = []
    for npairs, count in ((11, TRANSDUCTION_TEST_SIZE // 2), (12, TRANSDUCTION_TEST_SIZE // 2)):
        codes = rng.choice(2**npairs, size=count, replace=False)
        for code in sorted(int(c) for c in codes):
            bits = [(code >> k) & 1 for k in range(npairs)]
            test_sources.append(_pair_string(bits))

    def to_examples(srcs):
        return [Example(list(s), list(apply_transducer(s))) for s in srcs]

    meta = {"task": "transduction", "seed": seed, "train_lengths": [2, 20], "test_lengths": [22, 24]}
    return (
        Corpus(to_examples(sources), {**meta, "split": "train"}),
        Corpus(to_examples(test_sources), {**meta, "split": "test"}),
    )


def transduction_vocabs():
    return Vocab(["a", "b", "z"]), Vocab(["a", "b", "z"])


# ---------------------------------------------------------------------------
# toy treebank

@dataclass
class TreebankParams:
    vocab_size: int = 12
    n_train: int = 250
    n_test: int = 100
    train_leaves: tuple = (3, 7)
    test_leaves: tuple = (5, 10)
    max_arity: int = 3
    n_types: int = 3


def random_tree(rng, n_leaves, max_arity, n_types, offset=0):
    """Random tree over leaves offset..offset+n_leaves-1 with bounded arity."""
    if n_leaves == 1:
        child = leaf(offset)
        if rng.random() < 0.3:
            return node([child], str(int(rng.integers(n_types))))
        return child
    arity = int(rng.integers(2, min(max_arity, n_leaves) + 1))
    cuts = sorted(rng.choice(np.arange(1, n_leaves), size=arity - 1, replace=False).tolist())
    bounds = [0] + [int(c) for c in cuts] + [n_leaves]
    children = [
        random_tree(rng, bounds[k + 1] - bounds[k], max_arity, n_types, offset + bounds[k])
        for k in range(arity)
    ]
    return node(children, str(int(rng.integers(n_types))))


def _root_tree(rng, n_leaves, max_arity, n_types):
    t = random_tree(rng, n_leaves, max_arity, n_types)
    if t.is_leaf:
        t = node([t], "0")
    return t


def gen_toy_treebank(seed, params=None):
    """Random PCFG-ish sentences paired with typed shift-reduce commands."""
    params = params or TreebankParams()
    rng = T.seeded_rng(seed)

    def make_split(n, leaves_range, split):
        examples = []
        seen = set()
        lo, hi = leaves_range
        while len(examples) < n:
            m = int(rng.integers(lo, hi + 1))
            words = [f"w{int(rng.integers(params.vocab_size))}" for _ in range(m)]
            key = tuple(words)
            if key in seen:
                continue
            seen.add(key)
            tree = _root_tree(rng, m, params.max_arity, params.n_types)
            cmds = tree_to_commands(tree)
            assert sr_loss(cmds, m) == 0.0
            examples.append(Example(words, cmds))
        return Corpus(
            examples,
            {"task": "parsing", "seed": seed, "split": split, "leaves": [lo, hi]},
        )

    return (
        make_split(params.n_train, params.train_leaves, "train"),
        make_split(params.n_test, params.test_leaves, "test"),
    )


def treebank_vocabs(params=None):
    params = params or TreebankParams()
    src = Vocab([f"w{i}" for i in range(params.vocab_size)])
    tgt = Vocab(["s", "r"] + [f"!{t}" for t in range(params.n_types)])
    return src, tgt


# ---------------------------------------------------------------------------
# tagging

@dataclass
class TaggingParams:
    vocab_size: int = 12
    n_train: int = 220
    n_test: int = 90
    train_len: tuple = (4, 7)
    test_len: tuple = (6, 9)
    n_roles: int = 3
    max_labeled_spans: int = 4


def gen_tagging(seed, params=None):
    """Sentences with BIO tags drawn from random parse-tree spans.

    The payload carries the full set of tree spans, so gold tags always
    satisfy the span-agreement constraint.
    """
    params = params or TaggingParams()
    rng = T.seeded_rng(seed)

    def make_split(n, len_range, split):
        examples = []
        seen = set()
        lo, hi = len_range
        while len(examples) < n:
            m = int(rng.integers(lo, hi + 1))
            words = [f"w{int(rng.integers(params.vocab_size))}" for _ in range(m)]
            key = tuple(words)
            if key in seen:
                continue
            seen.add(key)
            tree = _root_tree(rng, m, 3, 1)
            spans = sorted(tree_spans(tree).spans)
            k = int(rng.integers(1, params.max_labeled_spans + 1))
            order = rng.permutation(len(spans))
            chosen = []
            for idx in order:
                i, j = spans[int(idx)]
                if (i, j) == (0, m) and len(spans) > 1:
                    continue  # skip the root span; whole-sentence roles are dull
                if all(j <= ci or cj <= i for ci, cj in chosen):
                    chosen.append((i, j))
                if len(chosen) == k:
                    break
            tags = ["O"] * m
            for i, j in sorted(chosen):
                role = f"R{int(rng.integers(params.n_roles))}"
                tags[i] = f"B-{role}"
                for p in range(i + 1, j):
                    tags[p] = f"I-{role}"
            examples.append(Example(words, tags, {"spans": [list(s) for s in spans]}))
        return Corpus(
            examples,
            {"task": "tagging", "seed": seed, "split": split, "lengths": [lo, hi]},
        )

    return (
        make_split(params.n_train, params.train_len, "train"),
        make_split(params.n_test, params.test_len, "test"),
    )


def tagging_vocabs(params=None):
    from .decode import BioSchema

    params = params or TaggingParams()
    schema = BioSchema([f"R{i}" for i in range(params.n_roles)])
    src = Vocab([f"w{i}" for i in range(params.vocab_size)])
    tgt = Vocab([schema.labels[i] for i in schema.tag_ids])
    assert all(tgt.id(schema.labels[i]) == i for i in schema.tag_ids)
    return src, tgt, schema


def corrupt_spans(payload_spans, rho, seed, length):
    """Shift each span boundary by +/-1 with probability rho; drop degenerate
    results. Models noisy side information."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("noise rate must be in [0, 1]")
    rng = T.seeded_rng(seed)
    out = set()
    for i, j in sorted(tuple(s) for s in payload_spans):
        if rng.random() < rho:
            moves = [
                (i2, j2)
                for i2, j2 in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1))
                if 0 <= i2 < j2 <= length
            ]
            if not moves:
                continue  # degenerate after any shift: drop
            i, j = moves[int(rng.integers(len(moves)))]
        out.add((i, j))
    return sorted(out)
