"""Synthetic corpora: generator determinism, feasibility by construction,
file round trips, span corruption."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbi import data as D
from gbi.constraint import sr_loss, span_agreement_loss, SpanSet, tree_spans
from gbi.decode import BioSchema


def test_vocab_reserved_layout():
    v = D.Vocab(["a", "b"])
    assert v.id("<pad>") == 0 and v.id("<s>") == 1 and v.id("</s>") == 2
    assert v.id("a") == 3
    assert v.decode(v.encode(["b", "a"])) == ["b", "a"]
    with pytest.raises(ValueError):
        D.Vocab(["a", "a"])


def test_apply_transducer():
    assert D.apply_transducer("az") == "aaa"
    assert D.apply_transducer("bz") == "zb"
    assert D.apply_transducer("azbzaz") == "aaazbaaa"
    with pytest.raises(ValueError):
        D.apply_transducer("azb")
    with pytest.raises(ValueError):
        D.apply_transducer("ab")


def test_gen_transduction_shapes_and_determinism():
    train1, test1 = D.gen_transduction(7)
    train2, test2 = D.gen_transduction(7)
    assert len(train1) == D.TRANSDUCTION_TRAIN_SIZE
    assert len(test1) == D.TRANSDUCTION_TEST_SIZE
    assert [e.src for e in train1] == [e.src for e in train2]
    assert [e.src for e in test1] == [e.src for e in test2]
    # train sources unique, lengths 2..20; test lengths 22/24
    srcs = ["".join(e.src) for e in train1]
    assert len(set(srcs)) == len(srcs)
    assert {len(s) for s in srcs} == set(range(2, 21, 2))
    assert {len("".join(e.tgt)) > 0 for e in train1} == {True}
    assert {len("".join(e.src)) for e in test1} == {22, 24}


def test_gen_transduction_targets_follow_transducer():
    train, test = D.gen_transduction(3)
    for ex in list(train)[:50] + list(test)[:20]:
        assert "".join(ex.tgt) == D.apply_transducer("".join(ex.src))


def test_gen_transduction_seed_changes_sampled_tail():
    a, _ = D.gen_transduction(1)
    b, _ = D.gen_transduction(2)
    assert [e.src for e in a] != [e.src for e in b]


def test_corpus_roundtrip_byte_identical(tmp_path):
    train, _ = D.gen_toy_treebank(5, D.TreebankParams(n_train=8, n_test=2))
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    D.save_corpus(train, p1)
    loaded = D.load_corpus(p1)
    assert loaded.meta["task"] == "parsing"
    D.save_corpus(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    for ex, ex2 in zip(train, loaded):
        assert ex.src == ex2.src and ex.tgt == ex2.tgt and ex.payload == ex2.payload


def test_save_corpus_refuses_overwrite(tmp_path):
    train, _ = D.gen_tagging(5, D.TaggingParams(n_train=2, n_test=1))
    p = tmp_path / "c.jsonl"
    D.save_corpus(train, p)
    with pytest.raises(FileExistsError):
        D.save_corpus(train, p)
    D.save_corpus(train, p, force=True)


def test_treebank_targets_are_feasible():
    params = D.TreebankParams(n_train=30, n_test=10)
    train, test = D.gen_toy_treebank(9, params)
    for ex in list(train) + list(test):
        assert sr_loss(ex.tgt, len(ex.src)) == 0.0
    src_v, tgt_v = D.treebank_vocabs(params)
    for ex in train:
        src_v.encode(ex.src)
        tgt_v.encode(ex.tgt)


def test_treebank_split_lengths():
    params = D.TreebankParams(n_train=20, n_test=10)
    train, test = D.gen_toy_treebank(2, params)
    assert all(params.train_leaves[0] <= len(e.src) <= params.train_leaves[1] for e in train)
    assert all(params.test_leaves[0] <= len(e.src) <= params.test_leaves[1] for e in test)


def test_tagging_gold_satisfies_constraint():
    params = D.TaggingParams(n_train=25, n_test=10)
    train, test = D.gen_tagging(11, params)
    for ex in list(train) + list(test):
        parse = SpanSet(frozenset(tuple(s) for s in ex.payload["spans"]), len(ex.src))
        assert span_agreement_loss(ex.tgt, parse).total == 0.0


def test_tagging_vocab_ids_match_schema():
    src, tgt, schema = D.tagging_vocabs()
    assert isinstance(schema, BioSchema)
    for i in schema.tag_ids:
        assert tgt.id(schema.labels[i]) == i


def test_corrupt_spans_rho_zero_is_identity():
    spans = [[0, 2], [2, 5]]
    assert D.corrupt_spans(spans, 0.0, 0, 5) == [(0, 2), (2, 5)]


def test_corrupt_spans_rho_one_changes_every_span():
    spans = [(0, 3), (3, 6), (2, 4)]
    for seed in range(20):
        out = D.corrupt_spans(spans, 1.0, seed, 6)
        assert all(s not in spans for s in out)


def test_corrupt_spans_bounds_and_validity():
    for seed in range(10):
        out = D.corrupt_spans([(0, 1), (0, 6), (4, 6)], 1.0, seed, 6)
        for i, j in out:
            assert 0 <= i < j <= 6


def test_corrupt_spans_deterministic():
    spans = [(0, 3), (1, 4)]
    assert D.corrupt_spans(spans, 0.5, 42, 5) == D.corrupt_spans(spans, 0.5, 42, 5)


def test_corrupt_spans_rejects_bad_rate():
    with pytest.raises(ValueError):
        D.corrupt_spans([(0, 1)], 1.5, 0, 3)


@given(st.integers(0, 500), st.integers(2, 7))
@settings(max_examples=30, deadline=None)
def test_random_tree_covers_leaves(seed, n):
    rng = np.random.default_rng(seed)
    t = D._root_tree(rng, n, 3, 3)
    assert t.leaves() == list(range(n))
    assert tree_spans(t).spans  # at least the root span
