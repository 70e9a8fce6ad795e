import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialkit.errors import ConfigurationError, ContractError, SamplingError
from dialkit.nn import Rng
from dialkit.text import (CLS_ID, EOT_ID, EOU_ID, MASK_ID, PAD_ID, SEP_ID, STRUCTURAL_IDS, CandidatePool,
                          DialogueContext, Turn, Vocab, assign_switch_ids, build_vocab, collate,
                          compose_pair, compose_sentences, dynamic_negative_sample, mlm_mask, nsp_pairs,
                          tokenize)


def ctx(*turns):
    return DialogueContext(tuple(Turn(s, tuple(u)) for s, u in turns))


def test_tokenize_examples():
    assert tokenize("Hi!") == ["hi", "!"]
    assert tokenize("") == []
    assert tokenize("a  b") == ["a", "b"]
    assert tokenize("Don't, stop.") == ["don", "'", "t", ",", "stop", "."]


@given(st.text(max_size=40))
def test_tokenize_never_empty_tokens(text):
    assert all(tok and not tok.isspace() for tok in tokenize(text))


def test_vocab_threshold_and_layout():
    v = build_vocab(["a a b"], min_count=2)
    assert "a" in v and "b" not in v
    assert v.id("[CLS]") == 2 and v.id("b") == 1
    assert build_vocab(["x y y z"]) == build_vocab(["x y y z"])
    assert build_vocab(["x y y z"]).itos[7:] == ["y", "x", "z"]


def test_vocab_min_count_validated():
    with pytest.raises(ConfigurationError):
        build_vocab(["a"], min_count=0)


def test_vocab_save_load(tmp_path):
    v = build_vocab(["one two two"])
    v.save(tmp_path / "v.txt")
    assert Vocab.load(tmp_path / "v.txt") == v


def test_context_rejects_repeated_speaker():
    with pytest.raises(ContractError):
        ctx(("a", ["x"]), ("a", ["y"]))
    with pytest.raises(ContractError):
        Turn("a", ())


def test_compose_layout():
    v = build_vocab(["hello hi"])
    inp = compose_pair(ctx(("A", ["hello"])), "hi", v, max_len=32)
    n = inp.length
    assert inp.token_ids[:n].tolist() == [CLS_ID, v.id("hello"), EOU_ID, EOT_ID, SEP_ID, v.id("hi"), SEP_ID]
    assert inp.segment_ids[:n].tolist() == [0, 0, 0, 0, 0, 1, 1]
    assert len(inp) == 32 and np.all(inp.token_ids[n:] == PAD_ID) and np.all(inp.attention_mask[n:] == 0)
    inp.check()


def test_empty_response():
    v = build_vocab(["hello"])
    inp = compose_pair(ctx(("A", ["hello"])), "", v, max_len=16, pad=False)
    assert inp.token_ids[-2:].tolist() == [SEP_ID, SEP_ID]


def test_truncation_keeps_response():
    v = build_vocab(["w%d" % i for i in range(50)] + ["r1 r2 r3"])
    long_ctx = ctx(("A", [" ".join("w%d" % i for i in range(50))]))
    inp = compose_pair(long_ctx, "r1 r2 r3", v, max_len=16, pad=False)
    toks = inp.token_ids.tolist()
    assert len(toks) == 16
    assert toks[-4:] == [v.id("r1"), v.id("r2"), v.id("r3"), SEP_ID]
    assert v.id("w0") not in toks and v.id("w49") in toks


def test_max_len_floor():
    with pytest.raises(ConfigurationError):
        compose_pair(ctx(("A", ["x"])), "y", build_vocab(["x y"]), max_len=7)


def test_switch_turn_alternating():
    c = ctx(("A", ["a"]), ("B", ["b", "c"]), ("A", ["d"]), ("B", ["e"]))
    assert [t[0] for t in assign_switch_ids(c)] == [0, 1, 0, 1]
    assert assign_switch_ids(ctx(("A", ["x", "y"]))) == [[0, 0]]


def test_switch_role_based():
    turn = Turn("x", ("mine", "yours"), senders=("bob", "al"), addressees=(None, "bob"))
    assert assign_switch_ids(DialogueContext((turn,)), "role-based", "bob") == [[0, 1]]
    with pytest.raises(ContractError):
        assign_switch_ids(DialogueContext((turn,)), "role-based", "carol")
    with pytest.raises(ConfigurationError):
        assign_switch_ids(DialogueContext((turn,)), "mystery")


contexts = st.lists(st.lists(st.text("abc ", min_size=1, max_size=8), min_size=1, max_size=3),
                    min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(contexts, st.text("abc ", max_size=12), st.integers(8, 40))
def test_compose_invariants(turns, response, max_len):
    c = ctx(*[("AB"[k % 2], u) for k, u in enumerate(turns)])
    v = build_vocab(["a b c"])
    inp = compose_pair(c, response, v, max_len=max_len)
    inp.check()
    n = inp.length
    tok, sw = inp.token_ids[:n], inp.switch_ids[:n]
    sep = int(np.flatnonzero(tok == SEP_ID)[0])
    # switch ids inside sentence A change only right after an [EOT]
    for i in range(1, sep):
        if sw[i] != sw[i - 1]:
            assert tok[i - 1] == EOT_ID
    assert np.all(sw[sep + 1:] == 0)


def test_collate_trims_to_longest():
    v = build_vocab(["a b c"])
    xs = [compose_pair(ctx(("A", ["a"])), "b", v, 32), compose_pair(ctx(("A", ["a b c"])), "b c", v, 32)]
    batch = collate(xs)
    assert batch["token_ids"].shape == (2, xs[1].length)
    assert batch["attention_mask"][0].sum() == xs[0].length


def test_compose_sentences():
    v = build_vocab(["a b"])
    inp = compose_sentences("a", "b", v)
    assert inp.token_ids.tolist() == [CLS_ID, v.id("a"), SEP_ID, v.id("b"), SEP_ID]
    assert inp.segment_ids.tolist() == [0, 0, 0, 1, 1]


# -- samplers ----------------------------------------------------------------------

def _ids(v, n=200):
    return [CLS_ID] + [7 + (i % (len(v) - 7)) for i in range(n)] + [SEP_ID]


def test_mlm_zero_rate():
    v = build_vocab(["a b c d"])
    ids = _ids(v)
    masked, pos, tgt = mlm_mask(ids, v, 0.0, Rng(1))
    assert masked.tolist() == ids and len(pos) == 0


def test_mlm_never_selects_structural():
    v = build_vocab(["a b c d"])
    ids = [CLS_ID, 7, EOU_ID, 8, EOT_ID, SEP_ID, 9, SEP_ID, PAD_ID]
    for s in range(300):
        _, pos, _ = mlm_mask(ids, v, 0.9, Rng(s))
        assert not any(ids[p] in STRUCTURAL_IDS for p in pos)


def test_mlm_count_within_binomial_band():
    v = build_vocab(["a b c d"])
    ids = _ids(v, 100)
    counts = [len(mlm_mask(ids, v, 0.15, Rng(s))[1]) for s in range(1000)]
    mean, sigma = 100 * 0.15, np.sqrt(100 * 0.15 * 0.85)
    assert abs(np.mean(counts) - mean) <= 3 * sigma / np.sqrt(1000)


def test_mlm_targets_are_originals():
    v = build_vocab(["a b c d"])
    ids = _ids(v)
    masked, pos, tgt = mlm_mask(ids, v, 0.5, Rng(2))
    assert np.array_equal(tgt, np.array(ids)[pos])
    assert (masked[pos] == MASK_ID).any()


def test_nsp_pairs():
    corpus = [("q1", "a1"), ("q2", "a2")]
    out = nsp_pairs(corpus, Rng(0))
    assert out == [("q1", "a1", 1), ("q1", "a2", 0), ("q2", "a2", 1), ("q2", "a1", 0)]
    bigger = [(f"q{i}", f"a{i}") for i in range(9)]
    labelled = nsp_pairs(bigger, Rng(3))
    assert sum(l for *_, l in labelled) == 9 and len(labelled) == 18
    for (a, b, label), (qa, qb) in zip(labelled[1::2], bigger):
        assert label == 0 and b != qb
    with pytest.raises(SamplingError):
        nsp_pairs([("q", "a")])


def test_dynamic_negatives():
    pool = CandidatePool("c7", [f"r{i}" for i in range(100)], [3])
    assert dynamic_negative_sample(CandidatePool("x", ["a", "b"]), 0, 1) == []
    pairs = [dynamic_negative_sample(pool, e, 11) for e in range(5)]
    assert all(p[0].candidate == 3 and p[0].label == 1 for p in pairs)
    negs = {p[1].candidate for p in pairs}
    assert len(negs) >= 2 and 3 not in negs
    assert dynamic_negative_sample(pool, 2, 11) == pairs[2]


def test_pool_contracts():
    with pytest.raises(ContractError):
        CandidatePool("x", ["a"] * 101)
    with pytest.raises(ContractError):
        CandidatePool("x", ["a", "b"], [2])
    with pytest.raises(ContractError):
        dynamic_negative_sample(CandidatePool("x", ["a"], [0]), 0, 0)
