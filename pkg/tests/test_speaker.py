import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialkit.errors import ContractError
from dialkit.speaker import (Message, build_entangled_input, check_channel, extract_spoken_to,
                             select_context, selected_context)
from dialkit.text import CLS_ID, EOT_ID, EOU_ID, SEP_ID, build_vocab


def msg(i, frm, to=None, text="hi", t=None):
    return Message(i, float(i if t is None else t), frm, to, text)


def test_extract_spoken_to():
    assert extract_spoken_to("alice: try sudo", {"alice", "bob"}) == ("alice", "try sudo")
    assert extract_spoken_to("bob, look", {"bob"}) == ("bob", "look")
    assert extract_spoken_to("try sudo", {"alice"}) == (None, "try sudo")
    assert extract_spoken_to("alice: hi", {"bob"}) == (None, "alice: hi")


def test_select_context_rule():
    ch = [msg(0, "a"), msg(1, "b", "a"), msg(2, "c", "d")]
    assert select_context(ch, "a") == ch[:2]
    assert select_context(ch, "z") == []
    own = [msg(0, "a"), msg(1, "a", "b")]
    assert select_context(own, "a") == own


def test_unaddressed_messages_from_others_are_dropped():
    ch = [msg(0, "b"), msg(1, "a")]
    assert select_context(ch, "a") == [ch[1]]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from([None, "a", "b", "c", "d"])), max_size=20),
       st.sampled_from("abcd"))
def test_selection_is_subsequence(pairs, speaker):
    ch = [msg(i, f, t) for i, (f, t) in enumerate(pairs)]
    sel = select_context(ch, speaker)
    it = iter(ch)
    assert all(any(m is c for c in it) for m in sel)


def test_channel_checks():
    with pytest.raises(ContractError):
        check_channel([msg(0, "a", t=5), msg(1, "b", t=2)])
    with pytest.raises(ContractError):
        check_channel([msg(0, "a"), msg(0, "b")])
    with pytest.raises(ContractError):
        Message(0, 0.0, "", None, "x")


def test_roles_group_into_turns():
    sel = [msg(0, "a"), msg(1, "a"), msg(2, "b", "a"), msg(3, "a")]
    ctx = selected_context(sel, "a")
    assert [len(t.utterances) for t in ctx.turns] == [2, 1, 1]


VOCAB = build_vocab(["hi there yes no ok"])


def test_single_role_selection_all_zero_switch():
    sel = [msg(0, "a", text="hi"), msg(1, "a", "b", text="there")]
    inp = build_entangled_input(sel, "ok", "a", VOCAB, 32, pad=False)
    assert np.all(inp.switch_ids == 0)


def test_alternating_roles_alternate_switch():
    sel = [msg(0, "a", text="hi"), msg(1, "b", "a", text="yes"), msg(2, "a", text="no")]
    inp = build_entangled_input(sel, "ok", "a", VOCAB, 32, pad=False)
    tok, sw = inp.token_ids.tolist(), inp.switch_ids.tolist()
    assert tok[:10] == [CLS_ID, VOCAB.id("hi"), EOU_ID, EOT_ID, VOCAB.id("yes"), EOU_ID, EOT_ID,
                        VOCAB.id("no"), EOU_ID, EOT_ID]
    assert sw[1:4] == [0, 0, 0] and sw[4:7] == [1, 1, 1] and sw[7:10] == [0, 0, 0]


def test_empty_selection():
    inp = build_entangled_input([], "ok", "a", VOCAB, 16, pad=False)
    assert inp.token_ids.tolist() == [CLS_ID, SEP_ID, VOCAB.id("ok"), SEP_ID]
