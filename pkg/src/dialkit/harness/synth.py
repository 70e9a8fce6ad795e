"""Small synthetic corpora that exercise one mechanism each.

Every generator is a pure function of ``(size, seed)`` and validates its own
construction before returning.
"""

from __future__ import annotations

from pathlib import Path

from ..errors import ContractError
from ..nn.rng import Rng
from ..speaker import Message, select_context
from ..success import ACCEPT, NO_DECISION, REJECT, AdvisingDialogue
from ..text import DialogueContext, Turn
from .data import advising_record, message_record, ranking_record, write_jsonl

KINDS = ("ranking", "parity-switch", "entangled-channel", "advising", "linkable-channel")

FILLER = ("the a of to in it is that for on with as at by this we you they be have "
          "from or one had not but what all were when there can an your which their").split()
TOPICS = ("apple river stone cloud piano tiger lemon candle rocket forest silver garden "
          "castle violin desert marble falcon harbor meadow copper").split()


def _words(rng: Rng, vocab, low, high):
    n = int(rng.integers(low, high + 1))
    return [vocab[int(i)] for i in rng.integers(0, len(vocab), n)]


# -- ranking -------------------------------------------------------------------------

def ranking(size: int, seed: int, pool_size: int = 10) -> list[dict]:
    """Two to four alternating turns; the gold response repeats the topic word
    of the context, the negatives carry other topics."""
    if pool_size < 2 or pool_size > len(TOPICS):
        raise ContractError(f"pool_size must lie in [2, {len(TOPICS)}]")
    rng = Rng(seed).child("ranking")
    out = []
    for n in range(size):
        r = rng.child(n)
        topic = int(r.integers(0, len(TOPICS)))
        turns = []
        n_turns = int(r.integers(2, 5))
        for k in range(n_turns):
            utts = [" ".join(_words(r, FILLER, 2, 5)) for _ in range(int(r.integers(1, 3)))]
            turns.append(Turn("AB"[k % 2], tuple(utts)))
        # topic word goes somewhere in the last turn
        last = list(turns[-1].utterances)
        last[-1] = f"{last[-1]} {TOPICS[topic]}"
        turns[-1] = Turn(turns[-1].speaker, tuple(last))
        others = [t for t in r.permutation(len(TOPICS)).tolist() if t != topic][: pool_size - 1]
        cands = [f"{TOPICS[t]} " + " ".join(_words(r, FILLER, 1, 4)) for t in [topic] + others]
        order = r.permutation(pool_size).tolist()
        shuffled = [cands[i] for i in order]
        gold = order.index(0)
        out.append(ranking_record(f"rank-{n}", DialogueContext(tuple(turns)), shuffled, [gold]))
    return out


# -- parity-switch -----------------------------------------------------------------------

PARITY_RESPONSES = ("even", "odd")
PARITY_MARKER = "key"


def parity_of(record: dict) -> int:
    """Index of the turn holding the marker, mod 2 (the generator's oracle)."""
    hits = [k for k, t in enumerate(record["turns"])
            if any(PARITY_MARKER in u.split() for u in t["utterances"])]
    if len(hits) != 1:
        raise ContractError(f"record {record['id']}: marker appears in {len(hits)} turns")
    return hits[0] % 2


def parity_switch(size: int, seed: int, min_turns: int = 4, max_turns: int = 12) -> list[dict]:
    """The marker sits in one turn; the gold response names that turn's
    parity. Nothing but the turn index distinguishes the two answers, so the
    alternating switch ids are the only direct cue. Labels are balanced."""
    rng = Rng(seed).child("parity")
    out = []
    for n in range(size):
        r = rng.child(n)
        want = n % 2
        n_turns = int(r.integers(min_turns, max_turns + 1))
        choices = [k for k in range(n_turns) if k % 2 == want]
        marked = choices[int(r.integers(0, len(choices)))]
        turns = []
        for k in range(n_turns):
            utts = [_words(r, FILLER, 1, 3) for _ in range(int(r.integers(1, 3)))]
            if k == marked:
                u = int(r.integers(0, len(utts)))
                utts[u].insert(int(r.integers(0, len(utts[u]) + 1)), PARITY_MARKER)
            turns.append(Turn("AB"[k % 2], tuple(" ".join(w) for w in utts)))
        rec = ranking_record(f"parity-{n}", DialogueContext(tuple(turns)), PARITY_RESPONSES, [want])
        if parity_of(rec) != want:
            raise AssertionError("parity generator self-check failed")
        out.append(rec)
    return out


# -- entangled channel -------------------------------------------------------------------

def _names(prefix, count):
    return [f"{prefix}{i}" for i in range(count)]


def entangled_channel(size: int, seed: int, conversations: int = 3, length: int = 6,
                      pool_size: int = 10) -> list[dict]:
    """Interleaved two-party conversations with disjoint speakers. Every message
    is addressed to its partner (``to`` field and ``name:`` prefix). The record
    asks for the next message of one conversation."""
    if conversations < 1:
        raise ContractError("need at least one conversation")
    rng = Rng(seed).child("entangled")
    out = []
    for n in range(size):
        r = rng.child(n)
        users = _names(f"u{n}x", 2 * conversations)
        pairs = [(users[2 * c], users[2 * c + 1]) for c in range(conversations)]
        topics = r.permutation(len(TOPICS))[:conversations].tolist()
        schedule = [c for c in range(conversations) for _ in range(length)]
        schedule = [schedule[i] for i in r.permutation(len(schedule)).tolist()]
        turn_of = [0] * conversations
        msgs = []
        for i, c in enumerate(schedule):
            a, b = pairs[c]
            frm, to = (a, b) if turn_of[c] % 2 == 0 else (b, a)
            turn_of[c] += 1
            body = " ".join(_words(r, FILLER, 2, 4) + [TOPICS[topics[c]]])
            msgs.append(Message(f"m{i}", float(10 * i), frm, to, f"{to}: {body}", conv=c))
        target = int(r.integers(0, conversations))
        a, b = pairs[target]
        speaker = a if turn_of[target] % 2 == 0 else b
        answer = f"{TOPICS[topics[target]]} " + " ".join(_words(r, FILLER, 1, 3))
        negatives = [f"{TOPICS[t]} " + " ".join(_words(r, FILLER, 1, 3))
                     for t in r.permutation(len(TOPICS)).tolist() if t != topics[target]][: pool_size - 1]
        cands = [answer] + negatives
        order = r.permutation(len(cands)).tolist()
        gold_conv = [m for m in msgs if m.conv == target]
        speakers = [set(p) for p in pairs]
        if any(speakers[i] & speakers[j] for i in range(conversations) for j in range(i)):
            raise AssertionError("speaker sets overlap")
        if select_context(msgs, speaker) != gold_conv:
            raise AssertionError("entangled generator self-check failed")
        out.append({"id": f"ent-{n}", "messages": [message_record(m) for m in msgs],
                    "speaker": speaker, "target_conv": target,
                    "candidates": [cands[i] for i in order], "gold": [order.index(0)]})
    return out


# -- advising ----------------------------------------------------------------------------

_YES = ("sure i will take it", "yes that sounds great", "great i will sign up")
_NO = ("no i do not like that", "not that one please", "i would rather not")
_CHAT = ("what else do you know", "i need one more course", "thanks for the help",
         "what do you suggest", "hello i need advice")


def advising(size: int, seed: int, max_turns: int = 8) -> tuple[list[dict], list[dict]]:
    """Student/advisor dialogues. An advisor suggestion is labelled by the
    student's reply that follows it: yes -> accept, no -> reject, anything else
    -> none. Returns ``(dialogue records, paraphrase records)``."""
    rng = Rng(seed).child("advising")
    out = []
    for n in range(size):
        r = rng.child(n)
        utts = [_CHAT[int(r.integers(0, len(_CHAT)))]]
        labels, speakers = [NO_DECISION], ["student"]
        for _ in range(int(r.integers(1, max_turns // 2 + 1))):
            suggest = r.random() < 0.7
            reply = int(r.integers(0, 3)) if suggest else 2
            if suggest:
                utts.append(f"you could take course {TOPICS[int(r.integers(0, len(TOPICS)))]}")
            else:
                utts.append("let me check the catalog")
            labels.append((ACCEPT, REJECT, NO_DECISION)[reply])
            options = (_YES, _NO, _CHAT)[reply]
            utts.append(options[int(r.integers(0, len(options)))])
            labels.append(NO_DECISION)
            speakers += ["advisor", "student"]
        out.append(advising_record(AdvisingDialogue(f"adv-{n}", utts, labels, speakers)))
    paraphrases = [{"text": s, "paraphrases": [s.replace("i ", "i really ", 1)]} for s in _YES + _NO]
    return out, paraphrases


# -- linkable channel --------------------------------------------------------------------

def linkable_channel(size: int, seed: int, conversations: int = 3, messages: int = 60,
                     users_per_conv: int = 3, user_pool: int = 30) -> list[dict]:
    """Channels of interleaved conversations with reply links. A reply is
    addressed to the author of its antecedent and shares the conversation's
    topic word; each conversation opens with an unaddressed message.

    Users come from one shared pool, so names recur across channels but say
    nothing about conversation identity on their own."""
    if conversations * users_per_conv > user_pool:
        raise ContractError("user pool too small for disjoint conversations")
    rng = Rng(seed).child("linkable")
    pool = _names("user", user_pool)
    out = []
    for n in range(size):
        r = rng.child(n)
        drawn = [pool[i] for i in r.permutation(user_pool)[:conversations * users_per_conv].tolist()]
        users = [drawn[c * users_per_conv:(c + 1) * users_per_conv] for c in range(conversations)]
        topics = r.permutation(len(TOPICS))[:conversations].tolist()
        base = [c for c in range(conversations) for _ in range(messages // conversations)]
        base += [int(r.integers(0, conversations)) for _ in range(messages - len(base))]
        schedule = [base[i] for i in r.permutation(len(base)).tolist()]
        last_by_conv: dict = {}
        t = 0.0
        for i, c in enumerate(schedule):
            t += float(r.integers(1, 30))
            mid = f"ch{n}-m{i}"
            prev = last_by_conv.get(c)
            if prev is None:
                frm = users[c][0]
                to, reply_to = None, None
                body = ["hi", "anyone", "know", TOPICS[topics[c]]]
            else:
                frm = [u for u in users[c] if u != prev["from"]][int(r.integers(0, users_per_conv - 1))]
                to, reply_to = prev["from"], prev["id"]
                body = [f"{to}:"] + _words(r, FILLER, 1, 3) + [TOPICS[topics[c]]]
            rec = message_record(Message(mid, t, frm, to, " ".join(body), conv=c),
                                 channel=f"ch{n}", reply_to=reply_to)
            out.append(rec)
            last_by_conv[c] = rec
    return out


# -- files -------------------------------------------------------------------------

def generate(kind: str, size: int, seed: int):
    if kind not in KINDS:
        raise ContractError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")
    if kind == "ranking":
        return ranking(size, seed)
    if kind == "parity-switch":
        return parity_switch(size, seed)
    if kind == "entangled-channel":
        return entangled_channel(size, seed)
    if kind == "advising":
        return advising(size, seed)[0]
    return linkable_channel(size, seed)


SPLITS = ("train", "valid", "test")


def make_synthetic(kind: str, size: int, seed: int, out_dir, overfit: bool = False) -> dict:
    """Write ``train/valid/test.jsonl`` under ``out_dir``. Each split is drawn
    from its own seed; with ``overfit`` all three are the training set."""
    out_dir = Path(out_dir)
    paths = {}
    for k, split in enumerate(SPLITS):
        records = generate(kind, size, seed if overfit else seed + 1000 * k)
        paths[split] = out_dir / f"{split}.jsonl"
        write_jsonl(paths[split], records)
    if kind == "advising":
        paths["paraphrases"] = out_dir / "paraphrases.jsonl"
        write_jsonl(paths["paraphrases"], advising(1, seed)[1])
    return {k: str(v) for k, v in paths.items()}
