"""JSONL readers and writers for every dataset record type.

Schema violations raise ``IngestionError`` carrying the file and 1-based line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import ContractError, IngestionError
from ..speaker import Message, check_channel
from ..success import LABELS, AdvisingDialogue
from ..text import CandidatePool, DialogueContext, Turn


@dataclass
class RankingExample:
    context: DialogueContext
    pool: CandidatePool


@dataclass
class EntangledExample:
    """A response-selection example over a raw multi-party channel."""
    messages: list
    speaker: str
    pool: CandidatePool


@dataclass
class Channel:
    id: str
    messages: list
    reply_to: list


def write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n")


def read_jsonl(path):
    """Yield ``(line_number, record)`` for every non-blank line."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise IngestionError(path, lineno, "record is not a JSON object")
            yield lineno, rec


def _require(rec, key, kind, path, lineno):
    if key not in rec:
        raise IngestionError(path, lineno, f"missing field {key!r}")
    value = rec[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise IngestionError(path, lineno, f"field {key!r} must be {name}")
    return value


def _pool(rec, path, lineno):
    cands = _require(rec, "candidates", list, path, lineno)
    gold = _require(rec, "gold", list, path, lineno)
    if not all(isinstance(c, str) for c in cands):
        raise IngestionError(path, lineno, "candidates must be strings")
    try:
        return CandidatePool(str(rec["id"]), tuple(cands), tuple(int(g) for g in gold))
    except (ContractError, ValueError, TypeError) as exc:
        raise IngestionError(path, lineno, str(exc)) from None


def _message(rec, path, lineno):
    try:
        return Message(rec["id"], float(_require(rec, "ts", (int, float), path, lineno)),
                       _require(rec, "from", str, path, lineno), rec.get("to"),
                       _require(rec, "text", str, path, lineno), rec.get("conv"))
    except KeyError as exc:
        raise IngestionError(path, lineno, f"missing field {exc.args[0]!r}") from None
    except ContractError as exc:
        raise IngestionError(path, lineno, str(exc)) from None


def read_ranking(path) -> list[RankingExample]:
    out = []
    for lineno, rec in read_jsonl(path):
        _require(rec, "id", (str, int), path, lineno)
        turns = _require(rec, "turns", list, path, lineno)
        try:
            ctx = DialogueContext(tuple(Turn(t["speaker"], tuple(t["utterances"])) for t in turns))
        except (KeyError, TypeError) as exc:
            raise IngestionError(path, lineno, f"malformed turn ({exc})") from None
        except ContractError as exc:
            raise IngestionError(path, lineno, str(exc)) from None
        out.append(RankingExample(ctx, _pool(rec, path, lineno)))
    return out


def read_entangled(path) -> list[EntangledExample]:
    out = []
    for lineno, rec in read_jsonl(path):
        _require(rec, "id", (str, int), path, lineno)
        msgs = [_message(m, path, lineno) for m in _require(rec, "messages", list, path, lineno)]
        try:
            check_channel(msgs)
        except ContractError as exc:
            raise IngestionError(path, lineno, str(exc)) from None
        out.append(EntangledExample(msgs, _require(rec, "speaker", str, path, lineno),
                                    _pool(rec, path, lineno)))
    return out


def read_channels(path) -> list[Channel]:
    """Channel records, grouped by the optional ``channel`` field in order of
    first appearance."""
    groups: dict = {}
    for lineno, rec in read_jsonl(path):
        _require(rec, "id", (str, int), path, lineno)
        key = str(rec.get("channel", "default"))
        msgs, replies, lines, ids = groups.setdefault(key, ([], [], [], set()))
        m = _message(rec, path, lineno)
        if m.id in ids:
            raise IngestionError(path, lineno, f"duplicate message id {m.id!r} in channel {key!r}")
        if msgs and m.timestamp < msgs[-1].timestamp:
            raise IngestionError(path, lineno, f"channel {key!r} is not chronological")
        msgs.append(m)
        replies.append(rec.get("reply_to"))
        lines.append(lineno)
        ids.add(m.id)
    out = []
    for key, (msgs, replies, lines, _) in groups.items():
        seen = set()
        for m, r, lineno in zip(msgs, replies, lines):
            if r is not None and r not in seen and r != m.id:
                raise IngestionError(path, lineno, f"message {m.id!r} replies to {r!r}, "
                                                   "which is not an earlier message of its channel")
            seen.add(m.id)
        out.append(Channel(key, msgs, replies))
    return out


def read_advising(path) -> list[AdvisingDialogue]:
    out = []
    for lineno, rec in read_jsonl(path):
        _require(rec, "id", (str, int), path, lineno)
        utts = _require(rec, "utterances", list, path, lineno)
        texts, labels, speakers = [], [], []
        for u in utts:
            if not isinstance(u, dict) or "text" not in u:
                raise IngestionError(path, lineno, "utterance needs a 'text' field")
            label = u.get("label", "none")
            if label not in LABELS:
                raise IngestionError(path, lineno, f"unknown label {label!r}")
            texts.append(u["text"])
            labels.append(LABELS[label])
            speakers.append(u.get("speaker"))
        if not texts:
            raise IngestionError(path, lineno, "dialogue has no utterances")
        out.append(AdvisingDialogue(str(rec["id"]), texts, labels, speakers))
    return out


def read_paraphrases(path) -> dict:
    table = {}
    for lineno, rec in read_jsonl(path):
        text = _require(rec, "text", str, path, lineno)
        table[text] = list(_require(rec, "paraphrases", list, path, lineno))
    return table


def read_sentence_pairs(path) -> list[tuple]:
    return [(_require(rec, "a", str, path, n), _require(rec, "b", str, path, n))
            for n, rec in read_jsonl(path)]


# -- writers used by the synthetic generators ---------------------------------------

def ranking_record(rid, context: DialogueContext, candidates, gold) -> dict:
    return {"id": rid, "turns": [{"speaker": t.speaker, "utterances": list(t.utterances)}
                                 for t in context.turns],
            "candidates": list(candidates), "gold": list(gold)}


def message_record(m: Message, **extra) -> dict:
    rec = {"id": m.id, "ts": m.timestamp, "from": m.spoken_from, "to": m.spoken_to,
           "text": m.text, "conv": m.conv}
    rec.update(extra)
    return rec


def advising_record(d: AdvisingDialogue) -> dict:
    names = {v: k for k, v in LABELS.items()}
    speakers = d.speakers or [None] * len(d.utterances)
    return {"id": d.id, "utterances": [{"speaker": s, "text": t, "label": names[l]}
                                       for s, t, l in zip(speakers, d.utterances, d.labels)]}
