"""Speaker-aware context selection for entangled multi-party channels."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ContractError
from .text import ComposedInput, DialogueContext, Turn, Vocab, compose_pair

_ADDRESS_RE = re.compile(r"^\s*(\S+?)\s*[:,]\s*(.*)$", re.DOTALL)


@dataclass(frozen=True)
class Message:
    id: object
    timestamp: float
    spoken_from: str
    spoken_to: str | None
    text: str
    conv: object = None

    def __post_init__(self):
        if not self.spoken_from:
            raise ContractError(f"message {self.id!r} has no author")


def extract_spoken_to(raw: str, participants: Iterable[str]):
    """Split a leading ``name:`` or ``name,`` address off ``raw``.

    Returns ``(addressee, text)``; the addressee is None (and the text left
    untouched) unless the prefix names a known participant.
    """
    m = _ADDRESS_RE.match(raw)
    if m and m.group(1) in set(participants):
        return m.group(1), m.group(2)
    return None, raw


def check_channel(channel: Sequence[Message]):
    seen = set()
    for a, b in zip(channel, channel[1:]):
        if b.timestamp < a.timestamp:
            raise ContractError(f"channel not chronological at message {b.id!r}")
    for m in channel:
        if m.id in seen:
            raise ContractError(f"duplicate message id {m.id!r}")
        seen.add(m.id)


def select_context(channel: Sequence[Message], response_speaker: str) -> list[Message]:
    """Messages spoken by or addressed to ``response_speaker``, in channel order."""
    return [m for m in channel
            if m.spoken_from == response_speaker or m.spoken_to == response_speaker]


def role_of(message: Message, response_speaker: str) -> int:
    if message.spoken_from == response_speaker:
        return 0
    if message.spoken_to == response_speaker:
        return 1
    raise ContractError(f"message {message.id!r} does not involve {response_speaker!r}")


def selected_context(selected: Sequence[Message], response_speaker: str) -> DialogueContext:
    """Group a selection into turns at every role change."""
    runs: list[list[Message]] = []
    last_role = None
    for m in selected:
        role = role_of(m, response_speaker)
        if role != last_role:
            runs.append([])
            last_role = role
        runs[-1].append(m)
    turns = []
    for run in runs:
        role = role_of(run[0], response_speaker)
        speaker = response_speaker if role == 0 else f"<to:{response_speaker}>"
        turns.append(Turn(speaker, tuple(m.text for m in run),
                          senders=tuple(m.spoken_from for m in run),
                          addressees=tuple(m.spoken_to for m in run)))
    return DialogueContext(tuple(turns))


def build_entangled_input(selected: Sequence[Message], response: str, response_speaker: str,
                          vocab: Vocab, max_len: int = 512, pad: bool = True) -> ComposedInput:
    """Compose a response pair over a speaker-selected context with
    role-based switch ids."""
    ctx = selected_context(selected, response_speaker)
    return compose_pair(ctx, response, vocab, max_len, "role-based", response_speaker, pad=pad)
