"""Tokenisation, vocabulary, pair composition and pretraining samplers."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, SamplingError
from .nn.rng import Rng, stable_hash

PAD, UNK, CLS, SEP, EOU, EOT, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[EOU]", "[EOT]", "[MASK]"
RESERVED = (PAD, UNK, CLS, SEP, EOU, EOT, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, EOU_ID, EOT_ID, MASK_ID = range(7)
STRUCTURAL_IDS = frozenset({PAD_ID, CLS_ID, SEP_ID, EOU_ID, EOT_ID})

SWITCH_MODES = ("turn-alternating", "role-based")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and detach punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.itos:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            items = [line.rstrip("\n") for line in fh]
        if tuple(items[: len(RESERVED)]) != RESERVED:
            raise ContractError(f"{path}: reserved token layout mismatch")
        return cls(items[len(RESERVED):])


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocab:
    """Tokens seen at least ``min_count`` times, most frequent first, ties
    broken lexicographically, after the seven reserved entries."""
    if min_count < 1:
        raise ConfigurationError("min_count must be >= 1")
    counts = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(kept)


@dataclass(frozen=True)
class Turn:
    """One speaker's run of utterances. ``senders``/``addressees`` are
    per-utterance and only needed for role-based switch ids."""

    speaker: str
    utterances: tuple
    senders: tuple | None = None
    addressees: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        if not self.utterances:
            raise ContractError(f"turn by {self.speaker!r} has no utterances")
        for attr in ("senders", "addressees"):
            value = getattr(self, attr)
            if value is not None:
                value = tuple(value)
                object.__setattr__(self, attr, value)
                if len(value) != len(self.utterances):
                    raise ContractError(f"{attr} must align with utterances")

    def sender(self, i: int) -> str:
        return self.senders[i] if self.senders is not None else self.speaker

    def addressee(self, i: int):
        return self.addressees[i] if self.addressees is not None else None


@dataclass(frozen=True)
class DialogueContext:
    turns: tuple

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        for a, b in zip(self.turns, self.turns[1:]):
            if a.speaker == b.speaker:
                raise ContractError(f"consecutive turns share speaker {a.speaker!r}")

    @classmethod
    def from_records(cls, turns: Sequence[dict]) -> "DialogueContext":
        return cls(tuple(Turn(t["speaker"], tuple(t["utterances"])) for t in turns))

    @classmethod
    def from_utterances(cls, pairs: Sequence[tuple]) -> "DialogueContext":
        """Group ``(speaker, text)`` pairs into maximal same-speaker turns."""
        turns = []
        for speaker, text in pairs:
            if turns and turns[-1][0] == speaker:
                turns[-1][1].append(text)
            else:
                turns.append((speaker, [text]))
        return cls(tuple(Turn(s, tuple(u)) for s, u in turns))


@dataclass
class ComposedInput:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    switch_ids: np.ndarray
    attention_mask: np.ndarray
    max_len: int

    def __len__(self):
        return len(self.token_ids)

    @property
    def length(self) -> int:
        """Number of real (unpadded) positions."""
        return int(self.attention_mask.sum())

    def check(self):
        seqs = (self.token_ids, self.segment_ids, self.position_ids, self.switch_ids, self.attention_mask)
        n = len(self.token_ids)
        if any(len(s) != n for s in seqs) or n > self.max_len:
            raise ContractError("composed sequences differ in length or exceed max_len")
        if np.any(np.diff(self.segment_ids) < 0):
            raise ContractError("segment ids must be non-decreasing")
        pads = self.attention_mask == 0
        if np.any(self.token_ids[pads] != PAD_ID):
            raise ContractError("padding positions must hold [PAD]")
        if len(np.unique(self.switch_ids)) > 2:
            raise ContractError("switch ids take more than two values")


@dataclass
class CandidatePool:
    context_id: str
    candidates: list
    gold: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.candidates) > 100:
            raise ContractError(f"pool {self.context_id!r} has {len(self.candidates)} > 100 candidates")
        for g in self.gold:
            if not 0 <= g < len(self.candidates):
                raise ContractError(f"pool {self.context_id!r}: gold index {g} out of range")


def assign_switch_ids(context: DialogueContext, mode: str = "turn-alternating",
                      response_speaker: str | None = None) -> list[list[int]]:
    """Switch id of every utterance, as ``ids[turn][utterance]``.

    turn-alternating: turn k gets k mod 2. role-based: utterances spoken by
    ``response_speaker`` get 0, utterances addressed to it get 1.
    """
    if mode == "turn-alternating":
        return [[k % 2] * len(turn.utterances) for k, turn in enumerate(context.turns)]
    if mode != "role-based":
        raise ConfigurationError(f"unknown switch mode {mode!r}")
    if response_speaker is None:
        raise ContractError("role-based switch ids need the response speaker")
    out = []
    for turn in context.turns:
        ids = []
        for i in range(len(turn.utterances)):
            if turn.sender(i) == response_speaker:
                ids.append(0)
            elif turn.addressee(i) == response_speaker:
                ids.append(1)
            else:
                raise ContractError(
                    f"utterance by {turn.sender(i)!r} neither from nor to {response_speaker!r}; "
                    "run select_context first")
        out.append(ids)
    return out


def _context_tokens(context, vocab, mode, response_speaker):
    """Flattened (id, switch) pairs for sentence A, oldest first."""
    switches = assign_switch_ids(context, mode, response_speaker)
    ids, sw = [], []
    for turn, turn_sw in zip(context.turns, switches):
        for text, s in zip(turn.utterances, turn_sw):
            toks = vocab.encode(tokenize(text)) + [EOU_ID]
            ids.extend(toks)
            sw.extend([s] * len(toks))
        ids.append(EOT_ID)
        sw.append(turn_sw[-1])
    return ids, sw


def compose_pair(context: DialogueContext, response: str, vocab: Vocab, max_len: int = 320,
                 switch_mode: str = "turn-alternating", response_speaker: str | None = None,
                 pad: bool = True) -> ComposedInput:
    """``[CLS] (utt [EOU])* [EOT] ... [SEP] response [SEP]`` with all five id rows.

    Over-long inputs lose their oldest context tokens first; the response is
    only cut when it alone exceeds ``max_len - 3``.
    """
    if max_len < 8:
        raise ConfigurationError(f"max_len must be >= 8, got {max_len}")
    ctx_ids, ctx_sw = _context_tokens(context, vocab, switch_mode, response_speaker)
    resp = vocab.encode(tokenize(response))[: max_len - 3]
    room = max_len - 3 - len(resp)
    if len(ctx_ids) > room:
        cut = len(ctx_ids) - room
        ctx_ids, ctx_sw = ctx_ids[cut:], ctx_sw[cut:]

    first_sw = ctx_sw[0] if ctx_sw else 0
    last_sw = ctx_sw[-1] if ctx_sw else 0
    tokens = [CLS_ID] + ctx_ids + [SEP_ID] + resp + [SEP_ID]
    switch = [first_sw] + ctx_sw + [last_sw] + [0] * (len(resp) + 1)
    segment = [0] * (len(ctx_ids) + 2) + [1] * (len(resp) + 1)
    n = len(tokens)
    total = max_len if pad else n
    out = ComposedInput(
        token_ids=np.array(tokens + [PAD_ID] * (total - n), dtype=np.int64),
        segment_ids=np.array(segment + [1] * (total - n), dtype=np.int64),
        position_ids=np.arange(total, dtype=np.int64),
        switch_ids=np.array(switch + [0] * (total - n), dtype=np.int64),
        attention_mask=np.array([1] * n + [0] * (total - n), dtype=np.int64),
        max_len=max_len,
    )
    return out


def compose_sentences(a: str, b: str, vocab: Vocab, max_len: int = 100) -> ComposedInput:
    """Plain ``[CLS] a [SEP] b [SEP]`` pair with all switch ids 0."""
    if max_len < 8:
        raise ConfigurationError(f"max_len must be >= 8, got {max_len}")
    a_ids = vocab.encode(tokenize(a))
    b_ids = vocab.encode(tokenize(b))
    budget = max_len - 3
    # trim the longer side first so both keep a share
    while len(a_ids) + len(b_ids) > budget:
        if len(a_ids) >= len(b_ids):
            a_ids = a_ids[1:]
        else:
            b_ids = b_ids[:-1]
    tokens = [CLS_ID] + a_ids + [SEP_ID] + b_ids + [SEP_ID]
    n = len(tokens)
    return ComposedInput(
        token_ids=np.array(tokens, dtype=np.int64),
        segment_ids=np.array([0] * (len(a_ids) + 2) + [1] * (len(b_ids) + 1), dtype=np.int64),
        position_ids=np.arange(n, dtype=np.int64),
        switch_ids=np.zeros(n, dtype=np.int64),
        attention_mask=np.ones(n, dtype=np.int64),
        max_len=max_len,
    )


def collate(inputs: Sequence[ComposedInput]) -> dict:
    """Stack inputs into ``[B, L]`` arrays trimmed to the longest real length."""
    if not inputs:
        raise ContractError("collate of an empty batch")
    width = max(x.length for x in inputs)
    out = {}
    for key in ("token_ids", "segment_ids", "position_ids", "switch_ids", "attention_mask"):
        rows = []
        for x in inputs:
            row = getattr(x, key)[:width]
            if len(row) < width:
                fill = {"token_ids": PAD_ID, "segment_ids": 1, "switch_ids": 0, "attention_mask": 0}
                if key == "position_ids":
                    row = np.arange(width, dtype=np.int64)
                else:
                    row = np.concatenate([row, np.full(width - len(row), fill[key], dtype=np.int64)])
            rows.append(row)
        out[key] = np.stack(rows)
    return out


def mlm_mask(token_ids, vocab: Vocab, rate: float = 0.15, rng: Rng | None = None):
    """BERT-style masking. Returns ``(masked_ids, positions, targets)``.

    Each non-structural position is selected with probability ``rate``; a
    selected token becomes [MASK] 80% of the time, a random vocabulary word
    10% of the time, and stays unchanged 10% of the time.
    """
    rng = rng or Rng(0)
    ids = np.array(token_ids, dtype=np.int64)
    eligible = np.array([i not in STRUCTURAL_IDS for i in ids.tolist()], dtype=bool)
    if rate <= 0 or not eligible.any():
        return ids, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    picked = (rng.random(ids.shape) < rate) & eligible
    positions = np.flatnonzero(picked)
    targets = ids[positions].copy()
    roll = rng.random(len(positions))
    low = len(RESERVED)
    random_words = rng.integers(low, max(len(vocab), low + 1), len(positions))
    masked = ids.copy()
    for pos, r, w in zip(positions, roll, random_words):
        if r < 0.8:
            masked[pos] = MASK_ID
        elif r < 0.9:
            masked[pos] = w if len(vocab) > low else UNK_ID
    return masked, positions, targets


def nsp_pairs(corpus: Sequence[tuple], rng: Rng | None = None) -> list[tuple]:
    """For every ``(a, b)`` emit ``(a, b, 1)`` and ``(a, b', 0)`` where ``b'`` is
    the answer of a different, uniformly chosen pair."""
    if len(corpus) < 2:
        raise SamplingError("next-sentence pairs need at least two (A, B) pairs")
    rng = rng or Rng(0)
    out = []
    n = len(corpus)
    for i, (a, b) in enumerate(corpus):
        j = int(rng.integers(0, n - 1))
        if j >= i:
            j += 1
        out.append((a, b, 1))
        out.append((a, corpus[j][1], 0))
    return out


@dataclass(frozen=True)
class TrainingPair:
    context_id: str
    candidate: int
    label: int


def negative_index(pool: CandidatePool, epoch: int, seed: int) -> int:
    gold = set(pool.gold)
    others = [i for i in range(len(pool.candidates)) if i not in gold]
    if not others:
        raise SamplingError(f"pool {pool.context_id!r} has no negative candidate")
    return others[stable_hash(pool.context_id, epoch, seed) % len(others)]


def dynamic_negative_sample(pool: CandidatePool, epoch: int, rng_seed: int) -> list[TrainingPair]:
    """One positive and one epoch-dependent negative; nothing for gold-less pools."""
    if len(pool.candidates) < 2:
        raise ContractError("dynamic negative sampling needs at least two candidates")
    if not pool.gold:
        return []
    return [TrainingPair(pool.context_id, pool.gold[0], 1),
            TrainingPair(pool.context_id, negative_index(pool, epoch, rng_seed), 0)]
