"""Per-utterance Accept / Reject / NoDecision labelling of advising dialogues.

Words are embedded as a trainable word vector concatenated with a character
CNN vector; an utterance-level BiLSTM with max+last pooling yields one
vector per utterance, a context-level BiLSTM runs over those in order, and
an MLP maps each context step to three logits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .encoders import BiLSTM, BiLstmConfig, CharCNN, CharVocab, char_matrix, linear, pool_max_last
from .errors import ContractError
from .nn import tensor as T
from .nn.params import ParamSpec, ParamStore, init_params
from .nn.rng import Rng
from .nn.tensor import no_grad
from .text import UNK_ID, Vocab, tokenize

ACCEPT, REJECT, NO_DECISION = 0, 1, 2
LABELS = {"accept": ACCEPT, "reject": REJECT, "none": NO_DECISION}
LABEL_NAMES = {v: k for k, v in LABELS.items()}


@dataclass
class SuccessConfig:
    max_utterance_len: int = 30
    max_utterances: int = 26
    word_dim: int = 128
    char_dim: int = 32
    lstm_hidden: int = 200
    mlp_hidden: int = 256
    dropout: float = 0.2
    class_weights: tuple = (2.0, 2.0, 1.0)
    batch_size: int = 200

    def __post_init__(self):
        self.class_weights = tuple(float(w) for w in self.class_weights)
        if len(self.class_weights) != 3 or min(self.class_weights) <= 0:
            raise ContractError("class weights must be three positive numbers")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdvisingDialogue:
    id: str
    utterances: list
    labels: list = field(default_factory=list)
    speakers: list = field(default_factory=list)

    def __post_init__(self):
        if self.labels and len(self.labels) != len(self.utterances):
            raise ContractError(f"dialogue {self.id!r}: {len(self.labels)} labels for "
                                f"{len(self.utterances)} utterances")


class SuccessModel:
    def __init__(self, config: SuccessConfig, vocab: Vocab, chars: CharVocab,
                 rng: Rng | None = None, params: ParamStore | None = None):
        self.config = config
        self.vocab = vocab
        self.chars = chars
        c = config
        self.cnn = CharCNN(len(chars), c.char_dim, prefix="success.charcnn")
        word_in = c.word_dim + self.cnn.output_dim
        self.utt_lstm = BiLSTM(BiLstmConfig(word_in, c.lstm_hidden), "success.utt")
        self.ctx_lstm = BiLSTM(BiLstmConfig(4 * c.lstm_hidden, c.lstm_hidden), "success.ctx")
        self.params = params if params is not None else init_params(self.param_specs(), rng or Rng(0))

    def param_specs(self):
        c = self.config
        return ([ParamSpec("success.words", (len(self.vocab), c.word_dim), "uniform", fan_in=c.word_dim)]
                + self.cnn.param_specs() + self.utt_lstm.param_specs() + self.ctx_lstm.param_specs()
                + [ParamSpec("success.mlp.hidden.weight", (2 * c.lstm_hidden, c.mlp_hidden)),
                   ParamSpec("success.mlp.hidden.bias", (c.mlp_hidden,), "zeros"),
                   ParamSpec("success.mlp.out.weight", (c.mlp_hidden, 3)),
                   ParamSpec("success.mlp.out.bias", (3,), "zeros")])

    def window(self, dialogue: AdvisingDialogue) -> int:
        """Index of the first utterance the model sees (older ones are dropped)."""
        return max(0, len(dialogue.utterances) - self.config.max_utterances)

    def _prepare(self, dialogues):
        c = self.config
        utt_tokens, slots = [], []
        for d in dialogues:
            if not d.utterances:
                raise ContractError(f"dialogue {d.id!r} has no utterances")
            row = []
            for text in d.utterances[self.window(d):]:
                toks = tokenize(text)[: c.max_utterance_len] or ["[UNK]"]
                row.append(len(utt_tokens))
                utt_tokens.append(toks)
            slots.append(row)
        words = sorted({w for toks in utt_tokens for w in toks})
        word_index = {w: i for i, w in enumerate(words)}
        t_len = max(len(t) for t in utt_tokens)
        n = len(utt_tokens)
        word_ids = np.zeros((n, t_len), dtype=np.int64)
        uniq_ids = np.zeros((n, t_len), dtype=np.int64)
        lengths = np.array([len(t) for t in utt_tokens], dtype=np.int64)
        for r, toks in enumerate(utt_tokens):
            word_ids[r, :len(toks)] = [self.vocab.id(w) if w != "[UNK]" else UNK_ID for w in toks]
            uniq_ids[r, :len(toks)] = [word_index[w] for w in toks]
        u_max = max(len(s) for s in slots)
        grid = np.full((len(dialogues), u_max), n, dtype=np.int64)
        for r, s in enumerate(slots):
            grid[r, :len(s)] = s
        return words, word_ids, uniq_ids, lengths, grid

    def logits(self, dialogues, rng=None, params=None):
        """``[D, U, 3]`` logits plus the ``[D, U]`` real-utterance mask."""
        p = params if params is not None else self.params
        c = self.config
        words, word_ids, uniq_ids, lengths, grid = self._prepare(dialogues)
        char_ids, char_len = char_matrix(words, self.chars, max(self.cnn.widths))
        char_vecs = self.cnn(p, char_ids, char_len)
        x = T.concat([T.embedding(p["success.words"], word_ids), char_vecs[uniq_ids]], axis=-1)
        x = T.dropout(x, c.dropout, rng)
        tok_mask = np.arange(word_ids.shape[1])[None, :] < lengths[:, None]
        states = self.utt_lstm(p, x, tok_mask)
        utt_vecs = T.dropout(pool_max_last(states, lengths), c.dropout, rng)
        padded = T.concat([utt_vecs, T.Tensor(np.zeros((1, utt_vecs.shape[1]), dtype=utt_vecs.dtype))], axis=0)
        ctx_in = padded[grid]
        utt_mask = grid < len(lengths)
        ctx = T.dropout(self.ctx_lstm(p, ctx_in, utt_mask), c.dropout, rng)
        hidden = T.dropout(T.relu(linear(p, "success.mlp.hidden", ctx)), c.dropout, rng)
        return linear(p, "success.mlp.out", hidden), utt_mask

    def loss(self, dialogues, rng=None, params=None):
        logits, mask = self.logits(dialogues, rng, params)
        labels = np.full(mask.shape, NO_DECISION, dtype=np.int64)
        for r, d in enumerate(dialogues):
            kept = d.labels[self.window(d):]
            labels[r, :len(kept)] = kept
        return weighted_loss(logits, labels, self.config.class_weights, mask)

    def predict(self, dialogues, batch_size: int | None = None) -> list[list[int]]:
        """Full-length label sequences; utterances outside the kept window
        are labelled NoDecision."""
        batch_size = batch_size or self.config.batch_size
        out = []
        with no_grad():
            for start in range(0, len(dialogues), batch_size):
                chunk = dialogues[start:start + batch_size]
                logits, mask = self.logits(chunk)
                best = logits.data.argmax(axis=-1)
                for r, d in enumerate(chunk):
                    head = [NO_DECISION] * self.window(d)
                    out.append(head + best[r, :int(mask[r].sum())].tolist())
        return out


def encode_dialogue(dialogue: AdvisingDialogue, params: ParamStore, model: SuccessModel):
    """Logits ``[U, 3]`` for one dialogue (U = min(len, max_utterances))."""
    logits, mask = model.logits([dialogue], params=params)
    return logits[0]


def weighted_loss(logits, labels, weights=(2.0, 2.0, 1.0), mask=None):
    """Mean over real utterances of weight(label) x cross-entropy."""
    return T.weighted_cross_entropy(logits, labels, weights, mask)


def paraphrase_augment(dialogue: AdvisingDialogue, table: dict, rng: Rng, rate: float = 0.5):
    """Swap utterances for a uniformly drawn paraphrase with probability ``rate``."""
    utterances = []
    for text in dialogue.utterances:
        options = table.get(text)
        if options and rate > 0 and rng.random() < rate:
            text = options[int(rng.integers(0, len(options)))]
        utterances.append(text)
    return AdvisingDialogue(dialogue.id, utterances, list(dialogue.labels), list(dialogue.speakers))


def _prf(tp, fp, fn):
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def success_metrics(predictions, golds) -> dict:
    """Dialogue exact-match accuracy, utterance accuracy, and utterance-level
    precision/recall/F1 macro-averaged over Accept and Reject."""
    if len(predictions) != len(golds):
        raise ContractError("predictions and golds are not aligned")
    exact, correct, total = 0, 0, 0
    counts = {ACCEPT: [0, 0, 0], REJECT: [0, 0, 0]}
    for pred, gold in zip(predictions, golds):
        if len(pred) != len(gold):
            raise ContractError("label sequences differ in length")
        exact += int(list(pred) == list(gold))
        for p, g in zip(pred, gold):
            correct += int(p == g)
            total += 1
            for cls, tally in counts.items():
                if p == cls and g == cls:
                    tally[0] += 1
                elif p == cls:
                    tally[1] += 1
                elif g == cls:
                    tally[2] += 1
    per_class = [_prf(*counts[c]) for c in (ACCEPT, REJECT)]
    n = max(len(golds), 1)
    return {
        "accuracy": exact / n,
        "precision": float(np.mean([x[0] for x in per_class])),
        "recall": float(np.mean([x[1] for x in per_class])),
        "f1": float(np.mean([x[2] for x in per_class])),
        "utterance_accuracy": correct / max(total, 1),
    }


def format_report(record: dict) -> str:
    names = [("accuracy", "Accuracy"), ("precision", "Precision"), ("recall", "Recall"),
             ("f1", "F-1"), ("utterance_accuracy", "Utterance accuracy")]
    return "".join(f"{label:<18} {record[key]:>8.4f}\n" for key, label in names if key in record)
