"""Reply-link prediction and conversation disentanglement.

Each target message is paired with each of its K nearest predecessors and
with itself. The pairs are encoded independently, a BiLSTM runs across the
pair vectors (context pairs oldest first, self-pair last), and every pair row
gets the interaction features [m_t, m_c, m_t * m_c, m_t - m_c] against the
self-pair output m_t. A tanh hidden layer maps the features to one score per
pair; the best-scoring pair gives the antecedent.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .encoders import BiLSTM, BiLstmConfig, EncoderConfig, TransformerEncoder, linear
from .errors import ContractError, DimensionError
from .nn import tensor as T
from .nn.params import ParamSpec, ParamStore, init_params
from .nn.rng import Rng
from .nn.tensor import Tensor, no_grad
from .speaker import Message
from .text import ComposedInput, Vocab, collate, compose_sentences

N_FEATURES = 5
_NEG = -1e9


@dataclass
class LinkerConfig:
    window: int = 50
    max_len: int = 100
    classifier_hidden: int = 3072
    use_features: bool = True

    def __post_init__(self):
        if self.window < 1:
            raise ContractError("context window K must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LinkPrediction:
    target: object
    antecedent: object
    score: float


class UnionFind:
    def __init__(self, items=()):
        self.parent = {x: x for x in items}
        self.size = {x: 1 for x in items}

    def add(self, x):
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


# -- pairs and features -------------------------------------------------------------

def window_indices(index: int, window: int) -> list[int]:
    """Channel positions of the (at most) ``window`` messages before ``index``."""
    return list(range(max(0, index - window), index))


def build_pairs(index: int, channel: Sequence[Message], window: int, vocab: Vocab,
                max_len: int = 100) -> list[ComposedInput]:
    """``[CLS] context [SEP] target [SEP]`` for each predecessor in the
    window (oldest first), then the self-pair."""
    target = channel[index]
    return [compose_sentences(channel[j].text, target.text, vocab, max_len)
            for j in window_indices(index, window) + [index]]


def raw_features(target: Message, context: Message, distance: int) -> np.ndarray:
    return np.array([
        float(target.spoken_from == context.spoken_from),
        float(target.spoken_to is not None and target.spoken_to == context.spoken_from),
        float(context.spoken_to is not None and context.spoken_to == target.spoken_from),
        math.log1p(max(target.timestamp - context.timestamp, 0.0)),
        math.log1p(distance),
    ])


def manual_features(target: Message, context: Message, distance: int = 0,
                    stats: tuple | None = None) -> np.ndarray:
    """[same author, target addresses context author, context addresses target
    author, log1p(seconds apart), log1p(messages apart)], standardised by
    ``stats = (mean, std)`` when given."""
    f = raw_features(target, context, distance)
    if stats is not None:
        mean, std = stats
        f = (f - mean) / std
    return f


def feature_stats(channels: Sequence[Sequence[Message]], window: int) -> tuple:
    rows = []
    for ch in channels:
        for i in range(len(ch)):
            for j in window_indices(i, window) + [i]:
                rows.append(raw_features(ch[i], ch[j], i - j))
    arr = np.array(rows) if rows else np.zeros((1, N_FEATURES))
    std = arr.std(axis=0)
    return arr.mean(axis=0), np.where(std > 0, std, 1.0)


def interaction_features(m_t, m_c, extra=None):
    """[m_t, m_c, m_t * m_c, m_t - m_c] along the last axis; ``m_t`` is
    ``[n, 1, h]`` and is broadcast over the slots of ``m_c``."""
    width = m_c.shape[1]
    blocks = [T.mul(m_t, np.ones((1, width, 1), dtype=m_c.dtype)), m_c, m_t * m_c, m_t - m_c]
    if extra is not None:
        blocks.append(extra)
    return T.concat(blocks, axis=-1)


# -- scorer -----------------------------------------------------------------------------

@dataclass
class ChannelBatch:
    """Everything the scorer needs for a set of targets in one channel."""
    targets: list
    candidates: list
    pairs: list
    grid: np.ndarray
    mask: np.ndarray
    self_pos: np.ndarray
    features: np.ndarray


class LinkScorer:
    def __init__(self, encoder_config: EncoderConfig, config: LinkerConfig | None = None,
                 rng: Rng | None = None, params: ParamStore | None = None, stats: tuple | None = None):
        if encoder_config.model_dim % 2:
            raise ContractError("pair-encoder width must be even for the cross-message BiLSTM")
        self.encoder_config = encoder_config
        self.config = config or LinkerConfig()
        self.encoder = TransformerEncoder(encoder_config)
        h = encoder_config.model_dim
        self.cross = BiLSTM(BiLstmConfig(h, h // 2), "linker.cross")
        self.stats = stats or (np.zeros(N_FEATURES), np.ones(N_FEATURES))
        self.params = params if params is not None else init_params(self.param_specs(), rng or Rng(0))

    @property
    def feature_dim(self):
        return 4 * self.encoder_config.model_dim + (N_FEATURES if self.config.use_features else 0)

    def param_specs(self):
        return (self.encoder.param_specs() + self.cross.param_specs() + [
            ParamSpec("linker.hidden.weight", (self.feature_dim, self.config.classifier_hidden)),
            ParamSpec("linker.hidden.bias", (self.config.classifier_hidden,), "zeros"),
            ParamSpec("linker.out.weight", (self.config.classifier_hidden, 1)),
            ParamSpec("linker.out.bias", (1,), "zeros"),
        ])

    def prepare(self, channel: Sequence[Message], vocab: Vocab, targets=None) -> ChannelBatch:
        k = self.config.window
        targets = list(range(len(channel))) if targets is None else list(targets)
        width = min(k, max(targets) if targets else 0) + 1
        pairs, candidates = [], []
        grid = np.zeros((len(targets), width), dtype=np.int64)
        mask = np.zeros((len(targets), width), dtype=bool)
        self_pos = np.zeros(len(targets), dtype=np.int64)
        feats = np.zeros((len(targets), width, N_FEATURES))
        for r, i in enumerate(targets):
            cands = window_indices(i, k) + [i]
            candidates.append(cands)
            for c, (j, inp) in enumerate(zip(cands, build_pairs(i, channel, k, vocab, self.config.max_len))):
                grid[r, c] = len(pairs)
                pairs.append(inp)
                mask[r, c] = True
                feats[r, c] = manual_features(channel[i], channel[j], i - j, self.stats)
            self_pos[r] = len(cands) - 1
        return ChannelBatch(targets, candidates, pairs, grid, mask, self_pos, feats)

    def scores(self, batch: ChannelBatch, rng=None, params=None):
        """``[n_targets, width]`` scores; padded slots hold -1e9."""
        p = params if params is not None else self.params
        _, cls = self.encoder(p, collate(batch.pairs), rng)
        h = cls.shape[-1]
        padded = T.concat([cls, Tensor(np.zeros((1, h), dtype=cls.dtype))], axis=0)
        index = np.where(batch.mask, batch.grid, len(batch.pairs))
        seq = self.cross(p, padded[index], batch.mask)
        n, width = batch.mask.shape
        m_t = T.reshape(seq[np.arange(n), batch.self_pos], (n, 1, h))
        extra = Tensor(batch.features.astype(cls.dtype)) if self.config.use_features else None
        features = interaction_features(m_t, seq, extra)
        if features.shape[-1] != self.feature_dim:
            raise DimensionError("link-scorer", features.shape, (self.feature_dim,))
        hidden = T.tanh(linear(p, "linker.hidden", features))
        out = T.reshape(linear(p, "linker.out", hidden), (n, width))
        return out + np.where(batch.mask, 0.0, _NEG).astype(cls.dtype)

    def loss(self, batch: ChannelBatch, gold_pos: np.ndarray, rng=None, params=None):
        """Cross-entropy of the gold antecedent slot; targets with gold_pos < 0
        (antecedent outside the window) are ignored."""
        z = self.scores(batch, rng, params)
        keep = gold_pos >= 0
        return T.weighted_cross_entropy(z, np.where(keep, gold_pos, 0), None, keep)

    def score_channel(self, channel, vocab, chunk: int = 16) -> list[np.ndarray]:
        """Evaluation-mode scores per target, aligned with its candidate list."""
        out = []
        with no_grad():
            for start in range(0, len(channel), chunk):
                batch = self.prepare(channel, vocab, range(start, min(start + chunk, len(channel))))
                z = self.scores(batch).data
                for r in range(len(batch.targets)):
                    out.append(z[r, :batch.mask[r].sum()].astype(np.float64))
        return out


def gold_positions(channel: Sequence[Message], antecedents: Sequence[int], batch: ChannelBatch) -> np.ndarray:
    pos = np.full(len(batch.targets), -1, dtype=np.int64)
    for r, (i, cands) in enumerate(zip(batch.targets, batch.candidates)):
        a = antecedents[i]
        if a in cands:
            pos[r] = cands.index(a)
    return pos


def gold_antecedents(channel: Sequence[Message], reply_to: Sequence | None = None) -> list[int]:
    """Antecedent position of every message: the explicit ``reply_to`` id when
    given, else the latest earlier message of the same gold conversation,
    else itself."""
    index = {m.id: i for i, m in enumerate(channel)}
    out, last = [], {}
    for i, m in enumerate(channel):
        if reply_to is not None and reply_to[i] is not None:
            out.append(index[reply_to[i]])
        elif m.conv is not None and m.conv in last:
            out.append(last[m.conv])
        else:
            out.append(i)
        if m.conv is not None:
            last[m.conv] = i
    return out


def score_links(pairs, scorer: LinkScorer, channel, index, vocab):
    """Scores for one target's pairs in candidate order (self last)."""
    if len(pairs) != len(window_indices(index, scorer.config.window)) + 1:
        raise ContractError("pairs do not match the scorer's window for this target")
    with no_grad():
        z = scorer.scores(scorer.prepare(channel, vocab, [index])).data[0]
    return z[:len(pairs)].astype(np.float64)


def pick(candidates: Sequence[int], scores: np.ndarray) -> int:
    """Argmax with ties going to the most recent context, the self-pair last."""
    scores = np.asarray(scores, dtype=np.float64)
    best = scores.max()
    priority = list(range(len(candidates) - 2, -1, -1)) + [len(candidates) - 1]
    for slot in priority:
        if scores[slot] == best:
            return slot
    raise AssertionError("unreachable")


def predict_links(channel: Sequence[Message], scorer: LinkScorer, vocab: Vocab,
                  scores: list | None = None) -> list[LinkPrediction]:
    scores = scores if scores is not None else scorer.score_channel(channel, vocab)
    return links_from_scores(channel, scores, scorer.config.window)


def links_from_scores(channel, scores, window) -> list[LinkPrediction]:
    out = []
    for i, s in enumerate(scores):
        cands = window_indices(i, window) + [i]
        if len(s) != len(cands):
            raise ContractError(f"target {i}: {len(s)} scores for {len(cands)} candidates")
        slot = pick(cands, s)
        out.append(LinkPrediction(channel[i].id, channel[cands[slot]].id, float(s[slot])))
    return out


def links_to_clusters(links: Sequence[LinkPrediction], order: dict | None = None) -> dict:
    """Union-find over the links. Conversations are numbered 0.. in order of
    their earliest member. ``order`` maps message id to channel position and
    defaults to the order of ``links``."""
    order = order if order is not None else {l.target: i for i, l in enumerate(links)}
    uf = UnionFind(order)
    for link in links:
        if link.antecedent not in order:
            raise ContractError(f"antecedent {link.antecedent!r} is not a known message")
        if order[link.antecedent] > order[link.target]:
            raise ContractError(f"{link.target!r} links to later message {link.antecedent!r}")
        if link.antecedent != link.target:
            uf.union(link.target, link.antecedent)
    numbering, out = {}, {}
    for mid in sorted(order, key=order.get):
        root = uf.find(mid)
        if root not in numbering:
            numbering[root] = len(numbering)
        out[mid] = numbering[root]
    return out


# -- ensembles ------------------------------------------------------------------------

def model_average(stores: Sequence[ParamStore]) -> ParamStore:
    """Element-wise mean of identically shaped parameter stores."""
    if not stores:
        raise ContractError("model averaging needs at least one store")
    names = stores[0].names()
    out = ParamStore()
    for s in stores[1:]:
        if s.names() != names:
            raise ContractError("stores have different parameter names")
    for n in names:
        shapes = {s[n].shape for s in stores}
        if len(shapes) != 1:
            raise DimensionError("model-average", *shapes, detail=n)
        acc = np.zeros(stores[0][n].shape, dtype=np.float64)
        for s in stores:
            acc += s[n].data
        out[n] = Tensor((acc / len(stores)).astype(stores[0][n].dtype), requires_grad=True)
    return out


def _softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def probability_average(channel, score_sets: Sequence[list], window: int) -> list[LinkPrediction]:
    """Average per-target candidate probabilities across models, then argmax."""
    if not score_sets:
        raise ContractError("probability averaging needs at least one model")
    merged = []
    for i in range(len(channel)):
        probs = [_softmax(scores[i]) for scores in score_sets]
        merged.append(np.mean(probs, axis=0) if len(probs) > 1 else probs[0])
    return links_from_scores(channel, merged, window)


def vote_average(channel, link_sets: Sequence[Sequence[LinkPrediction]]) -> list[LinkPrediction]:
    """Most-voted antecedent per target; ties go to the earliest message."""
    if not link_sets:
        raise ContractError("voting needs at least one model")
    position = {m.id: i for i, m in enumerate(channel)}
    out = []
    for i, m in enumerate(channel):
        votes = Counter(links[i].antecedent for links in link_sets)
        top = max(votes.values())
        winner = min((a for a, c in votes.items() if c == top), key=position.get)
        out.append(LinkPrediction(m.id, winner, top / len(link_sets)))
    return out


ENSEMBLES = ("model-avg", "probability-avg", "vote-avg")


def ensemble(strategy: str, channel, scorers: Sequence[LinkScorer], vocab: Vocab):
    """Combine scorers with one of the three strategies; returns link predictions."""
    if strategy not in ENSEMBLES:
        raise ContractError(f"unknown ensemble strategy {strategy!r}")
    if not scorers:
        raise ContractError("ensemble needs at least one scorer")
    window = scorers[0].config.window
    if strategy == "model-avg":
        avg = LinkScorer(scorers[0].encoder_config, scorers[0].config,
                         params=model_average([s.params for s in scorers]), stats=scorers[0].stats)
        return predict_links(channel, avg, vocab)
    score_sets = [s.score_channel(channel, vocab) for s in scorers]
    if strategy == "probability-avg":
        return probability_average(channel, score_sets, window)
    return vote_average(channel, [links_from_scores(channel, s, window) for s in score_sets])


# -- clustering metrics -----------------------------------------------------------------

def _comb2(x):
    return x * (x - 1) // 2


def clustering_metrics(predicted: dict, gold: dict) -> dict:
    """1 - scaled VI, ARI, and exact-match conversation precision/recall/F1."""
    if set(predicted) != set(gold):
        raise ContractError("predicted and gold clusterings cover different messages")
    n = len(gold)
    if n < 1:
        raise ContractError("clustering metrics need at least one message")
    ids = sorted(gold, key=repr)
    pairs = Counter((predicted[i], gold[i]) for i in ids)
    a = Counter(predicted[i] for i in ids)
    b = Counter(gold[i] for i in ids)

    def entropy(counts):
        return -sum(c / n * math.log(c / n) for c in counts.values())

    mutual = sum(c / n * math.log(n * c / (a[p] * b[g])) for (p, g), c in pairs.items())
    vi = max(entropy(a) + entropy(b) - 2 * mutual, 0.0)
    scaled = vi / math.log(n) if n > 1 else 0.0

    index = sum(_comb2(c) for c in pairs.values())
    sa = sum(_comb2(c) for c in a.values())
    sb = sum(_comb2(c) for c in b.values())
    total = _comb2(n)
    if total == 0 or 2 * sa * sb == (sa + sb) * total:
        ari = 1.0
    else:
        expected = sa * sb / total
        ari = (index - expected) / ((sa + sb) / 2 - expected)

    def groups(labels):
        g = {}
        for i in ids:
            g.setdefault(labels[i], set()).add(i)
        return {frozenset(s) for s in g.values()}

    pg, gg = groups(predicted), groups(gold)
    matched = len(pg & gg)
    precision = matched / len(pg)
    recall = matched / len(gg)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"one_minus_scaled_vi": 1.0 - scaled, "ari": float(ari),
            "conv_precision": precision, "conv_recall": recall, "conv_f1": f1}


CLUSTER_METRIC_NAMES = [("one_minus_scaled_vi", "1-Scaled VI"), ("ari", "ARI"), ("conv_f1", "F1"),
                        ("conv_recall", "Recall"), ("conv_precision", "Precision")]


def format_report(record: dict) -> str:
    return "".join(f"{label:<12} {record[key]:>8.4f}\n" for key, label in CLUSTER_METRIC_NAMES)
