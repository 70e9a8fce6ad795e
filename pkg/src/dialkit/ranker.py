"""Response scoring head, candidate ranking, thresholding and retrieval metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import EncoderConfig, TransformerEncoder
from .errors import ContractError
from .nn import tensor as T
from .nn.params import ParamSpec, ParamStore, init_params
from .nn.rng import Rng
from .nn.tensor import no_grad
from .text import CandidatePool, DialogueContext, Vocab, collate, compose_pair

THRESHOLD_GRID = tuple(round(0.60 + 0.05 * i, 2) for i in range(8))
NO_GOLD_POLICIES = ("credit", "skip")


@dataclass
class RankerConfig:
    threshold: float = 0.95
    ks: tuple = (1, 5, 10)
    max_candidates: int = 100
    max_len: int = 320
    switch_mode: str = "turn-alternating"

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ContractError(f"threshold must lie in (0, 1), got {self.threshold}")


@dataclass
class RankResult:
    context_id: str
    scores: np.ndarray
    order: np.ndarray
    no_answer: bool

    def rank_of(self, index: int) -> int:
        """1-based rank of candidate ``index``."""
        return int(np.flatnonzero(self.order == index)[0]) + 1


def match_score(cls_vector, weight, bias) -> float:
    """s = sigmoid(c . W^T + b) for a single aggregated vector."""
    c = np.asarray(getattr(cls_vector, "data", cls_vector), dtype=np.float64).reshape(-1)
    w = np.asarray(getattr(weight, "data", weight), dtype=np.float64).reshape(-1)
    if c.shape != w.shape:
        raise ContractError(f"match head expects {w.shape[0]} dims, got {c.shape[0]}")
    b = float(np.asarray(getattr(bias, "data", bias)).reshape(-1)[0])
    z = float(c @ w) + b
    return float(1.0 / (1.0 + np.exp(-z)))


def order_scores(scores) -> np.ndarray:
    """Descending order, ties broken by ascending candidate index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def make_result(context_id, scores, threshold) -> RankResult:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ContractError(f"pool {context_id!r} is empty")
    return RankResult(context_id, scores, order_scores(scores), bool(scores.max() < threshold))


class ResponseRanker:
    """Transformer encoder with the sigmoid matching head on [CLS]."""

    def __init__(self, encoder_config: EncoderConfig, rng: Rng | None = None,
                 params: ParamStore | None = None):
        self.config = encoder_config
        self.encoder = TransformerEncoder(encoder_config)
        self.params = params if params is not None else init_params(self.param_specs(), rng or Rng(0))

    def param_specs(self):
        h = self.config.model_dim
        return self.encoder.param_specs() + [
            ParamSpec("head.weight", (h, 1), std=self.config.init_std),
            ParamSpec("head.bias", (1,), "zeros"),
        ]

    def logits(self, inputs, rng=None, params=None):
        p = params if params is not None else self.params
        _, cls = self.encoder(p, inputs, rng)
        z = cls @ p["head.weight"] + p["head.bias"]
        return T.reshape(z, (z.shape[0],))

    def loss(self, inputs, labels, rng=None, params=None):
        return T.binary_cross_entropy(self.logits(inputs, rng, params), labels)

    def score(self, inputs, batch_size: int = 128) -> np.ndarray:
        """Evaluation-mode match scores in (0, 1)."""
        inputs = list(inputs)
        out = []
        with no_grad():
            for start in range(0, len(inputs), batch_size):
                z = self.logits(collate(inputs[start:start + batch_size])).data
                out.append(T._sigmoid_np(z.astype(np.float64)))
        return np.concatenate(out) if out else np.zeros(0)


def rank_candidates(context: DialogueContext, pool: CandidatePool, model: ResponseRanker,
                    vocab: Vocab, config: RankerConfig | None = None,
                    response_speaker: str | None = None, inputs=None) -> RankResult:
    """Score every candidate against ``context`` and sort them.

    ``inputs`` may carry pre-composed pairs (one per candidate) for contexts
    built elsewhere, such as speaker-selected channels.
    """
    config = config or RankerConfig()
    if not pool.candidates:
        raise ContractError(f"pool {pool.context_id!r} is empty")
    if inputs is None:
        inputs = [compose_pair(context, cand, vocab, config.max_len, config.switch_mode,
                               response_speaker, pad=False) for cand in pool.candidates]
    # identical inputs are scored once so duplicates tie exactly
    keys = [(x.token_ids.tobytes(), x.segment_ids.tobytes(), x.switch_ids.tobytes()) for x in inputs]
    first = {}
    for i, key in enumerate(keys):
        first.setdefault(key, i)
    unique = sorted(first.values())
    scored = dict(zip(unique, model.score([inputs[i] for i in unique])))
    scores = np.array([scored[first[key]] for key in keys])
    return make_result(pool.context_id, scores, config.threshold)


def _gold_sets(golds):
    return [set(int(g) for g in gs) for gs in golds]


def recall_at_k(results, golds, k: int, no_gold_policy: str = "credit") -> float:
    """Fraction of examples with a gold candidate in the top ``k``.

    Under ``credit`` a gold-less pool counts as correct iff it was flagged
    no-answer; under ``skip`` such pools are left out.
    """
    if no_gold_policy not in NO_GOLD_POLICIES:
        raise ContractError(f"unknown no-gold policy {no_gold_policy!r}")
    if len(results) != len(golds):
        raise ContractError("results and golds are not aligned")
    hits = []
    for res, gold in zip(results, _gold_sets(golds)):
        if k > len(res.scores):
            raise ContractError(f"k={k} exceeds pool size {len(res.scores)}")
        if not gold:
            if no_gold_policy == "credit":
                hits.append(1.0 if res.no_answer else 0.0)
            continue
        hits.append(1.0 if gold & set(res.order[:k].tolist()) else 0.0)
    return float(np.mean(hits)) if hits else 0.0


def mrr(results, golds, no_gold_policy: str = "credit") -> float:
    """Mean reciprocal rank of the best-ranked gold candidate."""
    if no_gold_policy not in NO_GOLD_POLICIES:
        raise ContractError(f"unknown no-gold policy {no_gold_policy!r}")
    if len(results) != len(golds):
        raise ContractError("results and golds are not aligned")
    vals = []
    for res, gold in zip(results, _gold_sets(golds)):
        if not gold:
            if no_gold_policy == "credit":
                vals.append(1.0 if res.no_answer else 0.0)
            continue
        best = min(res.rank_of(g) for g in gold)
        vals.append(1.0 / best)
    return float(np.mean(vals)) if vals else 0.0


def final_metric(recall10: float, mrr_value: float) -> float:
    return (recall10 + mrr_value) / 2.0


def with_threshold(results, threshold):
    return [RankResult(r.context_id, r.scores, r.order, bool(r.scores.max() < threshold))
            for r in results]


def evaluation_report(results, golds, threshold, ks=(1, 5, 10), no_gold_policy="credit") -> dict:
    """Machine-readable evaluation record. Recall@k is omitted (None) for any
    k larger than the smallest pool, and ``final`` uses the largest k present."""
    smallest = min(len(r.scores) for r in results)
    record = {"n_examples": len(results), "threshold": float(threshold)}
    largest = None
    for k in ks:
        if k <= smallest:
            record[f"recall@{k}"] = recall_at_k(results, golds, k, no_gold_policy)
            largest = k
        else:
            record[f"recall@{k}"] = None
    record["mrr"] = mrr(results, golds, no_gold_policy)
    record["final"] = final_metric(record[f"recall@{largest}"], record["mrr"]) if largest else None
    return record


def format_report(record: dict) -> str:
    names = [("recall@1", "Recall@1"), ("recall@5", "Recall@5"), ("recall@10", "Recall@10"),
             ("mrr", "MRR"), ("final", "Final"), ("threshold", "Threshold"), ("n_examples", "Examples")]
    rows = []
    for key, label in names:
        if key not in record:
            continue
        v = record[key]
        shown = "-" if v is None else (str(v) if isinstance(v, int) else f"{v:.4f}")
        rows.append(f"{label:<10} {shown:>8}")
    return "\n".join(rows) + "\n"


def sweep_threshold(results, golds, grid=THRESHOLD_GRID, k: int = 10,
                    no_gold_policy: str = "credit") -> float:
    """Grid value maximising the final metric; ties go to the larger value."""
    if not results:
        raise ContractError("threshold sweep needs a non-empty validation set")
    if not grid:
        raise ContractError("threshold grid is empty")
    k = min(k, min(len(r.scores) for r in results))
    best, best_value = None, -np.inf
    for theta in sorted(grid):
        flagged = with_threshold(results, theta)
        value = final_metric(recall_at_k(flagged, golds, k, no_gold_policy),
                             mrr(flagged, golds, no_gold_policy))
        if value >= best_value:
            best, best_value = theta, value
    return float(best)
