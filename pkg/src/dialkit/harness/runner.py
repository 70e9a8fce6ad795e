"""End-to-end pipelines: load data, train with the subtask's sampler and loss,
select the best validation epoch, evaluate on test, write artifacts."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import linker as L
from .. import ranker as R
from .. import success as S
from ..encoders import CharVocab, EncoderConfig, TransformerEncoder, linear
from ..errors import ConfigurationError
from ..nn import tensor as T
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.params import ParamSpec, init_params
from ..nn.rng import Rng
from ..speaker import build_entangled_input, select_context
from ..text import (DialogueContext, Vocab, build_vocab, collate, compose_pair, compose_sentences,
                    dynamic_negative_sample, mlm_mask, nsp_pairs, tokenize)
from . import data as D
from .config import RunConfig, dump_config
from .report import emit_report
from .training import fit, make_optimizer

log = logging.getLogger("dialkit.run")

HEADLINES = {"s1": "final", "s2": "final", "s3": "accuracy", "s4": "conv_f1", "pretrain": "nsp_accuracy"}
CHECKPOINT = "model.dgk"


def encoder_config(cfg: RunConfig, vocab_size: int) -> EncoderConfig:
    if cfg.max_len > cfg.max_positions:
        raise ConfigurationError(f"max_len {cfg.max_len} exceeds max_positions {cfg.max_positions}")
    return EncoderConfig(vocab_size, cfg.layers, cfg.heads, cfg.model_dim, cfg.ffn_dim,
                         cfg.max_positions, cfg.dropout, use_switch=cfg.use_switch, init_std=cfg.init_std)


def _batches(items, size, rng: Rng):
    order = rng.permutation(len(items)).tolist()
    return [[items[i] for i in order[s:s + size]] for s in range(0, len(order), size)]


def _init_from(cfg: RunConfig, params):
    """Copy pretrained encoder tensors into ``params`` when configured."""
    if cfg.init_checkpoint:
        store, _ = load_checkpoint(cfg.init_checkpoint)
        params.load_from(store, "encoder.")


def _vocab(cfg: RunConfig, texts):
    if cfg.init_checkpoint:
        path = Path(cfg.init_checkpoint).with_name("vocab.txt")
        if not path.exists():
            raise ConfigurationError(f"pretrained vocab missing next to checkpoint: {path}")
        return Vocab.load(path)
    return build_vocab(texts, cfg.min_count)


# -- ranking (s1 / s2) -----------------------------------------------------------------

@dataclass
class RankItem:
    """One context with pre-composed inputs for every candidate."""
    pool: object
    inputs: list


def _zero_switch(inp):
    inp.switch_ids = np.zeros_like(inp.switch_ids)
    return inp


def compose_ranking(cfg: RunConfig, examples, vocab) -> list[RankItem]:
    items = []
    for ex in examples:
        if isinstance(ex, D.EntangledExample):
            if cfg.disentangle:
                selected = select_context(ex.messages, ex.speaker)
                inputs = [build_entangled_input(selected, c, ex.speaker, vocab, cfg.max_len, pad=False)
                          for c in ex.pool.candidates]
            else:
                # whole channel as one alternating dialogue, oldest tokens truncated
                ctx = DialogueContext.from_utterances([(m.spoken_from, m.text) for m in ex.messages])
                inputs = [compose_pair(ctx, c, vocab, cfg.max_len, "turn-alternating", pad=False)
                          for c in ex.pool.candidates]
        else:
            inputs = [compose_pair(ex.context, c, vocab, cfg.max_len, cfg.switch_mode, pad=False)
                      for c in ex.pool.candidates]
        if cfg.zero_switch:
            inputs = [_zero_switch(x) for x in inputs]
        items.append(RankItem(ex.pool, inputs))
    return items


def _ranking_texts(examples):
    for ex in examples:
        if isinstance(ex, D.EntangledExample):
            yield from (m.text for m in ex.messages)
        else:
            yield from (u for t in ex.context.turns for u in t.utterances)
        yield from ex.pool.candidates


def rank_items(model: R.ResponseRanker, items, threshold, batch_size=128):
    flat = [x for it in items for x in it.inputs]
    scores = model.score(flat, batch_size)
    out, start = [], 0
    for it in items:
        n = len(it.inputs)
        out.append(R.make_result(it.pool.context_id, scores[start:start + n], threshold))
        start += n
    return out


def ranking_metrics(results, items, threshold):
    return R.evaluation_report(results, [it.pool.gold for it in items], threshold)


class RankingTask:
    def __init__(self, cfg: RunConfig, train, valid, test):
        self.cfg = cfg
        self.vocab = _vocab(cfg, _ranking_texts(train))
        self.train = compose_ranking(cfg, train, self.vocab)
        self.valid = compose_ranking(cfg, valid, self.vocab)
        self.test = compose_ranking(cfg, test, self.vocab)

    def build(self, seed, params=None):
        model = R.ResponseRanker(encoder_config(self.cfg, len(self.vocab)), Rng(seed).child("init"), params)
        if params is None:
            _init_from(self.cfg, model.params)
        return model

    def batches(self, epoch, seed):
        pairs = []
        for it in self.train:
            for tp in dynamic_negative_sample(it.pool, epoch, seed):
                pairs.append((it.inputs[tp.candidate], tp.label))
        return _batches(pairs, self.cfg.batch_size, Rng(seed).child("order", epoch))

    def loss(self, model, batch, rng):
        inputs = collate([x for x, _ in batch])
        labels = np.array([y for _, y in batch], dtype=np.float64)
        return model.loss(inputs, labels, rng if self.cfg.dropout else None)

    def evaluate(self, model, split):
        items = getattr(self, split)
        return ranking_metrics(rank_items(model, items, self.cfg.threshold), items, self.cfg.threshold)

    def scores(self, model, split):
        return [r.scores for r in rank_items(model, getattr(self, split), self.cfg.threshold)]

    def metrics_from_scores(self, scores, split):
        items = getattr(self, split)
        results = [R.make_result(it.pool.context_id, s, self.cfg.threshold) for it, s in zip(items, scores)]
        return ranking_metrics(results, items, self.cfg.threshold)

    def checkpoint_config(self):
        return {}


# -- success (s3) ----------------------------------------------------------------------

class SuccessTask:
    def __init__(self, cfg: RunConfig, train, valid, test, paraphrases=None, chars=None):
        self.cfg = cfg
        texts = [u for d in train for u in d.utterances]
        self.vocab = _vocab(cfg, texts)
        words = {w for t in texts for w in tokenize(t)}
        self.chars = CharVocab(chars) if chars is not None else CharVocab.from_words(words)
        self.train, self.valid, self.test = train, valid, test
        self.paraphrases = paraphrases or {}
        self.model_config = S.SuccessConfig(cfg.max_utterance_len, cfg.max_utterances, cfg.word_dim,
                                            cfg.char_dim, cfg.lstm_hidden, cfg.mlp_hidden, cfg.dropout,
                                            cfg.class_weights, cfg.batch_size)

    def build(self, seed, params=None):
        return S.SuccessModel(self.model_config, self.vocab, self.chars, Rng(seed).child("init"), params)

    def batches(self, epoch, seed):
        dialogues = self.train
        if self.paraphrases and self.cfg.paraphrase_rate > 0:
            r = Rng(seed).child("paraphrase", epoch)
            dialogues = [S.paraphrase_augment(d, self.paraphrases, r.child(i), self.cfg.paraphrase_rate)
                         for i, d in enumerate(dialogues)]
        return _batches(dialogues, self.cfg.batch_size, Rng(seed).child("order", epoch))

    def loss(self, model, batch, rng):
        return model.loss(batch, rng if self.cfg.dropout else None)

    def evaluate(self, model, split):
        dialogues = getattr(self, split)
        return S.success_metrics(model.predict(dialogues), [d.labels for d in dialogues])

    def scores(self, model, split):
        """Per-dialogue ``[len, 3]`` class probabilities (dropped head: NoDecision)."""
        out = []
        for d in getattr(self, split):
            with T.no_grad():
                logits, _ = model.logits([d])
            z = logits.data[0].astype(np.float64)
            p = np.exp(z - z.max(axis=-1, keepdims=True))
            p /= p.sum(axis=-1, keepdims=True)
            head = np.tile(np.eye(3)[S.NO_DECISION], (model.window(d), 1))
            out.append(np.concatenate([head, p]))
        return out

    def metrics_from_scores(self, scores, split):
        dialogues = getattr(self, split)
        preds = [s.argmax(axis=-1).tolist() for s in scores]
        return S.success_metrics(preds, [d.labels for d in dialogues])

    def checkpoint_config(self):
        return {"chars": self.chars.itos[2:]}


# -- linking (s4) ---------------------------------------------------------------------

def gold_clustering(channels) -> dict:
    out = {}
    for ch in channels:
        if all(m.conv is not None for m in ch.messages):
            for m in ch.messages:
                out[m.id] = (ch.id, m.conv)
        else:
            ante = L.gold_antecedents(ch.messages, ch.reply_to)
            links = [L.LinkPrediction(m.id, ch.messages[a].id, 0.0) for m, a in zip(ch.messages, ante)]
            for mid, c in L.links_to_clusters(links).items():
                out[mid] = (ch.id, c)
    return out


def predicted_clustering(channels, link_sets) -> dict:
    out = {}
    for ch, links in zip(channels, link_sets):
        for mid, c in L.links_to_clusters(links).items():
            out[mid] = (ch.id, c)
    return out


class LinkingTask:
    def __init__(self, cfg: RunConfig, train, valid, test, stats=None):
        self.cfg = cfg
        self.vocab = _vocab(cfg, [m.text for ch in train for m in ch.messages])
        self.train, self.valid, self.test = train, valid, test
        self.linker_config = L.LinkerConfig(cfg.window, cfg.max_len, cfg.classifier_hidden, cfg.use_features)
        self.stats = stats if stats is not None else L.feature_stats([ch.messages for ch in train], cfg.window)
        self._chunks = None

    def build(self, seed, params=None):
        scorer = L.LinkScorer(encoder_config(self.cfg, len(self.vocab)), self.linker_config,
                              Rng(seed).child("init"), params, self.stats)
        if params is None:
            _init_from(self.cfg, scorer.params)
        return scorer

    def _train_chunks(self, scorer):
        if self._chunks is None:
            chunks = []
            for ch in self.train:
                ante = L.gold_antecedents(ch.messages, ch.reply_to)
                n = len(ch.messages)
                for s in range(0, n, self.cfg.batch_size):
                    batch = scorer.prepare(ch.messages, self.vocab, range(s, min(s + self.cfg.batch_size, n)))
                    chunks.append((batch, L.gold_positions(ch.messages, ante, batch)))
            self._chunks = chunks
        return self._chunks

    def batches_for(self, scorer):
        def batches(epoch, seed):
            chunks = self._train_chunks(scorer)
            order = Rng(seed).child("order", epoch).permutation(len(chunks)).tolist()
            return [chunks[i] for i in order]
        return batches

    def loss(self, scorer, batch, rng):
        b, gold = batch
        return scorer.loss(b, gold, rng if self.cfg.dropout else None)

    def scores(self, scorer, split):
        return [scorer.score_channel(ch.messages, self.vocab) for ch in getattr(self, split)]

    def links_from_scores(self, scores, split):
        return [L.links_from_scores(ch.messages, s, self.cfg.window)
                for ch, s in zip(getattr(self, split), scores)]

    def metrics_from_links(self, link_sets, split):
        channels = getattr(self, split)
        return L.clustering_metrics(predicted_clustering(channels, link_sets), gold_clustering(channels))

    def metrics_from_scores(self, scores, split):
        return self.metrics_from_links(self.links_from_scores(scores, split), split)

    def evaluate(self, scorer, split):
        return self.metrics_from_scores(self.scores(scorer, split), split)

    def checkpoint_config(self):
        return {"feature_mean": self.stats[0].tolist(), "feature_std": self.stats[1].tolist()}


# -- pretraining -------------------------------------------------------------------------

class Pretrainer:
    """Masked-token plus next-sentence objectives on ``(a, b)`` sentence pairs.
    The masked-token head is tied to the token embedding table."""

    def __init__(self, cfg: RunConfig, pairs):
        self.cfg = cfg
        self.pairs = pairs
        self.vocab = build_vocab([t for p in pairs for t in p], cfg.min_count)
        self.config = encoder_config(cfg, len(self.vocab))
        self.encoder = TransformerEncoder(self.config)

    def param_specs(self):
        h = self.config.model_dim
        return self.encoder.param_specs() + [
            ParamSpec("pretrain.mlm.bias", (self.config.vocab_size,), "zeros"),
            ParamSpec("pretrain.nsp.weight", (h, 1)),
            ParamSpec("pretrain.nsp.bias", (1,), "zeros"),
        ]

    def build(self, seed, params=None):
        self.params = params if params is not None else init_params(self.param_specs(), Rng(seed).child("init"))
        return self

    def examples(self, epoch, seed):
        r = Rng(seed).child("pretrain", epoch)
        out = []
        for i, (a, b, label) in enumerate(nsp_pairs(self.pairs, r.child("nsp"))):
            inp = compose_sentences(a, b, self.vocab, self.cfg.max_len)
            masked, pos, tgt = mlm_mask(inp.token_ids, self.vocab, self.cfg.mask_rate, r.child("mlm", i))
            inp.token_ids = masked
            out.append((inp, pos, tgt, label))
        return out

    def batches(self, epoch, seed):
        return _batches(self.examples(epoch, seed), self.cfg.batch_size, Rng(seed).child("order", epoch))

    def forward(self, batch, rng=None, params=None):
        p = params if params is not None else self.params
        seq, cls = self.encoder(p, collate([x for x, *_ in batch]), rng)
        rows = np.array([r for r, (_, pos, _, _) in enumerate(batch) for _ in pos], dtype=np.int64)
        cols = np.array([c for _, pos, _, _ in batch for c in pos], dtype=np.int64)
        targets = np.array([t for _, _, tgt, _ in batch for t in tgt], dtype=np.int64)
        nsp = T.reshape(linear(p, "pretrain.nsp", cls), (len(batch),))
        labels = np.array([y for *_, y in batch], dtype=np.float64)
        mlm = None
        if len(rows):
            hidden = seq[rows, cols]
            mlm = hidden @ T.transpose(p["encoder.embed.token"], (1, 0)) + p["pretrain.mlm.bias"]
        return mlm, targets, nsp, labels

    def loss(self, _model, batch, rng):
        mlm, targets, nsp, labels = self.forward(batch, rng if self.cfg.dropout else None)
        loss = T.binary_cross_entropy(nsp, labels)
        if mlm is not None:
            loss = loss + T.weighted_cross_entropy(mlm, targets)
        return loss

    def evaluate(self, _model=None, split="train"):
        batch = self.examples(0, self.cfg.seed)
        with T.no_grad():
            mlm, targets, nsp, labels = self.forward(batch)
        out = {"nsp_accuracy": float(np.mean((nsp.data > 0) == (labels > 0.5)))}
        out["mlm_accuracy"] = float(np.mean(mlm.data.argmax(-1) == targets)) if mlm is not None else None
        return out

    def checkpoint_config(self):
        return {}


# -- orchestration ---------------------------------------------------------------------

def load_task(cfg: RunConfig, stats=None, chars=None):
    cfg.check_paths()
    if cfg.subtask == "pretrain":
        return Pretrainer(cfg, D.read_sentence_pairs(cfg.train))
    if cfg.subtask == "s1":
        return RankingTask(cfg, *(D.read_ranking(getattr(cfg, s)) for s in ("train", "valid", "test")))
    if cfg.subtask == "s2":
        return RankingTask(cfg, *(D.read_entangled(getattr(cfg, s)) for s in ("train", "valid", "test")))
    if cfg.subtask == "s3":
        table = D.read_paraphrases(cfg.paraphrases) if cfg.paraphrases else None
        return SuccessTask(cfg, *(D.read_advising(getattr(cfg, s)) for s in ("train", "valid", "test")),
                           paraphrases=table, chars=chars)
    return LinkingTask(cfg, *(D.read_channels(getattr(cfg, s)) for s in ("train", "valid", "test")),
                       stats=stats)


def train_model(cfg: RunConfig, task, seed: int):
    """Train one model; returns ``(model at its best epoch, FitResult)``."""
    model = task.build(seed)
    if isinstance(task, LinkingTask):
        batches = task.batches_for(model)
    else:
        batches = task.batches
    n_batches = len(batches(1, seed)) if cfg.epochs else 0
    opt = make_optimizer(cfg, n_batches * cfg.epochs)
    split = "train" if cfg.subtask == "pretrain" else "valid"
    result = fit(model.params, cfg.epochs, lambda e: batches(e, seed),
                 lambda b, r: task.loss(model, b, r), opt, lambda: task.evaluate(model, split),
                 HEADLINES[cfg.subtask], Rng(seed).child("train"), cfg.patience, cfg.clip_norm,
                 cfg.stop_at, cfg.eval_every)
    best = task.build(seed, result.best_params) if result.best_params is not None else model
    return best, result


def save_artifacts(out: Path, cfg: RunConfig, task, model):
    out.mkdir(parents=True, exist_ok=True)
    extra = {"subtask": cfg.subtask, **task.checkpoint_config()}
    save_checkpoint(model.params, out / CHECKPOINT, extra)
    task.vocab.save(out / "vocab.txt")
    dump_config(cfg, out / "config.txt")


def run(cfg: RunConfig, out=None) -> dict:
    """Train, select the best validation epoch, evaluate on test, and write
    report.json / report.txt plus the checkpoint under ``out``."""
    started = time.perf_counter()
    out = Path(out or cfg.out)
    task = load_task(cfg)
    model, result = train_model(cfg, task, cfg.seed)
    if cfg.subtask == "pretrain":
        final = task.evaluate()
    else:
        final = task.evaluate(model, "test")
    report = {
        "subtask": cfg.subtask,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "epochs": result.history,
        "selected_epoch": result.best_epoch,
        "valid": result.best_valid,
        "test": final,
        "steps": result.steps,
        "wall_time": time.perf_counter() - started,
    }
    save_artifacts(out, cfg, task, model)
    if cfg.subtask == "s4":
        links = task.links_from_scores(task.scores(model, "test"), "test")
        _write_links(out, task.test, links)
    emit_report(report, out)
    return report


def _write_links(out: Path, channels, link_sets):
    D.write_jsonl(out / "links.jsonl", [{"target": l.target, "antecedent": l.antecedent, "score": l.score}
                                        for links in link_sets for l in links])
    clusters = predicted_clustering(channels, link_sets)
    D.write_jsonl(out / "clusters.jsonl", [{"message": m, "conv": f"{c[0]}:{c[1]}"}
                                           for m, c in clusters.items()])


def load_model(run_dir, cfg: RunConfig | None = None):
    """Rebuild ``(cfg, task, model)`` from a finished run directory."""
    from .config import load_config

    run_dir = Path(run_dir)
    cfg = cfg or load_config(run_dir / "config.txt")
    store, meta = load_checkpoint(run_dir / CHECKPOINT)
    if meta.get("subtask") != cfg.subtask:
        raise ConfigurationError(f"checkpoint is for {meta.get('subtask')!r}, config asks for {cfg.subtask!r}")
    stats = None
    if "feature_mean" in meta:
        stats = (np.array(meta["feature_mean"]), np.array(meta["feature_std"]))
    task = load_task(cfg.replace(init_checkpoint=""), stats=stats, chars=meta.get("chars"))
    if Vocab.load(run_dir / "vocab.txt") != task.vocab:
        raise ConfigurationError("vocabulary rebuilt from the training file differs from the "
                                 "checkpoint's; was the training data changed?")
    expected = task.build(cfg.seed).params.shapes()
    store, _ = load_checkpoint(run_dir / CHECKPOINT, expected)
    return cfg, task, task.build(cfg.seed, store)


def evaluate_run(run_dir, cfg: RunConfig | None = None, split: str = "test") -> dict:
    cfg, task, model = load_model(run_dir, cfg)
    if cfg.subtask == "pretrain":
        return task.evaluate()
    return task.evaluate(model, split)


def sweep(run_dir, cfg: RunConfig | None = None) -> dict:
    cfg, task, model = load_model(run_dir, cfg)
    if cfg.subtask not in ("s1", "s2"):
        raise ConfigurationError("threshold sweep applies to s1 and s2 only")
    results = rank_items(model, task.valid, cfg.threshold)
    theta = R.sweep_threshold(results, [it.pool.gold for it in task.valid], cfg.threshold_grid)
    return {"threshold": theta, "valid": ranking_metrics(R.with_threshold(results, theta), task.valid, theta)}


def disentangle(run_dir, channel_path, out, cfg: RunConfig | None = None) -> dict:
    cfg, task, model = load_model(run_dir, cfg)
    if cfg.subtask != "s4":
        raise ConfigurationError("disentangle needs an s4 run directory")
    channels = D.read_channels(channel_path)
    link_sets = [L.predict_links(ch.messages, model, task.vocab) for ch in channels]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_links(out, channels, link_sets)
    record = {}
    if all(m.conv is not None for ch in channels for m in ch.messages):
        record = L.clustering_metrics(predicted_clustering(channels, link_sets), gold_clustering(channels))
    return record


def run_ensemble(cfg: RunConfig, out=None) -> dict:
    """Train ``ensemble_size`` models on seeds ``seed, seed+1, ...`` and combine
    them. s1-s3 use probability averaging; s4 uses ``ensemble_strategy``."""
    started = time.perf_counter()
    out = Path(out or cfg.out)
    if cfg.subtask == "pretrain":
        raise ConfigurationError("ensembles are not defined for pretraining")
    task = load_task(cfg)
    models, singles = [], []
    for k in range(cfg.ensemble_size):
        model, _ = train_model(cfg, task, cfg.seed + k)
        models.append(model)
        singles.append(task.evaluate(model, "test"))
    strategy = cfg.ensemble_strategy if cfg.subtask == "s4" else "probability-avg"
    if cfg.subtask == "s4":
        links = ensemble_links(task, models, strategy, "test")
        combined = task.metrics_from_links(links, "test")
    else:
        per_model = [task.scores(m, "test") for m in models]
        mean = [np.mean([pm[i] for pm in per_model], axis=0) for i in range(len(per_model[0]))]
        combined = task.metrics_from_scores(mean, "test")
    report = {"subtask": cfg.subtask, "seed": cfg.seed, "config": cfg.to_dict(), "strategy": strategy,
              "models": cfg.ensemble_size, "singles": singles, "test": combined,
              "wall_time": time.perf_counter() - started}
    emit_report(report, out)
    return report


def ensemble_links(task: LinkingTask, scorers, strategy: str, split: str):
    channels = getattr(task, split)
    return [L.ensemble(strategy, ch.messages, scorers, task.vocab) for ch in channels]

