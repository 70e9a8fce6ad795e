import math

import numpy as np
import pytest

from dialkit.encoders import CharVocab
from dialkit.errors import ContractError
from dialkit.nn import Rng, Tensor, gradient_errors
from dialkit.success import (ACCEPT, NO_DECISION, REJECT, AdvisingDialogue, SuccessConfig, SuccessModel,
                             encode_dialogue, format_report, paraphrase_augment, success_metrics,
                             weighted_loss)
from dialkit.text import build_vocab

TEXTS = ["i suggest eecs 281", "sounds good", "what about 370", "no thanks", "ok then"]
VOCAB = build_vocab(TEXTS)
CHARS = CharVocab("abcdefghijklmnopqrstuvwxyz0123456789")


def toy(**kw):
    base = dict(word_dim=6, char_dim=4, lstm_hidden=5, mlp_hidden=7, dropout=0.0, max_utterances=26)
    base.update(kw)
    return SuccessModel(SuccessConfig(**base), VOCAB, CHARS, Rng(3))


def dialogue(n, labels=None):
    utts = [TEXTS[i % len(TEXTS)] for i in range(n)]
    return AdvisingDialogue(f"d{n}", utts, labels or [NO_DECISION] * n)


def test_config_weights_positive():
    with pytest.raises(ContractError):
        SuccessConfig(class_weights=(1.0, 0.0, 1.0))
    with pytest.raises(ContractError):
        AdvisingDialogue("x", ["a"], [0, 1])


def test_logit_shapes():
    m = toy()
    assert encode_dialogue(dialogue(1), m.params, m).shape == (1, 3)
    with pytest.raises(ContractError):
        m.logits([AdvisingDialogue("e", [])])


def test_long_dialogue_keeps_last_utterances():
    m = toy()
    d = dialogue(30)
    assert encode_dialogue(d, m.params, m).shape == (26, 3)
    pred = m.predict([d])[0]
    assert len(pred) == 30 and pred[:4] == [NO_DECISION] * 4
    # the dropped head does not influence the kept window
    edited = AdvisingDialogue("e", ["what about 370"] * 4 + d.utterances[4:], d.labels)
    assert np.array_equal(encode_dialogue(edited, m.params, m).data, encode_dialogue(d, m.params, m).data)


def test_padding_does_not_leak():
    m = toy()
    short, long_ = dialogue(2), dialogue(6)
    alone = encode_dialogue(short, m.params, m).data
    batched, mask = m.logits([short, long_])
    assert mask[0].sum() == 2
    assert np.allclose(batched.data[0, :2], alone, atol=1e-6)


def test_bidirectional_context():
    m = toy()
    d = dialogue(4)
    base = encode_dialogue(d, m.params, m).data
    changed = AdvisingDialogue("x", d.utterances[:3] + ["no thanks what about 281"], d.labels)
    assert np.abs(encode_dialogue(changed, m.params, m).data[0] - base[0]).max() > 0


def test_success_gradient():
    m = toy()
    for name in m.params.names():
        if name.endswith("bias"):
            m.params[name] = Rng(8).normal(0, 0.1, m.params[name].shape)
    ds = [dialogue(3, [ACCEPT, NO_DECISION, REJECT])]
    errs = gradient_errors(lambda p: m.loss(ds, params=p), m.params, max_coords=4, rng=Rng(2))
    assert errs["float32"] <= 1e-3 and errs["float64"] <= 1e-4


# -- loss ---------------------------------------------------------------------------

def test_weighted_loss_uniform_logits():
    z = Tensor(np.zeros((1, 1, 3)))
    assert weighted_loss(z, np.array([[NO_DECISION]])).item() == pytest.approx(math.log(3), abs=1e-12)
    assert weighted_loss(z, np.array([[ACCEPT]])).item() == pytest.approx(2 * math.log(3), abs=1e-12)
    assert weighted_loss(z, np.array([[REJECT]])).item() == pytest.approx(2 * math.log(3), abs=1e-12)


def test_weighted_loss_confident_limit():
    z = Tensor(np.array([[[40.0, 0.0, 0.0]]]))
    assert weighted_loss(z, np.array([[ACCEPT]])).item() < 1e-15


def test_unit_weights_equal_plain_cross_entropy():
    z = Rng(1).normal(0, 1, (2, 4, 3))
    y = np.array([[0, 1, 2, 0], [2, 2, 1, 0]])
    shifted = z - z.max(-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(-1, keepdims=True))
    plain = -np.take_along_axis(logp, y[..., None], -1).mean()
    assert weighted_loss(Tensor(z), y, (1.0, 1.0, 1.0)).item() == pytest.approx(plain, rel=1e-12)


# -- augmentation -------------------------------------------------------------------

def test_paraphrase_augment():
    d = AdvisingDialogue("d", ["a", "b", "c"], [0, 1, 2])
    table = {"a": ["alpha"], "c": ["gamma", "charlie"]}
    assert paraphrase_augment(d, table, Rng(0), rate=0.0).utterances == ["a", "b", "c"]
    forced = paraphrase_augment(d, table, Rng(0), rate=1.0)
    assert forced.utterances[0] == "alpha" and forced.utterances[1] == "b"
    assert forced.utterances[2] in ("gamma", "charlie") and forced.labels == d.labels
    again = paraphrase_augment(d, table, Rng(0), rate=0.5)
    assert again.utterances == paraphrase_augment(d, table, Rng(0), rate=0.5).utterances


# -- metrics -------------------------------------------------------------------------

def test_metrics_identity_and_exact_match():
    golds = [[0, 2, 1], [2, 2]]
    rec = success_metrics(golds, golds)
    assert all(rec[k] == 1.0 for k in ("accuracy", "precision", "recall", "f1"))
    assert success_metrics([[0, 2, 2]], [[0, 2, 1]])["accuracy"] == 0.0


def brute_force(preds, golds):
    flat = [(p, g) for ps, gs in zip(preds, golds) for p, g in zip(ps, gs)]
    scores = []
    for c in (ACCEPT, REJECT):
        tp = sum(p == c and g == c for p, g in flat)
        pp = sum(p == c for p, _ in flat)
        gp = sum(g == c for _, g in flat)
        prec = tp / pp if pp else 0.0
        rec = tp / gp if gp else 0.0
        scores.append((prec, rec, 2 * prec * rec / (prec + rec) if prec + rec else 0.0))
    return [float(np.mean([s[i] for s in scores])) for i in range(3)]


def test_metrics_against_contingency():
    golds = [[0, 2, 1], [0, 0], [1, 2, 2, 0], [2]]
    preds = [[0, 2, 2], [0, 1], [1, 2, 0, 0], [2]]
    rec = success_metrics(preds, golds)
    # accept: tp 3 fp 1 fn 1, reject: tp 1 fp 1 fn 1
    assert rec["precision"] == pytest.approx((3 / 4 + 1 / 2) / 2)
    assert rec["recall"] == pytest.approx((3 / 4 + 1 / 2) / 2)
    assert [rec["precision"], rec["recall"], rec["f1"]] == pytest.approx(brute_force(preds, golds))
    assert rec["accuracy"] == 0.25 and rec["utterance_accuracy"] == 7 / 10
    assert "F-1" in format_report(rec)


def test_metrics_alignment():
    with pytest.raises(ContractError):
        success_metrics([[0]], [[0], [1]])
    with pytest.raises(ContractError):
        success_metrics([[0, 1]], [[0]])
