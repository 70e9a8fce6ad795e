import numpy as np
import pytest

from dialkit.encoders import (BiLstmConfig, CharCNN, CharVocab, EncoderConfig, TransformerEncoder, bilstm_encode,
                              char_cnn_embed, pool_max_last, transformer_encode)
from dialkit.errors import ConfigurationError, ContractError, DimensionError
from dialkit.nn import Rng, Tensor, gradient_errors, init_params
from dialkit.nn.params import ParamSpec
from dialkit.text import build_vocab, compose_pair, DialogueContext, Turn

VOCAB = build_vocab(["the cat sat on a mat and so did the dog"])


def small(**kw):
    base = dict(vocab_size=len(VOCAB), layers=2, heads=2, model_dim=8, ffn_dim=16, max_positions=24, dropout=0.0)
    base.update(kw)
    return EncoderConfig(**base)


def inp(text="the cat sat", resp="on a mat", max_len=24):
    return compose_pair(DialogueContext((Turn("A", (text,)),)), resp, VOCAB, max_len)


def params_for(cfg, seed=0):
    return init_params(TransformerEncoder(cfg).param_specs(), Rng(seed))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        small(model_dim=9, heads=2)
    with pytest.raises(ConfigurationError):
        small(switch_vocab=3)


def test_cls_is_position_zero():
    cfg = small()
    x = inp()
    seq, cls = transformer_encode(x, params_for(cfg), cfg)
    assert seq.shape == (x.length, 8)
    assert np.array_equal(cls.data, seq.data[0])


def test_padding_is_invisible():
    cfg = small()
    p = params_for(cfg)
    a, b = inp(), inp()
    b.token_ids = b.token_ids.copy()
    b.token_ids[-1] = VOCAB.id("dog")  # a masked pad slot
    _, ca = transformer_encode(a, p, cfg)
    _, cb = transformer_encode(b, p, cfg)
    assert np.array_equal(ca.data, cb.data)


def test_zero_switch_table_equals_no_switch_model():
    cfg = small()
    p = params_for(cfg)
    p["encoder.embed.switch"].data[:] = 0.0
    plain_cfg = small(use_switch=False)
    plain = params_for(plain_cfg)
    plain.load_from(p, "encoder.layer")
    for n in ("token", "segment", "position", "ln.gain", "ln.bias"):
        plain[f"encoder.embed.{n}"].data[:] = p[f"encoder.embed.{n}"].data
    x = inp()
    x.switch_ids[:5] = 1
    _, a = transformer_encode(x, p, cfg)
    _, b = transformer_encode(x, plain, plain_cfg)
    assert np.allclose(a.data, b.data, atol=1e-6)


def test_attention_rows_and_pads():
    cfg = small()
    enc = TransformerEncoder(cfg)
    x = inp()
    enc(params_for(cfg), [x], keep_attention=True)
    probs = enc.last_attention[0][0]
    real = x.attention_mask.astype(bool)[:probs.shape[-1]]
    assert np.allclose(probs.sum(-1), 1.0, atol=1e-5)
    assert np.all(probs[..., ~real] < 1e-12)


def test_position_breaks_symmetry():
    cfg = small()
    p = params_for(cfg, 3)
    a = inp("the cat sat", "on a mat")
    b = inp("sat the cat", "mat a on")
    _, ca = transformer_encode(a, p, cfg)
    _, cb = transformer_encode(b, p, cfg)
    assert np.abs(ca.data - cb.data).max() > 1e-6


def test_encoder_input_contracts():
    cfg = small(vocab_size=8)
    with pytest.raises(ContractError):
        transformer_encode(inp(), params_for(cfg), cfg)
    cfg = small(max_positions=10)
    with pytest.raises(ContractError):
        transformer_encode(inp(max_len=24), params_for(cfg), cfg)


def test_encoder_gradient():
    cfg = small()
    p = params_for(cfg, 1)
    x = [inp(), inp("a dog", "so did the cat")]
    enc = TransformerEncoder(cfg)
    w = Rng(2).normal(0, 1, (8,))

    def loss(store):
        _, cls = enc(store, x)
        return (cls * w.astype(cls.dtype)).sum()

    # a key bias shifts every score of a query row equally, so softmax cancels it
    key_bias = [n for n in p.names() if n.endswith("attn.key.bias")]
    errs = gradient_errors(loss, p, max_coords=4, rng=Rng(5), names=[n for n in p.names() if n not in key_bias])
    assert errs["float32"] <= 1e-3 and errs["float64"] <= 1e-4
    loss(p).backward()
    assert all(np.abs(p[n].grad).max() < 1e-6 for n in key_bias)


# -- BiLSTM -------------------------------------------------------------------------

def lstm(inp_dim=3, h=4, seed=0):
    cfg = BiLstmConfig(inp_dim, h)
    from dialkit.encoders import BiLSTM
    return cfg, init_params(BiLSTM(cfg, "bilstm").param_specs(), Rng(seed))


def test_bilstm_single_step():
    cfg, p = lstm()
    out = bilstm_encode(np.ones((1, 3)), p, cfg)
    assert out.shape == (1, 8)


def test_bilstm_reversal_symmetry():
    cfg, p = lstm()
    # swap direction weights so the backward LSTM is the forward one
    swapped = p.copy()
    for part in ("wx", "wh", "bias"):
        swapped[f"bilstm.fwd.{part}"] = p[f"bilstm.bwd.{part}"].data
        swapped[f"bilstm.bwd.{part}"] = p[f"bilstm.fwd.{part}"].data
    x = Rng(1).normal(0, 1, (5, 3))
    out = bilstm_encode(x, p, cfg).data
    rev = bilstm_encode(x[::-1].copy(), swapped, cfg).data[::-1]
    assert np.allclose(out[:, :4], rev[:, 4:], atol=1e-6)
    assert np.allclose(out[:, 4:], rev[:, :4], atol=1e-6)


def test_bilstm_dim_mismatch():
    cfg, p = lstm()
    with pytest.raises(DimensionError):
        bilstm_encode(np.ones((2, 5)), p, cfg)


def test_bilstm_gradient():
    cfg, p = lstm(3, 8)
    x = Rng(4).normal(0, 1, (5, 3))
    w = Rng(5).normal(0, 1, (5, 16))

    def loss(store):
        out = bilstm_encode(Tensor(x.astype(store["bilstm.fwd.wx"].dtype)), store, cfg)
        return (out * w.astype(out.dtype)).sum()

    errs = gradient_errors(loss, p, max_coords=10, rng=Rng(0))
    assert errs["float32"] <= 1e-3 and errs["float64"] <= 1e-4


# -- pooling ------------------------------------------------------------------------

def test_pool_hand_example():
    assert pool_max_last(np.array([[1.0, -2.0], [3.0, -4.0]])).data.tolist() == [3, -2, 3, -4]


def test_pool_constant_and_single():
    const = pool_max_last(np.full((4, 3), 2.5)).data
    assert np.array_equal(const[:3], const[3:])
    one = pool_max_last(np.array([[1.0, 7.0]])).data
    assert np.array_equal(one[:2], one[2:])


def test_pool_uses_last_real_step():
    states = np.array([[[1.0], [5.0], [9.0]]])
    out = pool_max_last(states, lengths=[2]).data
    assert out.tolist() == [[5.0, 5.0]]


# -- char CNN -------------------------------------------------------------------------

def cnn_setup(seed=0):
    chars = CharVocab("abcdefghijklmnopqrstuvwxyz")
    cnn = CharCNN(len(chars), char_dim=6)
    return chars, cnn, init_params(cnn.param_specs(), Rng(seed))


def test_char_cnn_shapes():
    chars, cnn, p = cnn_setup()
    assert char_cnn_embed("a", p, cnn, chars).shape == (150,)
    assert np.array_equal(char_cnn_embed("mat", p, cnn, chars).data, char_cnn_embed("mat", p, cnn, chars).data)
    with pytest.raises(ContractError):
        char_cnn_embed("", p, cnn, chars)


def test_char_cnn_gradient():
    chars, cnn, p = cnn_setup(2)
    for name in p.names():
        if name.endswith("bias"):
            p[name] = Rng(9).normal(0, 0.1, p[name].shape)
    word = "abcdefghijklmnopqrst"
    w = Rng(3).normal(0, 1, (150,))

    def loss(store):
        v = char_cnn_embed(word, store, cnn, chars)
        return (v * w.astype(v.dtype)).sum()

    errs = gradient_errors(loss, p, max_coords=12, rng=Rng(1))
    assert errs["float32"] <= 1e-3 and errs["float64"] <= 1e-4
