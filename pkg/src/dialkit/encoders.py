"""Transformer encoder, BiLSTM, max+last pooling and the character CNN."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .nn import tensor as T
from .nn.params import ParamSpec, ParamStore
from .nn.tensor import Tensor
from .text import ComposedInput, collate

_NEG = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    model_dim: int = 128
    ffn_dim: int = 512
    max_positions: int = 512
    dropout: float = 0.1
    switch_vocab: int = 2
    segment_vocab: int = 2
    use_switch: bool = True
    init_std: float = 0.02

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ConfigurationError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.switch_vocab != 2:
            raise ConfigurationError("switch_vocab must be exactly 2")
        if min(self.vocab_size, self.layers, self.heads, self.ffn_dim, self.max_positions) <= 0:
            raise ConfigurationError("encoder sizes must be positive")

    def to_dict(self):
        return asdict(self)


def _linear_specs(name, n_in, n_out, std=0.02):
    return [ParamSpec(f"{name}.weight", (n_in, n_out), std=std), ParamSpec(f"{name}.bias", (n_out,), "zeros")]


def _ln_specs(name, dim):
    return [ParamSpec(f"{name}.gain", (dim,), "ones"), ParamSpec(f"{name}.bias", (dim,), "zeros")]


def linear(p: ParamStore, name: str, x):
    return x @ p[f"{name}.weight"] + p[f"{name}.bias"]


def _ln(p, name, x):
    return T.layer_norm(x, p[f"{name}.gain"], p[f"{name}.bias"])


def as_batch(inputs) -> dict:
    if isinstance(inputs, ComposedInput):
        inputs = [inputs]
    if isinstance(inputs, dict):
        return inputs
    return collate(list(inputs))


class TransformerEncoder:
    """Post-norm transformer over the summed token, segment, position and
    switch embeddings of a batch of composed inputs."""

    def __init__(self, config: EncoderConfig, prefix: str = "encoder"):
        self.config = config
        self.prefix = prefix
        self.last_attention = None

    def param_specs(self):
        c, pre = self.config, self.prefix
        std = c.init_std
        specs = [
            ParamSpec(f"{pre}.embed.token", (c.vocab_size, c.model_dim), std=std),
            ParamSpec(f"{pre}.embed.segment", (c.segment_vocab, c.model_dim), std=std),
            ParamSpec(f"{pre}.embed.position", (c.max_positions, c.model_dim), std=std),
        ]
        if c.use_switch:
            specs.append(ParamSpec(f"{pre}.embed.switch", (c.switch_vocab, c.model_dim), std=std))
        specs += _ln_specs(f"{pre}.embed.ln", c.model_dim)
        for i in range(c.layers):
            lp = f"{pre}.layer{i}"
            for proj in ("query", "key", "value", "output"):
                specs += _linear_specs(f"{lp}.attn.{proj}", c.model_dim, c.model_dim, std)
            specs += _ln_specs(f"{lp}.attn.ln", c.model_dim)
            specs += _linear_specs(f"{lp}.ffn.in", c.model_dim, c.ffn_dim, std)
            specs += _linear_specs(f"{lp}.ffn.out", c.ffn_dim, c.model_dim, std)
            specs += _ln_specs(f"{lp}.ffn.ln", c.model_dim)
        return specs

    def embed(self, p, batch):
        c, pre = self.config, self.prefix
        tok = batch["token_ids"]
        if tok.max() >= c.vocab_size or tok.min() < 0:
            raise ContractError(f"token id {int(tok.max())} outside vocabulary of {c.vocab_size}")
        if tok.shape[1] > c.max_positions or batch["position_ids"].max() >= c.max_positions:
            raise ContractError(f"sequence length {tok.shape[1]} exceeds max_positions {c.max_positions}")
        x = T.embedding(p[f"{pre}.embed.token"], tok)
        x = x + T.embedding(p[f"{pre}.embed.segment"], batch["segment_ids"])
        x = x + T.embedding(p[f"{pre}.embed.position"], batch["position_ids"])
        if c.use_switch:
            x = x + T.embedding(p[f"{pre}.embed.switch"], batch["switch_ids"])
        return x

    def __call__(self, p: ParamStore, inputs, rng=None, keep_attention=False):
        """Returns ``(sequence [B, L, H], cls [B, H])``. ``rng`` None means
        evaluation mode (no dropout)."""
        c, pre = self.config, self.prefix
        batch = as_batch(inputs)
        x = self.embed(p, batch)
        x = T.dropout(_ln(p, f"{pre}.embed.ln", x), c.dropout, rng)
        b, length, h = x.shape
        nh, dh = c.heads, h // c.heads
        mask = batch["attention_mask"].astype(x.dtype)
        bias = ((1.0 - mask) * _NEG)[:, None, None, :]
        scale = 1.0 / np.sqrt(dh)
        attentions = []
        for i in range(c.layers):
            lp = f"{pre}.layer{i}"

            def heads(t):
                return T.transpose(T.reshape(t, (b, length, nh, dh)), (0, 2, 1, 3))

            q = heads(linear(p, f"{lp}.attn.query", x))
            k = heads(linear(p, f"{lp}.attn.key", x))
            v = heads(linear(p, f"{lp}.attn.value", x))
            scores = T.scale(q @ T.swapaxes(k, -1, -2), scale) + bias
            probs = T.softmax(scores, axis=-1)
            if keep_attention:
                attentions.append(probs.data)
            ctx = T.reshape(T.transpose(probs @ v, (0, 2, 1, 3)), (b, length, h))
            attn_out = T.dropout(linear(p, f"{lp}.attn.output", ctx), c.dropout, rng)
            x = _ln(p, f"{lp}.attn.ln", x + attn_out)
            ff = linear(p, f"{lp}.ffn.out", T.gelu(linear(p, f"{lp}.ffn.in", x)))
            x = _ln(p, f"{lp}.ffn.ln", x + T.dropout(ff, c.dropout, rng))
        self.last_attention = attentions if keep_attention else None
        return x, x[:, 0, :]


def transformer_encode(inp: ComposedInput, params: ParamStore, config: EncoderConfig,
                       prefix: str = "encoder", rng=None):
    """Single-input convenience: ``(per-position [L, H], cls [H])``."""
    seq, cls = TransformerEncoder(config, prefix)(params, [inp], rng)
    return seq[0], cls[0]


@dataclass(frozen=True)
class BiLstmConfig:
    input_dim: int
    hidden_per_direction: int

    def __post_init__(self):
        if self.input_dim <= 0 or self.hidden_per_direction <= 0:
            raise ConfigurationError("BiLSTM dims must be positive")

    @property
    def output_dim(self):
        return 2 * self.hidden_per_direction


class BiLSTM:
    def __init__(self, config: BiLstmConfig, prefix: str):
        self.config = config
        self.prefix = prefix

    def param_specs(self):
        d, h = self.config.input_dim, self.config.hidden_per_direction
        specs = []
        for direction in ("fwd", "bwd"):
            name = f"{self.prefix}.{direction}"
            specs += [
                ParamSpec(f"{name}.wx", (d, 4 * h), "uniform", fan_in=h),
                ParamSpec(f"{name}.wh", (h, 4 * h), "uniform", fan_in=h),
                ParamSpec(f"{name}.bias", (4 * h,), "zeros"),
            ]
        return specs

    def __call__(self, p: ParamStore, x, mask=None):
        """``x`` is ``[B, T, D]``; returns ``[B, T, 2h]`` (forward ‖ backward)."""
        if x.ndim != 3 or x.shape[-1] != self.config.input_dim:
            raise DimensionError("bilstm", x.shape, detail=f"expected input dim {self.config.input_dim}")
        outs = []
        for direction, reverse in (("fwd", False), ("bwd", True)):
            name = f"{self.prefix}.{direction}"
            xp = x @ p[f"{name}.wx"] + p[f"{name}.bias"]
            outs.append(T.lstm_scan(xp, p[f"{name}.wh"], mask, reverse=reverse))
        return T.concat(outs, axis=-1)


def bilstm_encode(sequence, params: ParamStore, config: BiLstmConfig, prefix: str = "bilstm"):
    """Unbatched form: ``[T, D]`` -> ``[T, 2h]``."""
    x = sequence if isinstance(sequence, Tensor) else Tensor(np.asarray(sequence, dtype=np.float32))
    if x.ndim != 2:
        raise DimensionError("bilstm", x.shape, detail="expected [T, D]")
    if x.shape[0] < 1:
        raise ContractError("bilstm needs at least one step")
    out = BiLSTM(config, prefix)(params, T.reshape(x, (1,) + x.shape))
    return out[0]


def pool_max_last(states, lengths=None):
    """Concatenate the max over time with the state emitted at the last real
    step. ``states`` is ``[B, T, D]`` (or ``[T, D]``); result ``[B, 2D]``."""
    if not isinstance(states, Tensor):
        states = Tensor(np.asarray(states, dtype=np.float32))
    single = states.ndim == 2
    if single:
        states = T.reshape(states, (1,) + states.shape)
    b, t_len, _ = states.shape
    if t_len < 1:
        raise ContractError("pooling needs at least one step")
    lengths = np.full(b, t_len) if lengths is None else np.asarray(lengths)
    mask = np.arange(t_len)[None, :] < lengths[:, None]
    mx = T.max_over_time(states, axis=1, mask=mask)
    last = states[np.arange(b), lengths - 1]
    out = T.concat([mx, last], axis=-1)
    return out[0] if single else out


class CharVocab:
    PAD, UNK = 0, 1

    def __init__(self, chars=()):
        self.itos = ["<pad>", "<unk>"] + sorted(set(chars))
        self.stoi = {ch: i for i, ch in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def encode(self, word):
        return [self.stoi.get(ch, self.UNK) for ch in word]

    @classmethod
    def from_words(cls, words):
        return cls({ch for w in words for ch in w})


class CharCNN:
    """Convolutions of widths 3/4/5 (50 filters each, relu) over character
    embeddings, max-pooled over positions: 150 dims per word."""

    def __init__(self, n_chars: int, char_dim: int = 32, widths=(3, 4, 5), filters: int = 50,
                 prefix: str = "charcnn"):
        self.n_chars = n_chars
        self.char_dim = char_dim
        self.widths = tuple(widths)
        self.filters = filters
        self.prefix = prefix

    @property
    def output_dim(self):
        return self.filters * len(self.widths)

    def param_specs(self):
        specs = [ParamSpec(f"{self.prefix}.chars", (self.n_chars, self.char_dim), "uniform", fan_in=self.char_dim)]
        for w in self.widths:
            specs.append(ParamSpec(f"{self.prefix}.conv{w}.weight", (w * self.char_dim, self.filters),
                                   "uniform", fan_in=w * self.char_dim))
            specs.append(ParamSpec(f"{self.prefix}.conv{w}.bias", (self.filters,), "zeros"))
        return specs

    def __call__(self, p: ParamStore, char_ids: np.ndarray, lengths: np.ndarray):
        """``char_ids`` ``[N, C]`` (right zero-padded to at least the widest
        window), ``lengths`` ``[N]``; returns ``[N, 150]``."""
        n, width_c = char_ids.shape
        if width_c < max(self.widths):
            raise ContractError("char ids must be padded to the widest window")
        emb = T.embedding(p[f"{self.prefix}.chars"], char_ids)
        real = (np.arange(width_c)[None, :] < lengths[:, None]).astype(emb.dtype)
        emb = emb * real[:, :, None]
        outs = []
        for w in self.widths:
            n_pos = width_c - w + 1
            idx = np.arange(n_pos)[:, None] + np.arange(w)[None, :]
            windows = T.reshape(emb[:, idx], (n, n_pos, w * self.char_dim))
            conv = T.relu(linear(p, f"{self.prefix}.conv{w}", windows))
            valid = np.arange(n_pos)[None, :] <= (np.maximum(lengths, w) - w)[:, None]
            outs.append(T.max_over_time(conv, axis=1, mask=valid))
        return T.concat(outs, axis=-1)

    def encode_words(self, p, words, vocab: CharVocab):
        ids, lengths = char_matrix(words, vocab, max(self.widths))
        return self(p, ids, lengths)


def char_matrix(words, vocab: CharVocab, min_width: int = 5):
    lengths = np.array([max(len(w), 1) for w in words], dtype=np.int64)
    width = max(int(lengths.max()) if len(words) else 0, min_width)
    ids = np.zeros((len(words), width), dtype=np.int64)
    for r, w in enumerate(words):
        enc = vocab.encode(w) or [CharVocab.UNK]
        ids[r, :len(enc)] = enc
    return ids, lengths


def char_cnn_embed(word: str, params: ParamStore, cnn: CharCNN, vocab: CharVocab):
    """Unbatched form: one word to a 150-d vector."""
    if not word:
        raise ContractError("char_cnn_embed needs a non-empty word")
    return cnn.encode_words(params, [word], vocab)[0]
