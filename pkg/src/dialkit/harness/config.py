"""Run configuration stored as a flat ``key = value`` text file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import ConfigurationError
from ..ranker import THRESHOLD_GRID

SUBTASKS = ("pretrain", "s1", "s2", "s3", "s4")

# per-subtask defaults from the published recipes; anything not listed keeps
# the dataclass default
SUBTASK_DEFAULTS = {
    "s1": dict(learning_rate=1e-5, schedule="linear", batch_size=32, epochs=30, max_len=320, dropout=0.1),
    "s2": dict(learning_rate=2e-5, schedule="linear", batch_size=25, epochs=8, max_len=512, dropout=0.1),
    "s3": dict(learning_rate=1e-3, schedule="exponential", batch_size=200, epochs=30, dropout=0.2,
               weight_decay=0.0),
    "s4": dict(learning_rate=2e-5, schedule="linear", batch_size=4, epochs=8, max_len=100, dropout=0.1),
    "pretrain": dict(learning_rate=1e-4, schedule="linear", batch_size=32, epochs=10, max_len=128),
}


@dataclass
class RunConfig:
    subtask: str = "s1"
    seed: int = 0
    train: str = ""
    valid: str = ""
    test: str = ""
    paraphrases: str = ""
    init_checkpoint: str = ""
    out: str = "runs/default"
    # encoder
    layers: int = 2
    heads: int = 4
    model_dim: int = 128
    ffn_dim: int = 512
    max_positions: int = 512
    dropout: float = 0.1
    init_std: float = 0.02
    use_switch: bool = True
    zero_switch: bool = False
    # optimiser
    learning_rate: float = 1e-5
    schedule: str = "linear"
    weight_decay: float = 0.01
    decay_rate: float = 0.96
    decay_steps: int = 5000
    clip_norm: float = 1.0
    batch_size: int = 32
    epochs: int = 30
    patience: int = 5
    stop_at: float | None = None
    eval_every: int = 1
    # data
    min_count: int = 1
    max_len: int = 320
    switch_mode: str = "turn-alternating"
    disentangle: bool = True
    mask_rate: float = 0.15
    # ranking
    threshold: float = 0.95
    threshold_grid: tuple = THRESHOLD_GRID
    # success model
    word_dim: int = 128
    char_dim: int = 32
    lstm_hidden: int = 200
    mlp_hidden: int = 256
    max_utterances: int = 26
    max_utterance_len: int = 30
    class_weights: tuple = (2.0, 2.0, 1.0)
    paraphrase_rate: float = 0.5
    # linker
    window: int = 50
    classifier_hidden: int = 3072
    use_features: bool = True
    # ensembles
    ensemble_strategy: str = "probability-avg"
    ensemble_size: int = 5

    def __post_init__(self):
        if self.subtask not in SUBTASKS:
            raise ConfigurationError(f"unknown subtask {self.subtask!r}; expected one of {SUBTASKS}")
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1 or self.eval_every < 1:
            raise ConfigurationError("epochs must be >= 0; batch_size, patience, eval_every >= 1")
        if self.ensemble_size < 1:
            raise ConfigurationError("ensemble_size must be >= 1")
        self.threshold_grid = tuple(float(x) for x in self.threshold_grid)
        self.class_weights = tuple(float(x) for x in self.class_weights)

    @classmethod
    def for_subtask(cls, subtask: str, **overrides) -> "RunConfig":
        values = dict(SUBTASK_DEFAULTS.get(subtask, {}))
        values.update(overrides)
        return cls(subtask=subtask, **values)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def check_paths(self):
        """Every data path the subtask needs must exist at run start."""
        needed = ["train"] if self.subtask == "pretrain" else ["train", "valid", "test"]
        for key in needed:
            value = getattr(self, key)
            if not value:
                raise ConfigurationError(f"config key {key!r} is required for {self.subtask}")
        for key in ("train", "valid", "test", "paraphrases", "init_checkpoint"):
            value = getattr(self, key)
            if value and not Path(value).exists():
                raise ConfigurationError(f"{key} path does not exist: {value}")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_render(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def _parse(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind is tuple:
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if kind == "float|None":
            return None if raw.lower() in ("none", "") else float(raw)
        return kind(raw)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r}") from None


_KINDS = {"int": int, "float": float, "str": str, "bool": bool, "tuple": tuple,
          "float | None": "float|None"}


def dump_config(config: RunConfig, path=None) -> str:
    lines = [f"{f.name} = {_render(getattr(config, f.name))}" for f in fields(config)]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment). Unknown keys are
    an error. Subtask defaults apply before the file's own values."""
    known = {f.name: _KINDS[f.type] for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse(known[key], raw, key)
    values.update({k: v for k, v in overrides.items() if v is not None})
    subtask = values.pop("subtask", "s1")
    return RunConfig.for_subtask(subtask, **values)


def load_config(path, **overrides) -> RunConfig:
    return parse_config(Path(path).read_text(), **overrides)
