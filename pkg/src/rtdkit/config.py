"""Run configuration: hyperparameter defaults, flat config files, hashing.

A run is described by a flat ``key = value`` text file plus command-line
overrides.  Field names follow the published hyperparameter tables; defaults
are the per-task table columns.  Unknown keys are rejected rather than
ignored so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .encoder import ConfigError, EncoderConfig

TASKS = ("pretrain", "ner", "re", "qa-squad", "qa-bioasq")

# Architecture defaults used when a config leaves the encoder block unset.
FULL_ENCODER = {
    "num_layers": 12,
    "hidden": 768,
    "ffn_inner": 3072,
    "heads": 12,
    "head_size": 64,
    "embedding_size": 768,
}


@dataclass(frozen=True)
class RunConfig:
    task: str
    seed: int
    learning_rate: float
    adam_eps: float
    adam_beta1: float
    adam_beta2: float
    layerwise_lr_decay: float
    lr_decay: str
    attention_dropout: float
    dropout: float
    weight_decay: float
    batch_size: int
    max_seq_length: int
    document_stride: int
    warmup_steps: int | None   # None: a tenth of the total step budget
    mask_percent: float
    generator_size: float
    train_steps: int | None    # pretraining budget; None for epoch-driven runs
    train_epochs: int | None   # fine-tuning budget; None for step-driven runs
    # Optional encoder block; None means the full-size architecture.
    num_layers: int | None = None
    hidden: int | None = None
    ffn_inner: int | None = None
    heads: int | None = None
    head_size: int | None = None
    embedding_size: int | None = None
    max_positions: int | None = None

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.lr_decay != "linear":
            raise ConfigError(f"unsupported lr_decay {self.lr_decay!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("adam_eps", "adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        for name in ("dropout", "attention_dropout"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {v}")
        if not 0 < self.layerwise_lr_decay <= 1:
            raise ConfigError(
                f"layerwise_lr_decay must lie in (0, 1], got {self.layerwise_lr_decay}"
            )
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_seq_length < 3:
            raise ConfigError(f"max_seq_length must be >= 3, got {self.max_seq_length}")
        if self.document_stride < 0:
            raise ConfigError(f"document_stride must be >= 0, got {self.document_stride}")
        if self.document_stride >= self.max_seq_length:
            raise ConfigError(
                f"document_stride {self.document_stride} must be smaller than "
                f"max_seq_length {self.max_seq_length}"
            )
        if not 0 < self.mask_percent < 100:
            raise ConfigError(f"mask_percent must lie in (0, 100), got {self.mask_percent}")
        if not 0 < self.generator_size <= 1:
            raise ConfigError(f"generator_size must lie in (0, 1], got {self.generator_size}")
        for name in ("warmup_steps", "train_steps", "train_epochs"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be >= 0, got {v}")

    @property
    def mask_rate(self) -> float:
        return self.mask_percent / 100.0

    def as_dict(self) -> dict:
        """Field -> value in declaration order."""
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        """Materialize the encoder block, full-size where unset."""
        arch = {k: getattr(self, k) if getattr(self, k) is not None else v
                for k, v in FULL_ENCODER.items()}
        positions = self.max_positions
        if positions is None:
            positions = self.max_seq_length
        return EncoderConfig(
            vocab_size=vocab_size,
            max_positions=positions,
            dropout=self.dropout,
            attention_dropout=self.attention_dropout,
            **arch,
        )

    def config_hash(self) -> str:
        """sha256 over the canonical key = value rendering."""
        text = "".join(f"{k} = {_render(v)}\n" for k, v in sorted(self.as_dict().items()))
        return hashlib.sha256(text.encode()).hexdigest()


def _render(value) -> str:
    if value is None:
        return "none"
    return str(value)


# Per-task default columns.  Shared rows first, then the task columns.
_SHARED = {
    "seed": 0,
    "adam_eps": 1e-6,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "lr_decay": "linear",
    "attention_dropout": 0.1,
    "dropout": 0.1,
}

_COLUMNS = {
    "pretrain": {
        "learning_rate": 2e-4,
        "layerwise_lr_decay": 1.0,
        "weight_decay": 0.01,
        "batch_size": 256,
        "max_seq_length": 512,
        "document_stride": 0,
        "warmup_steps": 10000,
        "mask_percent": 15.0,
        "generator_size": 1 / 3,
        "train_steps": 1_000_000,
        "train_epochs": None,
    },
    "ner": {"learning_rate": 5e-5, "batch_size": 32, "max_seq_length": 128,
            "document_stride": 0},
    "re": {"learning_rate": 5e-5, "batch_size": 32, "max_seq_length": 128,
           "document_stride": 0},
    "qa-squad": {"learning_rate": 3e-5, "batch_size": 16, "max_seq_length": 384,
                 "document_stride": 128},
    "qa-bioasq": {"learning_rate": 5e-6, "batch_size": 16, "max_seq_length": 384,
                  "document_stride": 128},
}

_FINETUNE_SHARED = {
    "layerwise_lr_decay": 0.8,
    "weight_decay": 0.0,
    "warmup_steps": None,
    "mask_percent": 15.0,
    "generator_size": 1 / 3,
    "train_steps": None,
    "train_epochs": 3,
}


def default_config(task: str) -> RunConfig:
    """The published hyperparameter column for a task."""
    if task not in _COLUMNS:
        raise ConfigError(f"unknown task {task!r}, expected one of {TASKS}")
    column = dict(_SHARED)
    if task != "pretrain":
        column.update(_FINETUNE_SHARED)
    column.update(_COLUMNS[task])
    return RunConfig(task=task, **column)


_INT_FIELDS = {
    "seed", "batch_size", "max_seq_length", "document_stride", "num_layers",
    "hidden", "ffn_inner", "heads", "head_size", "embedding_size", "max_positions",
}
_OPTIONAL_INT_FIELDS = {
    "warmup_steps", "train_steps", "train_epochs", "num_layers", "hidden",
    "ffn_inner", "heads", "head_size", "embedding_size", "max_positions",
}
_FLOAT_FIELDS = {
    "learning_rate", "adam_eps", "adam_beta1", "adam_beta2", "layerwise_lr_decay",
    "attention_dropout", "dropout", "weight_decay", "mask_percent", "generator_size",
}
_STR_FIELDS = {"task", "lr_decay"}
KNOWN_KEYS = frozenset(f.name for f in fields(RunConfig))


def _coerce(key: str, raw: str):
    if key in _OPTIONAL_INT_FIELDS and raw.lower() in ("none", "na"):
        return None
    try:
        if key in _STR_FIELDS:
            return raw
        if key in _INT_FIELDS or key in _OPTIONAL_INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS:
            if "/" in raw:   # table writes ratios like 1/3
                num, den = raw.split("/", 1)
                return float(num) / float(den)
            return float(raw)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"config key {key!r}: cannot parse value {raw!r}") from None
    raise ConfigError(f"config key {key!r} has no registered type")


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines into typed values.

    Blank lines and ``#`` comments are allowed.  Unknown and duplicate keys
    are errors.
    """
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        if not raw:
            raise ConfigError(f"config line {lineno}: empty value for {key!r}")
        out[key] = _coerce(key, raw)
    return out


def load_config(path, task: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults for the task column, then file keys, then overrides.

    The task is resolved first (override > file > argument); its default
    column seeds every remaining field.
    """
    with open(path, encoding="utf-8") as fh:
        file_keys = parse_config_text(fh.read())
    merged = dict(file_keys)
    for key, value in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config override {key!r}")
        if value is not None:
            merged[key] = value
    resolved_task = merged.pop("task", task or "pretrain")
    base = default_config(resolved_task)
    return replace(base, **merged)


def write_config(path, config: RunConfig) -> None:
    """Emit the flat file form; load_config on it reproduces the config."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config.as_dict().items():
            fh.write(f"{key} = {_render(value)}\n")
