"""Post-layer-norm transformer encoder.

Parameters live in a flat ``{name: Parameter}`` dict so the optimizer,
checkpoints, and layerwise learning-rate grouping all share one naming
scheme.  The token/position/segment embedding tables can be borrowed from
another parameter set via ``embeddings_from``, which is how a reduced-size
generator shares its embeddings with the main encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import rng as rng_streams
from .autodiff import (
    Parameter,
    Tensor,
    add,
    dropout,
    embedding,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    softmax,
    transpose,
)
from .rng import stream_rng

INIT_STD = 0.02
NEG_INF = -1e9


class ConfigError(ValueError):
    """Architecture constants are inconsistent."""


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    hidden: int
    ffn_inner: int
    heads: int
    head_size: int
    embedding_size: int
    vocab_size: int
    max_positions: int
    dropout: float = 0.1
    attention_dropout: float = 0.1

    def __post_init__(self):
        if self.heads * self.head_size != self.hidden:
            raise ConfigError(
                f"heads ({self.heads}) x head_size ({self.head_size}) "
                f"must equal hidden ({self.hidden})"
            )
        for name in ("num_layers", "hidden", "ffn_inner", "heads", "head_size",
                     "embedding_size", "vocab_size", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden": self.hidden,
            "ffn_inner": self.ffn_inner,
            "heads": self.heads,
            "head_size": self.head_size,
            "embedding_size": self.embedding_size,
            "vocab_size": self.vocab_size,
            "max_positions": self.max_positions,
            "dropout": self.dropout,
            "attention_dropout": self.attention_dropout,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EncoderConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def param_shapes(config: EncoderConfig, include_embeddings: bool = True) -> dict[str, tuple]:
    """Every tensor shape as a deterministic function of the config."""
    e, h, f = config.embedding_size, config.hidden, config.ffn_inner
    shapes: dict[str, tuple] = {}
    if include_embeddings:
        shapes["embeddings/token"] = (config.vocab_size, e)
        shapes["embeddings/position"] = (config.max_positions, e)
        shapes["embeddings/segment"] = (2, e)
    shapes["embeddings/norm/gain"] = (e,)
    shapes["embeddings/norm/bias"] = (e,)
    if e != h:
        shapes["embeddings/proj/weight"] = (e, h)
        shapes["embeddings/proj/bias"] = (h,)
    for i in range(config.num_layers):
        base = f"layer_{i:02d}"
        for part in ("query", "key", "value", "output"):
            shapes[f"{base}/attn/{part}/weight"] = (h, h)
            shapes[f"{base}/attn/{part}/bias"] = (h,)
        shapes[f"{base}/attn/norm/gain"] = (h,)
        shapes[f"{base}/attn/norm/bias"] = (h,)
        shapes[f"{base}/ffn/inner/weight"] = (h, f)
        shapes[f"{base}/ffn/inner/bias"] = (f,)
        shapes[f"{base}/ffn/output/weight"] = (f, h)
        shapes[f"{base}/ffn/output/bias"] = (h,)
        shapes[f"{base}/ffn/norm/gain"] = (h,)
        shapes[f"{base}/ffn/norm/bias"] = (h,)
    return shapes


def truncated_normal(rng: np.random.Generator, shape: tuple, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) with resampling outside +/- 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(np.float32)


def _init_one(name: str, shape: tuple, rng: np.random.Generator) -> Parameter:
    if name.endswith("/gain"):
        return Parameter(np.ones(shape, np.float32), name=name, no_decay=True)
    if name.endswith("/bias") or name.endswith("/norm/bias"):
        return Parameter(np.zeros(shape, np.float32), name=name, no_decay=True)
    return Parameter(truncated_normal(rng, shape), name=name)


def init_params(
    config: EncoderConfig,
    seed_or_rng,
    prefix: str = "encoder",
    include_embeddings: bool = True,
) -> dict[str, Parameter]:
    """Weights ~ truncated normal(0, 0.02); biases 0; norm gain 1."""
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else stream_rng(seed_or_rng, rng_streams.INIT)
    )
    return {
        f"{prefix}/{name}": _init_one(f"{prefix}/{name}", shape, rng)
        for name, shape in param_shapes(config, include_embeddings).items()
    }


def linear(x: Tensor, weight: Parameter, bias: Parameter) -> Tensor:
    """Affine map over the last axis, flattened to one matrix product."""
    shape = x.shape
    flat = reshape(x, (-1, shape[-1])) if len(shape) != 2 else x
    y = add(matmul(flat, weight), bias)
    if len(shape) != 2:
        y = reshape(y, (*shape[:-1], weight.shape[-1]))
    return y


def encode_batch(
    params: Mapping[str, Parameter],
    config: EncoderConfig,
    ids: np.ndarray,
    attention_mask: np.ndarray,
    segment_ids: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    prefix: str = "encoder",
    embeddings_from: str | None = None,
    attn_sink: list | None = None,
) -> Tensor:
    """Hidden states [batch, time, hidden] for a batch of id sequences.

    Padded keys are excluded from attention with an additive mask, so pad
    positions never influence non-pad outputs.  ``attn_sink``, when given,
    collects each layer's post-softmax attention probabilities.
    """
    ids = np.asarray(ids)
    attention_mask = np.asarray(attention_mask)
    segment_ids = np.asarray(segment_ids)
    if ids.ndim != 2:
        raise ValueError(f"ids must be [batch, time], got shape {ids.shape}")
    batch, time = ids.shape
    if attention_mask.shape != (batch, time) or segment_ids.shape != (batch, time):
        raise ValueError("ids, attention_mask, and segment_ids must share one shape")
    if time > config.max_positions:
        raise ValueError(f"sequence length {time} exceeds max_positions {config.max_positions}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        bad = np.argwhere((ids < 0) | (ids >= config.vocab_size))[0]
        raise ValueError(
            f"token id {ids[tuple(bad)]} out of range [0, {config.vocab_size}) "
            f"at row {bad[0]} position {bad[1]}"
        )
    if train and (config.dropout or config.attention_dropout) and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")

    def get(name: str) -> Parameter:
        return params[f"{prefix}/{name}"]

    emb_src = embeddings_from or prefix
    x = embedding(params[f"{emb_src}/embeddings/token"], ids)
    x = add(x, embedding(params[f"{emb_src}/embeddings/position"], np.arange(time)))
    x = add(x, embedding(params[f"{emb_src}/embeddings/segment"], segment_ids))
    x = layer_norm(x, get("embeddings/norm/gain"), get("embeddings/norm/bias"))
    if train and config.dropout:
        x = dropout(x, config.dropout, rng)
    if config.embedding_size != config.hidden:
        x = linear(x, get("embeddings/proj/weight"), get("embeddings/proj/bias"))

    key_mask = ((1 - attention_mask) * NEG_INF).astype(np.float32)[:, None, None, :]
    inv_sqrt_d = 1.0 / math.sqrt(config.head_size)  # Python float: no upcast

    def split_heads(t: Tensor) -> Tensor:
        t = reshape(t, (batch, time, config.heads, config.head_size))
        return transpose(t, (0, 2, 1, 3))

    for i in range(config.num_layers):
        base = f"layer_{i:02d}"
        q = split_heads(linear(x, get(f"{base}/attn/query/weight"), get(f"{base}/attn/query/bias")))
        k = split_heads(linear(x, get(f"{base}/attn/key/weight"), get(f"{base}/attn/key/bias")))
        v = split_heads(linear(x, get(f"{base}/attn/value/weight"), get(f"{base}/attn/value/bias")))

        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), inv_sqrt_d)
        scores = add(scores, key_mask)
        probs = softmax(scores)
        if attn_sink is not None:
            attn_sink.append(probs.data)
        if train and config.attention_dropout:
            probs = dropout(probs, config.attention_dropout, rng)
        ctx = reshape(transpose(matmul(probs, v), (0, 2, 1, 3)), (batch, time, config.hidden))

        attn_out = linear(ctx, get(f"{base}/attn/output/weight"), get(f"{base}/attn/output/bias"))
        if train and config.dropout:
            attn_out = dropout(attn_out, config.dropout, rng)
        x = layer_norm(add(attn_out, x), get(f"{base}/attn/norm/gain"), get(f"{base}/attn/norm/bias"))

        inner = gelu(linear(x, get(f"{base}/ffn/inner/weight"), get(f"{base}/ffn/inner/bias")))
        ffn_out = linear(inner, get(f"{base}/ffn/output/weight"), get(f"{base}/ffn/output/bias"))
        if train and config.dropout:
            ffn_out = dropout(ffn_out, config.dropout, rng)
        x = layer_norm(add(ffn_out, x), get(f"{base}/ffn/norm/gain"), get(f"{base}/ffn/norm/bias"))

    return x


def count_parameters(params: Mapping[str, Parameter]) -> int:
    return sum(p.data.size for p in params.values())
