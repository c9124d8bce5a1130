"""Replaced-token-detection pretraining.

One training step: pack -> mask -> generator MLM forward -> sample
replacements (detached) -> discriminator forward over the corrupted
sequence -> joint loss L_MLM + lambda * L_RTD -> Adam.  The generator is a
reduced copy of the discriminator that borrows the token/position/segment
embedding tables; after pretraining only the discriminator encoder is
exported, the generator and the detection head are dropped.

Every random choice is drawn from a stream keyed by (seed, purpose, step),
so batch order, masking, sampling, and dropout are pure functions of the
seed and the step index; resuming from a checkpoint replays the identical
run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import rng as rng_streams
from .autodiff import (
    Parameter,
    Tape,
    Tensor,
    add,
    backward,
    binary_cross_entropy,
    cross_entropy,
    gather_positions,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    transpose,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import (
    ConfigError,
    EncoderConfig,
    encode_batch,
    init_params,
    linear,
    truncated_normal,
)
from .optim import Adam, LrSchedule, TrainingError, lr_at
from .rng import stream_rng
from .text import CLS_TOKEN, MASK_TOKEN, NO_WORD, PAD_TOKEN, SEP_TOKEN, Encoding, Vocabulary, normalize, pretokenize, word_pieces

MASK_RATE = 0.15
LAMBDA_DISC = 50.0
GENERATOR_RATIO = 1.0 / 3.0

# rtd_labels values
LABEL_ORIGINAL = 0
LABEL_REPLACED = 1
LABEL_IGNORE = -1


# ---------------------------------------------------------------------------
# Corpus packing
# ---------------------------------------------------------------------------

@dataclass
class PackResult:
    sequences: list[Encoding]
    skipped_documents: int


def _sentence_pieces(sentence: str, vocab: Vocabulary) -> list[str]:
    return [p for w in pretokenize(normalize(sentence)) for p in word_pieces(w, vocab)]


def _flush(pieces: list[str], vocab: Vocabulary, max_len: int) -> Encoding:
    pad_n = max_len - len(pieces)
    tokens = pieces + [PAD_TOKEN] * pad_n
    ids = [vocab.index[t] for t in tokens]
    mask = [1] * len(pieces) + [0] * pad_n
    word_map = []
    wi = -1
    for tok, m in zip(tokens, mask):
        if m == 0 or tok in (CLS_TOKEN, SEP_TOKEN):
            word_map.append(NO_WORD)
            continue
        if not tok.startswith("##"):
            wi += 1
        word_map.append(wi)
    return Encoding(
        ids=tuple(ids),
        tokens=tuple(tokens),
        segment_ids=(0,) * max_len,
        attention_mask=tuple(mask),
        word_map=tuple(word_map),
    )


def pack_sequences(
    documents: Iterable[Sequence[str]],
    vocab: Vocabulary,
    max_len: int = 512,
) -> PackResult:
    """Greedy sentence packing into [cls] ... [sep] sequences of max_len.

    Every sentence is closed by a sep; a sentence that overflows the current
    sequence is cut at the boundary and its remainder opens the next one.
    Only a document's final sequence is padded, and no sequence ever mixes
    two documents.
    """
    if max_len < 3:
        raise ValueError(f"max_len {max_len} leaves no room for cls + token + sep")
    sequences: list[Encoding] = []
    skipped = 0
    for document in documents:
        cur = [CLS_TOKEN]
        emitted = False
        for sentence in document:
            pieces = _sentence_pieces(sentence, vocab)
            if not pieces:
                continue
            i = 0
            while True:
                capacity = max_len - len(cur) - 1  # reserve this sentence's sep
                take = min(capacity, len(pieces) - i)
                cur += pieces[i : i + take]
                cur.append(SEP_TOKEN)
                i += take
                if len(cur) == max_len:
                    sequences.append(_flush(cur, vocab, max_len))
                    emitted = True
                    cur = [CLS_TOKEN]
                if i == len(pieces):
                    break
        if len(cur) > 1:
            sequences.append(_flush(cur, vocab, max_len))
            emitted = True
        if not emitted:
            skipped += 1
    return PackResult(sequences=sequences, skipped_documents=skipped)


# ---------------------------------------------------------------------------
# Masking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskingPlan:
    positions: tuple[int, ...]
    original_ids: tuple[int, ...]
    rate: float

    def apply(self, ids: Sequence[int], mask_id: int) -> np.ndarray:
        out = np.asarray(ids, dtype=np.int64).copy()
        out[list(self.positions)] = mask_id
        return out


def mask_count(rate: float, n_maskable: int) -> int:
    """max(1, round(rate * n)) with half-up rounding."""
    return max(1, int(rate * n_maskable + 0.5))


def sample_masking(
    encoding: Encoding, rng: np.random.Generator, rate: float = MASK_RATE
) -> MaskingPlan:
    """Uniform without-replacement choice of positions to mask.

    cls/sep/pad never enter the pool; everything else (unk included) does.
    """
    special = (CLS_TOKEN, SEP_TOKEN, PAD_TOKEN, MASK_TOKEN)
    maskable = [
        i
        for i, (tok, m) in enumerate(zip(encoding.tokens, encoding.attention_mask))
        if m == 1 and tok not in special
    ]
    if not maskable:
        raise ValueError("nothing to mask")
    count = mask_count(rate, len(maskable))
    chosen = rng.choice(len(maskable), size=count, replace=False)
    positions = tuple(sorted(maskable[i] for i in chosen))
    return MaskingPlan(
        positions=positions,
        original_ids=tuple(encoding.ids[p] for p in positions),
        rate=rate,
    )


# ---------------------------------------------------------------------------
# Generator and detection head
# ---------------------------------------------------------------------------

def scaled_generator_config(config: EncoderConfig, ratio: float = GENERATOR_RATIO) -> EncoderConfig:
    """Reduce hidden/FFN/heads by ``ratio``; depth and head size keep.

    Heads are rounded first and the hidden size is derived from them, so the
    heads*head_size == hidden invariant survives any ratio.
    """
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"generator size ratio {ratio} outside (0, 1]")
    heads = int(config.heads * ratio + 0.5)
    if heads < 1:
        raise ConfigError(
            f"generator size {ratio} scales {config.heads} attention heads to zero"
        )
    return EncoderConfig(
        num_layers=config.num_layers,
        hidden=heads * config.head_size,
        ffn_inner=max(1, int(config.ffn_inner * ratio + 0.5)),
        heads=heads,
        head_size=config.head_size,
        embedding_size=config.embedding_size,
        vocab_size=config.vocab_size,
        max_positions=config.max_positions,
        dropout=config.dropout,
        attention_dropout=config.attention_dropout,
    )


def build_generator(
    config: EncoderConfig,
    seed_or_rng,
    ratio: float = GENERATOR_RATIO,
    prefix: str = "generator",
) -> tuple[EncoderConfig, dict[str, Parameter]]:
    """Generator config + parameters, embeddings excluded (shared).

    The MLM output ties to the shared token embedding matrix; only the
    transform and the per-token output bias are generator-owned.
    """
    gen_cfg = scaled_generator_config(config, ratio)
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else stream_rng(seed_or_rng, rng_streams.INIT)
    )
    params = init_params(gen_cfg, rng, prefix=prefix, include_embeddings=False)
    e = config.embedding_size
    params[f"{prefix}/mlm/dense/weight"] = Parameter(
        truncated_normal(rng, (gen_cfg.hidden, e)), name=f"{prefix}/mlm/dense/weight"
    )
    params[f"{prefix}/mlm/dense/bias"] = Parameter(
        np.zeros(e, np.float32), name=f"{prefix}/mlm/dense/bias", no_decay=True
    )
    params[f"{prefix}/mlm/norm/gain"] = Parameter(
        np.ones(e, np.float32), name=f"{prefix}/mlm/norm/gain", no_decay=True
    )
    params[f"{prefix}/mlm/norm/bias"] = Parameter(
        np.zeros(e, np.float32), name=f"{prefix}/mlm/norm/bias", no_decay=True
    )
    params[f"{prefix}/mlm/output_bias"] = Parameter(
        np.zeros(config.vocab_size, np.float32),
        name=f"{prefix}/mlm/output_bias",
        no_decay=True,
    )
    return gen_cfg, params


def mlm_logits(
    params: Mapping[str, Parameter],
    hidden_at_plan: Tensor,
    prefix: str = "generator",
    embeddings_from: str = "encoder",
) -> Tensor:
    """Vocabulary logits [n_plan, vocab] from generator states at plan positions."""
    h = linear(
        hidden_at_plan,
        params[f"{prefix}/mlm/dense/weight"],
        params[f"{prefix}/mlm/dense/bias"],
    )
    h = gelu(h)
    h = layer_norm(h, params[f"{prefix}/mlm/norm/gain"], params[f"{prefix}/mlm/norm/bias"])
    table = params[f"{embeddings_from}/embeddings/token"]
    logits = matmul(h, transpose(table, (1, 0)))
    return add(logits, params[f"{prefix}/mlm/output_bias"])


def init_rtd_head(config: EncoderConfig, seed_or_rng, prefix: str = "rtd") -> dict[str, Parameter]:
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else stream_rng(seed_or_rng, rng_streams.INIT)
    )
    h = config.hidden
    return {
        f"{prefix}/dense/weight": Parameter(
            truncated_normal(rng, (h, h)), name=f"{prefix}/dense/weight"
        ),
        f"{prefix}/dense/bias": Parameter(
            np.zeros(h, np.float32), name=f"{prefix}/dense/bias", no_decay=True
        ),
        f"{prefix}/logit/weight": Parameter(
            truncated_normal(rng, (h, 1)), name=f"{prefix}/logit/weight"
        ),
        f"{prefix}/logit/bias": Parameter(
            np.zeros(1, np.float32), name=f"{prefix}/logit/bias", no_decay=True
        ),
    }


def rtd_logits(params: Mapping[str, Parameter], hidden: Tensor, prefix: str = "rtd") -> Tensor:
    """Per-position replaced-vs-original logit [batch, time]."""
    h = gelu(linear(hidden, params[f"{prefix}/dense/weight"], params[f"{prefix}/dense/bias"]))
    out = linear(h, params[f"{prefix}/logit/weight"], params[f"{prefix}/logit/bias"])
    return reshape(out, out.shape[:-1])


def gumbel_argmax(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical sample per row at temperature 1 (Gumbel-max)."""
    return np.argmax(logits + rng.gumbel(size=logits.shape), axis=-1)


def generator_sample(
    params: Mapping[str, Parameter],
    gen_config: EncoderConfig,
    masked_input_ids: np.ndarray,
    attention_mask: np.ndarray,
    segment_ids: np.ndarray,
    plans: Sequence[MaskingPlan],
    rng: np.random.Generator,
    prefix: str = "generator",
    embeddings_from: str = "encoder",
) -> np.ndarray:
    """Corrupted ids: generator samples at plan positions, originals elsewhere.

    Evaluation-mode forward; nothing here touches a tape, so no gradient can
    flow through the samples.
    """
    rows, cols = plan_arrays(plans)
    hidden = encode_batch(
        params, gen_config, masked_input_ids, attention_mask, segment_ids,
        prefix=prefix, embeddings_from=embeddings_from,
    )
    logits = mlm_logits(params, gather_positions(hidden, rows, cols), prefix, embeddings_from)
    corrupted = np.asarray(masked_input_ids).copy()
    corrupted[rows, cols] = gumbel_argmax(logits.data, rng)
    return corrupted


# ---------------------------------------------------------------------------
# Batch assembly and joint loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JointLossConfig:
    lambda_disc: float = LAMBDA_DISC
    generator_size_ratio: float = GENERATOR_RATIO

    def __post_init__(self):
        if self.lambda_disc <= 0:
            raise ValueError(f"lambda_disc {self.lambda_disc} must be positive")
        if not 0.0 < self.generator_size_ratio <= 1.0:
            raise ValueError(
                f"generator_size_ratio {self.generator_size_ratio} outside (0, 1]"
            )


@dataclass
class RtdBatch:
    input_ids: np.ndarray
    attention_mask: np.ndarray
    segment_ids: np.ndarray
    masked_input_ids: np.ndarray
    corrupted_ids: np.ndarray
    rtd_labels: np.ndarray
    plans: tuple[MaskingPlan, ...]


def plan_arrays(plans: Sequence[MaskingPlan]) -> tuple[np.ndarray, np.ndarray]:
    """Flatten per-row plans to parallel (row, column) index arrays."""
    rows = np.array(
        [r for r, plan in enumerate(plans) for _ in plan.positions], dtype=np.int64
    )
    cols = np.array(
        [p for plan in plans for p in plan.positions], dtype=np.int64
    )
    return rows, cols


def rtd_label_matrix(
    input_ids: np.ndarray,
    corrupted_ids: np.ndarray,
    attention_mask: np.ndarray,
    plans: Sequence[MaskingPlan],
) -> np.ndarray:
    """replaced exactly where a plan position got a token != the original."""
    labels = np.where(attention_mask == 1, LABEL_ORIGINAL, LABEL_IGNORE)
    rows, cols = plan_arrays(plans)
    replaced = corrupted_ids[rows, cols] != input_ids[rows, cols]
    labels[rows[replaced], cols[replaced]] = LABEL_REPLACED
    return labels


def make_rtd_batch(
    encodings: Sequence[Encoding],
    vocab: Vocabulary,
    mask_rng: np.random.Generator,
    sampler: Callable[[np.ndarray, np.ndarray, np.ndarray, Sequence[MaskingPlan]], np.ndarray],
    rate: float = MASK_RATE,
) -> RtdBatch:
    """Mask a batch and corrupt it through ``sampler`` (the generator)."""
    input_ids = np.array([e.ids for e in encodings], dtype=np.int64)
    attention_mask = np.array([e.attention_mask for e in encodings], dtype=np.int64)
    segment_ids = np.array([e.segment_ids for e in encodings], dtype=np.int64)
    plans = tuple(sample_masking(e, mask_rng, rate) for e in encodings)
    masked = input_ids.copy()
    rows, cols = plan_arrays(plans)
    masked[rows, cols] = vocab.mask_id
    corrupted = sampler(masked, attention_mask, segment_ids, plans)
    labels = rtd_label_matrix(input_ids, corrupted, attention_mask, plans)
    return RtdBatch(
        input_ids=input_ids,
        attention_mask=attention_mask,
        segment_ids=segment_ids,
        masked_input_ids=masked,
        corrupted_ids=corrupted,
        rtd_labels=labels,
        plans=plans,
    )


@dataclass
class LossBreakdown:
    total: Tensor
    mlm: Tensor
    rtd: Tensor


def joint_loss(
    gen_logits: Tensor,
    disc_logits: Tensor,
    batch: RtdBatch,
    cfg: JointLossConfig,
) -> LossBreakdown:
    """L = L_MLM + lambda * L_RTD.

    L_MLM averages over plan positions only; L_RTD averages binary
    cross-entropy over every non-pad position.
    """
    originals = np.concatenate([plan.original_ids for plan in batch.plans]).astype(np.int64)
    mlm = cross_entropy(gen_logits, originals)
    valid = (batch.rtd_labels != LABEL_IGNORE).astype(np.float32)
    targets = (batch.rtd_labels == LABEL_REPLACED).astype(np.float32)
    rtd = binary_cross_entropy(disc_logits, targets, mask=valid)
    return LossBreakdown(total=add(mlm, scale(rtd, cfg.lambda_disc)), mlm=mlm, rtd=rtd)


def discriminator_accuracy(disc_logits: np.ndarray, rtd_labels: np.ndarray) -> dict:
    """Per-class detection accuracy; balanced = mean over classes present."""
    pred_replaced = disc_logits > 0.0
    out: dict[str, float] = {}
    accs = []
    for value, key in ((LABEL_ORIGINAL, "acc_original"), (LABEL_REPLACED, "acc_replaced")):
        sel = rtd_labels == value
        if sel.any():
            acc = float((pred_replaced[sel] == (value == LABEL_REPLACED)).mean())
            out[key] = acc
            accs.append(acc)
        else:
            out[key] = float("nan")
    out["balanced_accuracy"] = float(np.mean(accs)) if accs else float("nan")
    return out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class PretrainResult:
    params: dict[str, Parameter]
    config: EncoderConfig
    gen_config: EncoderConfig
    metrics: list[dict]
    steps_done: int


def batch_rows(seed: int, step: int, batch_size: int, n: int, _cache={}) -> list[int]:
    """Deterministic cycling order: reshuffle each pass over the corpus."""
    out = []
    for j in range(batch_size):
        k = step * batch_size + j
        epoch, offset = divmod(k, n)
        key = (seed, epoch, n)
        if _cache.get("key") != key:
            _cache["key"] = key
            _cache["perm"] = stream_rng(seed, rng_streams.DATA_ORDER, epoch).permutation(n)
        out.append(int(_cache["perm"][offset]))
    return out


def evaluate_batch(
    params: Mapping[str, Parameter],
    config: EncoderConfig,
    gen_config: EncoderConfig,
    batch: RtdBatch,
    loss_cfg: JointLossConfig | None = None,
) -> tuple[LossBreakdown, np.ndarray]:
    """Joint loss and discriminator logits for a prepared batch, eval mode."""
    loss_cfg = loss_cfg or JointLossConfig()
    rows, cols = plan_arrays(batch.plans)
    gen_hidden = encode_batch(
        params, gen_config, batch.masked_input_ids, batch.attention_mask,
        batch.segment_ids, prefix="generator", embeddings_from="encoder",
    )
    gen_logits = mlm_logits(params, gather_positions(gen_hidden, rows, cols))
    disc_hidden = encode_batch(
        params, config, batch.corrupted_ids, batch.attention_mask, batch.segment_ids
    )
    disc_logits = rtd_logits(params, disc_hidden)
    return joint_loss(gen_logits, disc_logits, batch, loss_cfg), disc_logits.data


def pretrain(
    sequences: Sequence[Encoding] | PackResult,
    vocab: Vocabulary,
    config: EncoderConfig,
    *,
    steps: int,
    batch_size: int,
    learning_rate: float = 2e-4,
    warmup_steps: int | None = None,
    adam_beta1: float = 0.9,
    adam_beta2: float = 0.999,
    adam_eps: float = 1e-6,
    weight_decay: float = 0.01,
    mask_rate: float = MASK_RATE,
    loss_cfg: JointLossConfig | None = None,
    seed: int = 0,
    log_every: int = 50,
    metrics_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every: int | None = None,
    resume_from: str | Path | None = None,
) -> PretrainResult:
    """Run the RTD objective for ``steps`` optimizer steps.

    ``resume_from`` restores parameters, Adam moments, and the step counter
    from a training-state checkpoint; because every stochastic choice is
    keyed by (seed, step), the resumed run is bitwise the uninterrupted one.
    """
    packed = sequences.sequences if isinstance(sequences, PackResult) else list(sequences)
    if not packed:
        raise ValueError("empty corpus: nothing to pretrain on")
    loss_cfg = loss_cfg or JointLossConfig()
    if len(vocab) != config.vocab_size:
        raise ConfigError(
            f"vocabulary size {len(vocab)} does not match config vocab_size {config.vocab_size}"
        )

    gen_config = scaled_generator_config(config, loss_cfg.generator_size_ratio)
    start_step = 0
    adam_state = None
    if resume_from is not None:
        loaded = load_checkpoint(resume_from)
        stored_cfg = EncoderConfig.from_dict(loaded.manifest.encoder_config)
        if stored_cfg != config:
            raise ConfigError(
                "checkpoint encoder config does not match the requested config"
            )
        params = loaded.params
        adam_state = loaded.optimizer
        start_step = loaded.manifest.step
        if adam_state is None:
            raise TrainingError(f"{resume_from}: no optimizer state; cannot resume")
    else:
        init_rng = stream_rng(seed, rng_streams.INIT)
        params = init_params(config, init_rng)
        _, gen_params = build_generator(config, init_rng, loss_cfg.generator_size_ratio)
        params.update(gen_params)
        params.update(init_rtd_head(config, init_rng))

    schedule = LrSchedule(
        base_lr=learning_rate,
        warmup_steps=warmup_steps if warmup_steps is not None else max(1, steps // 10),
        total_steps=steps,
    )
    adam = Adam(
        params, beta1=adam_beta1, beta2=adam_beta2, eps=adam_eps, weight_decay=weight_decay
    )
    if adam_state is not None:
        adam.state = adam_state

    metrics: list[dict] = []
    sink = open(metrics_path, "a", encoding="utf-8") if metrics_path else None

    def checkpoint(step_now: int) -> None:
        if checkpoint_dir is None:
            return
        out = Path(checkpoint_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            out / f"state-{step_now:07d}.ckpt", params,
            encoder_config=config, component="discriminator",
            step=step_now, seed=seed, optimizer=adam.state,
            extras={
                "contents": "pretrain-state",
                "generator_config": gen_config.to_dict(),
                "lambda_disc": loss_cfg.lambda_disc,
                "generator_size_ratio": loss_cfg.generator_size_ratio,
                "mask_rate": mask_rate,
            },
        )

    try:
        for step in range(start_step, steps):
            rows_idx = batch_rows(seed, step, batch_size, len(packed))
            encodings = [packed[i] for i in rows_idx]
            mask_rng = stream_rng(seed, rng_streams.MASKING, step)
            sample_rng = stream_rng(seed, rng_streams.SAMPLING, step)
            drop_rng = stream_rng(seed, rng_streams.DROPOUT, step)

            with Tape() as tape:
                # generator forward happens inside the sampler so its logits
                # are computed once; sampling reads .data, which detaches it
                gen_logits_box: list[Tensor] = []

                def sampler(masked, attn, segs, plans):
                    rws, cls_ = plan_arrays(plans)
                    hidden = encode_batch(
                        params, gen_config, masked, attn, segs,
                        train=True, rng=drop_rng,
                        prefix="generator", embeddings_from="encoder",
                    )
                    logits = mlm_logits(params, gather_positions(hidden, rws, cls_))
                    gen_logits_box.append(logits)
                    corrupted = masked.copy()
                    corrupted[rws, cls_] = gumbel_argmax(logits.data, sample_rng)
                    return corrupted

                batch = make_rtd_batch(encodings, vocab, mask_rng, sampler, mask_rate)
                disc_hidden = encode_batch(
                    params, config, batch.corrupted_ids, batch.attention_mask,
                    batch.segment_ids, train=True, rng=drop_rng,
                )
                disc_logits = rtd_logits(params, disc_hidden)
                losses = joint_loss(gen_logits_box[0], disc_logits, batch, loss_cfg)

            total = losses.total.item()
            if not math.isfinite(total):
                raise TrainingError(f"non-finite loss at step {step + 1}")
            grads = backward(tape, losses.total, params)
            adam.step(grads, lr_at(schedule, step + 1))

            done = step + 1
            if done % log_every == 0 or done == steps:
                record = {
                    "step": done,
                    "lr": lr_at(schedule, done),
                    "loss": total,
                    "loss_mlm": losses.mlm.item(),
                    "loss_rtd": losses.rtd.item(),
                    **discriminator_accuracy(disc_logits.data, batch.rtd_labels),
                }
                metrics.append(record)
                if sink:
                    sink.write(json.dumps(record, sort_keys=True) + "\n")
                    sink.flush()
            if checkpoint_every and done % checkpoint_every == 0 and done < steps:
                checkpoint(done)
    finally:
        if sink:
            sink.close()

    checkpoint(steps)
    return PretrainResult(
        params=params, config=config, gen_config=gen_config,
        metrics=metrics, steps_done=steps,
    )


def export_discriminator(
    path: str | Path,
    params: Mapping[str, Parameter],
    config: EncoderConfig,
    *,
    step: int,
    seed: int,
) -> None:
    """Write the fine-tuning artifact: encoder weights only.

    The generator and the detection head never reach this file.
    """
    disc_only = {n: p for n, p in params.items() if n.startswith("encoder/")}
    save_checkpoint(
        path, disc_only,
        encoder_config=config, component="discriminator",
        step=step, seed=seed,
    )
