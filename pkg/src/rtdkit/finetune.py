"""Fine-tuning on top of a pretrained encoder.

Three recipes share one training loop: token tagging (NER), sentence
classification (RE), and extractive span QA.  Each run clones the
pretrained encoder weights, attaches a freshly initialized head, and
trains with layerwise learning-rate decay, a linear schedule with short
warmup, and no weight decay.  Factoid QA is a two-stage recipe: the
span head trained on general-domain QA data is carried into the
biomedical stage and trained further at a much smaller learning rate.

All randomness is keyed by (seed, purpose, step or epoch), so a run is a
pure function of its inputs; per-seed runs differ only in the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import rng as rng_streams
from .autodiff import Parameter, Tape, Tensor, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DataError, LabelSet, NerExample, QaQuestion, ReExample, write_conll
from .encoder import ConfigError, EncoderConfig, encode_batch
from .heads import (
    MAX_ANSWER_TOKENS,
    N_BEST,
    NBestList,
    TagSet,
    featurize_question,
    init_ner_head,
    init_qa_head,
    init_re_head,
    ner_featurize,
    ner_logits,
    ner_loss,
    ner_predict_tags,
    qa_decode,
    qa_logits,
    qa_loss,
    re_featurize,
    re_logits,
    re_loss,
)
from .metrics import (
    PrfReport,
    QaReport,
    aggregate_seeds,
    entity_prf,
    extract_chunks,
    qa_metrics,
    relation_prf,
)
from .optim import Adam, LrSchedule, TrainingError, layerwise_multipliers, lr_at
from .rng import stream_rng
from .text import Vocabulary


@dataclass(frozen=True)
class Recipe:
    """Per-task optimizer and featurization settings."""

    learning_rate: float
    batch_size: int
    max_seq_length: int
    document_stride: int = 0  # QA only
    epochs: int = 3
    warmup_fraction: float = 0.1
    layerwise_lr_decay: float = 0.8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-6
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate {self.learning_rate} must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be at least 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError(f"warmup fraction {self.warmup_fraction} outside [0, 1)")
        if not 0.0 < self.layerwise_lr_decay <= 1.0:
            raise ValueError(f"layerwise decay {self.layerwise_lr_decay} outside (0, 1]")


RECIPES: dict[str, Recipe] = {
    "ner": Recipe(learning_rate=5e-5, batch_size=32, max_seq_length=128),
    "re": Recipe(learning_rate=5e-5, batch_size=32, max_seq_length=128),
    "qa-squad": Recipe(
        learning_rate=3e-5, batch_size=16, max_seq_length=384, document_stride=128
    ),
    "qa-bioasq": Recipe(
        learning_rate=5e-6, batch_size=16, max_seq_length=384, document_stride=128
    ),
}
TASKS = tuple(RECIPES)


def task_recipe(task: str, **overrides) -> Recipe:
    """The default recipe for ``task``, with keyword overrides applied."""
    if task not in RECIPES:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    base = RECIPES[task]
    if not overrides:
        return base
    merged = {k: v for k, v in vars(base).items()}
    for key, value in overrides.items():
        if key not in merged:
            raise ValueError(f"unknown recipe field {key!r}")
        if value is not None:
            merged[key] = value
    return Recipe(**merged)


def _clone_params(params: Mapping[str, Parameter]) -> dict[str, Parameter]:
    return {
        n: Parameter(p.data.copy(), n, no_decay=p.no_decay) for n, p in params.items()
    }


def _encoder_subset(params: Mapping[str, Parameter]) -> dict[str, Parameter]:
    out = {n: p for n, p in params.items() if n.startswith("encoder/")}
    if "encoder/embeddings/token" not in out:
        raise ValueError("initial checkpoint carries no encoder weights")
    return out


# ---------------------------------------------------------------------------
# Shared training loop
# ---------------------------------------------------------------------------

def _fit(
    params: dict[str, Parameter],
    n_examples: int,
    loss_fn: Callable[[np.ndarray, np.random.Generator], Tensor],
    recipe: Recipe,
    num_layers: int,
    *,
    seed: int,
    log_every: int,
    metrics_path: str | Path | None,
) -> list[dict]:
    """Epoch loop over shuffled minibatches; returns the metric records."""
    steps_per_epoch = -(-n_examples // recipe.batch_size)
    total_steps = steps_per_epoch * recipe.epochs
    schedule = LrSchedule(
        base_lr=recipe.learning_rate,
        warmup_steps=max(1, int(recipe.warmup_fraction * total_steps + 0.5)),
        total_steps=total_steps,
    )
    adam = Adam(
        params,
        beta1=recipe.adam_beta1,
        beta2=recipe.adam_beta2,
        eps=recipe.adam_eps,
        weight_decay=recipe.weight_decay,
        lr_multipliers=layerwise_multipliers(params, recipe.layerwise_lr_decay, num_layers),
    )
    metrics: list[dict] = []
    sink = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    step = 0
    try:
        for epoch in range(recipe.epochs):
            order = stream_rng(seed, rng_streams.DATA_ORDER, epoch).permutation(n_examples)
            for lo in range(0, n_examples, recipe.batch_size):
                idx = order[lo : lo + recipe.batch_size]
                drop_rng = stream_rng(seed, rng_streams.DROPOUT, step)
                with Tape() as tape:
                    loss = loss_fn(idx, drop_rng)
                total = loss.item()
                if not math.isfinite(total):
                    raise TrainingError(f"non-finite loss at step {step + 1}")
                grads = backward(tape, loss, params)
                adam.step(grads, lr_at(schedule, step + 1))
                step += 1
                if step % log_every == 0 or step == total_steps:
                    record = {
                        "step": step,
                        "epoch": epoch,
                        "lr": lr_at(schedule, step),
                        "loss": total,
                    }
                    metrics.append(record)
                    if sink:
                        sink.write(json.dumps(record, sort_keys=True) + "\n")
                        sink.flush()
    finally:
        if sink:
            sink.close()
    return metrics


def _forward_rows(
    params: Mapping[str, Parameter],
    config: EncoderConfig,
    ids: np.ndarray,
    attn: np.ndarray,
    segs: np.ndarray,
    idx: np.ndarray | None = None,
    drop_rng: np.random.Generator | None = None,
) -> Tensor:
    if idx is not None:
        ids, attn, segs = ids[idx], attn[idx], segs[idx]
    return encode_batch(
        params, config, ids, attn, segs, train=drop_rng is not None, rng=drop_rng
    )


def _stack_encodings(encodings) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids = np.array([e.ids for e in encodings], dtype=np.int64)
    attn = np.array([e.attention_mask for e in encodings], dtype=np.int64)
    segs = np.array([e.segment_ids for e in encodings], dtype=np.int64)
    return ids, attn, segs


def _check_examples(task: str, data: Sequence, expected: type, what: str) -> None:
    if not data:
        raise DataError(f"task {task}: empty dataset")
    bad = next((x for x in data if not isinstance(x, expected)), None)
    if bad is not None:
        raise DataError(
            f"task {task} expects {what}, got {type(bad).__name__}"
        )


def _check_vocab(vocab: Vocabulary, config: EncoderConfig) -> None:
    if len(vocab) != config.vocab_size:
        raise ConfigError(
            f"vocabulary size {len(vocab)} does not match config vocab_size {config.vocab_size}"
        )


# ---------------------------------------------------------------------------
# NER
# ---------------------------------------------------------------------------

@dataclass
class NerModel:
    params: dict[str, Parameter]
    config: EncoderConfig
    tagset: TagSet


def train_ner(
    train: Sequence[NerExample],
    vocab: Vocabulary,
    init: Mapping[str, Parameter],
    config: EncoderConfig,
    *,
    tagset: TagSet | None = None,
    recipe: Recipe | None = None,
    seed: int = 0,
    log_every: int = 10,
    metrics_path: str | Path | None = None,
) -> tuple[NerModel, list[dict]]:
    _check_examples("ner", train, NerExample, "token-tagged sentences")
    _check_vocab(vocab, config)
    recipe = recipe or RECIPES["ner"]
    tagset = tagset or TagSet.from_examples(train)
    feats = ner_featurize(train, vocab, tagset, max_seq=recipe.max_seq_length)
    ids, attn, segs = _stack_encodings([f.encoding for f in feats])
    labels = np.array([f.label_ids for f in feats], dtype=np.int64)
    mask = np.array([f.loss_mask for f in feats], dtype=np.int64)

    params = _clone_params(_encoder_subset(init))
    params.update(init_ner_head(config, len(tagset), stream_rng(seed, rng_streams.HEAD_INIT)))

    def loss_fn(idx, drop_rng):
        hidden = _forward_rows(params, config, ids, attn, segs, idx, drop_rng)
        return ner_loss(ner_logits(params, hidden), labels[idx], mask[idx])

    metrics = _fit(
        params, len(feats), loss_fn, recipe, config.num_layers,
        seed=seed, log_every=log_every, metrics_path=metrics_path,
    )
    return NerModel(params, config, tagset), metrics


def predict_ner(
    model: NerModel,
    examples: Sequence[NerExample],
    vocab: Vocabulary,
    *,
    max_seq_length: int = 128,
    batch_size: int = 32,
) -> list[list[str]]:
    """Predicted tag sequence per sentence, rejoined across window splits."""
    if not examples:
        return []
    blank = [NerExample(e.tokens, ("O",) * len(e.tokens)) for e in examples]
    feats = ner_featurize(blank, vocab, model.tagset, max_seq=max_seq_length)
    ids, attn, segs = _stack_encodings([f.encoding for f in feats])
    rows = []
    for lo in range(0, len(feats), batch_size):
        sl = slice(lo, lo + batch_size)
        hidden = _forward_rows(model.params, model.config, ids[sl], attn[sl], segs[sl])
        rows.append(ner_logits(model.params, hidden).data)
    return ner_predict_tags(feats, np.concatenate(rows, axis=0), model.tagset)


def evaluate_ner(gold: Sequence[NerExample], predicted: Sequence[Sequence[str]]) -> PrfReport:
    return entity_prf(
        [extract_chunks(e.tags) for e in gold],
        [extract_chunks(tags) for tags in predicted],
    )


# ---------------------------------------------------------------------------
# RE
# ---------------------------------------------------------------------------

@dataclass
class ReModel:
    params: dict[str, Parameter]
    config: EncoderConfig
    label_set: LabelSet


def train_re(
    train: Sequence[ReExample],
    vocab: Vocabulary,
    init: Mapping[str, Parameter],
    config: EncoderConfig,
    label_set: LabelSet,
    *,
    recipe: Recipe | None = None,
    seed: int = 0,
    log_every: int = 10,
    metrics_path: str | Path | None = None,
) -> tuple[ReModel, list[dict]]:
    _check_examples("re", train, ReExample, "labeled sentence pairs")
    _check_vocab(vocab, config)
    recipe = recipe or RECIPES["re"]
    classes = label_set.labels
    to_id = {label: i for i, label in enumerate(classes)}
    unknown = sorted({e.label for e in train} - set(classes))
    if unknown:
        raise DataError(f"unknown relation label(s) {unknown}")
    encs = re_featurize([e.sentence for e in train], vocab, max_seq=recipe.max_seq_length)
    ids, attn, segs = _stack_encodings(encs)
    labels = np.array([to_id[e.label] for e in train], dtype=np.int64)

    params = _clone_params(_encoder_subset(init))
    params.update(init_re_head(config, len(classes), stream_rng(seed, rng_streams.HEAD_INIT)))

    def loss_fn(idx, drop_rng):
        hidden = _forward_rows(params, config, ids, attn, segs, idx, drop_rng)
        return re_loss(re_logits(params, hidden), labels[idx])

    metrics = _fit(
        params, len(train), loss_fn, recipe, config.num_layers,
        seed=seed, log_every=log_every, metrics_path=metrics_path,
    )
    return ReModel(params, config, label_set), metrics


def predict_re(
    model: ReModel,
    examples: Sequence[ReExample],
    vocab: Vocabulary,
    *,
    max_seq_length: int = 128,
    batch_size: int = 32,
) -> list[str]:
    if not examples:
        return []
    encs = re_featurize([e.sentence for e in examples], vocab, max_seq=max_seq_length)
    ids, attn, segs = _stack_encodings(encs)
    classes = model.label_set.labels
    out = []
    for lo in range(0, len(encs), batch_size):
        sl = slice(lo, lo + batch_size)
        hidden = _forward_rows(model.params, model.config, ids[sl], attn[sl], segs[sl])
        picks = np.argmax(re_logits(model.params, hidden).data, axis=-1)
        out.extend(classes[i] for i in picks)
    return out


def evaluate_re(
    gold: Sequence[ReExample], predicted: Sequence[str], label_set: LabelSet
) -> PrfReport:
    return relation_prf(
        [e.label for e in gold], list(predicted), label_set.positive, label_set.labels
    )


# ---------------------------------------------------------------------------
# QA
# ---------------------------------------------------------------------------

@dataclass
class QaModel:
    params: dict[str, Parameter]
    config: EncoderConfig


def train_qa(
    train: Sequence[QaQuestion],
    vocab: Vocabulary,
    init: Mapping[str, Parameter],
    config: EncoderConfig,
    *,
    recipe: Recipe | None = None,
    seed: int = 0,
    log_every: int = 10,
    metrics_path: str | Path | None = None,
) -> tuple[QaModel, list[dict]]:
    """Span training; windows without the gold answer target the cls slot.

    When ``init`` already carries a span head (a model from the first QA
    stage), the head is trained further instead of being re-initialized.
    """
    _check_examples("qa", train, QaQuestion, "grouped questions with contexts")
    _check_vocab(vocab, config)
    recipe = recipe or RECIPES["qa-squad"]
    feats = [
        f
        for q in train
        for f in featurize_question(
            q, vocab, max_seq=recipe.max_seq_length, stride=recipe.document_stride
        )
    ]
    ids, attn, segs = _stack_encodings([f.encoding for f in feats])
    starts = np.array([f.start_position for f in feats], dtype=np.int64)
    ends = np.array([f.end_position for f in feats], dtype=np.int64)

    params = _clone_params(_encoder_subset(init))
    if "head/qa/start/weight" in init:
        params.update(
            _clone_params({n: p for n, p in init.items() if n.startswith("head/qa/")})
        )
    else:
        params.update(init_qa_head(config, stream_rng(seed, rng_streams.HEAD_INIT)))

    def loss_fn(idx, drop_rng):
        hidden = _forward_rows(params, config, ids, attn, segs, idx, drop_rng)
        sl, el = qa_logits(params, hidden, attn[idx])
        return qa_loss(sl, el, starts[idx], ends[idx])

    metrics = _fit(
        params, len(feats), loss_fn, recipe, config.num_layers,
        seed=seed, log_every=log_every, metrics_path=metrics_path,
    )
    return QaModel(params, config), metrics


def predict_qa(
    model: QaModel,
    questions: Sequence[QaQuestion],
    vocab: Vocabulary,
    *,
    max_seq_length: int = 384,
    document_stride: int = 128,
    batch_size: int = 16,
    n_best: int = N_BEST,
    max_answer_tokens: int = MAX_ANSWER_TOKENS,
) -> dict[str, NBestList]:
    """Ranked answer lists per question id, merged across windows."""
    if not questions:
        return {}
    feats = [
        f
        for q in questions
        for f in featurize_question(
            q, vocab, max_seq=max_seq_length, stride=document_stride, with_answers=False
        )
    ]
    ids, attn, segs = _stack_encodings([f.encoding for f in feats])
    start_rows, end_rows = [], []
    for lo in range(0, len(feats), batch_size):
        sl = slice(lo, lo + batch_size)
        hidden = _forward_rows(model.params, model.config, ids[sl], attn[sl], segs[sl])
        s, e = qa_logits(model.params, hidden, attn[sl])
        start_rows.append(s.data)
        end_rows.append(e.data)
    return qa_decode(
        feats,
        np.concatenate(start_rows, axis=0),
        np.concatenate(end_rows, axis=0),
        n_best=n_best,
        max_answer_tokens=max_answer_tokens,
    )


def evaluate_qa(
    gold: Sequence[QaQuestion],
    nbest: Mapping[str, Sequence[str] | NBestList],
    case_sensitive: bool = False,
) -> QaReport:
    answers = {
        qid: (cands.texts() if isinstance(cands, NBestList) else list(cands))
        for qid, cands in nbest.items()
    }
    return qa_metrics({q.id: q.synonyms for q in gold}, answers, case_sensitive)


# ---------------------------------------------------------------------------
# Model persistence
# ---------------------------------------------------------------------------

TaskModel = NerModel | ReModel | QaModel


def save_model(
    path: str | Path,
    model: TaskModel,
    task: str,
    *,
    seed: int = 0,
    step: int = 0,
) -> None:
    """Write a fine-tuned model (encoder + head) as a task-head checkpoint."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    extras: dict = {"task": task}
    if isinstance(model, NerModel):
        extras["tags"] = list(model.tagset.tags)
    elif isinstance(model, ReModel):
        extras["positive_labels"] = list(model.label_set.positive)
        extras["negative_label"] = model.label_set.negative
    save_checkpoint(
        path, model.params,
        encoder_config=model.config, component="task-head",
        step=step, seed=seed, extras=extras,
    )


def load_model(path: str | Path) -> tuple[str, TaskModel]:
    """Read a checkpoint written by :func:`save_model`."""
    loaded = load_checkpoint(path)
    if loaded.manifest.component != "task-head":
        raise ValueError(
            f"{path}: component {loaded.manifest.component!r} is not a fine-tuned model"
        )
    extras = loaded.manifest.extras or {}
    task = extras.get("task")
    if task not in TASKS:
        raise ValueError(f"{path}: missing or unknown task tag {task!r}")
    config = EncoderConfig.from_dict(loaded.manifest.encoder_config)
    if task == "ner":
        model: TaskModel = NerModel(loaded.params, config, TagSet(tuple(extras["tags"])))
    elif task == "re":
        model = ReModel(
            loaded.params, config,
            LabelSet(tuple(extras["positive_labels"]), extras["negative_label"]),
        )
    else:
        model = QaModel(loaded.params, config)
    return task, model


# ---------------------------------------------------------------------------
# Multi-seed orchestration
# ---------------------------------------------------------------------------

@dataclass
class SeedRun:
    seed: int
    model: TaskModel
    metrics: list[dict]
    report: PrfReport | QaReport | None


@dataclass
class FinetuneOutcome:
    task: str
    runs: list[SeedRun]
    aggregate: dict | None


def finetune(
    task: str,
    init: Mapping[str, Parameter],
    config: EncoderConfig,
    vocab: Vocabulary,
    train_data: Sequence,
    eval_data: Sequence | None = None,
    *,
    label_set: LabelSet | None = None,
    seeds: int | Sequence[int] = 1,
    recipe: Recipe | None = None,
    log_every: int = 10,
    metrics_dir: str | Path | None = None,
) -> FinetuneOutcome:
    """Train one model per seed; evaluate each on ``eval_data`` when given.

    ``seeds`` is either a count (seeds 0..n-1) or an explicit list.  The
    aggregate block reports the across-seed means of the per-seed reports.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    recipe = recipe or RECIPES[task]
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    if not seed_list:
        raise ValueError("no seeds requested")
    if task == "re" and label_set is None:
        raise ValueError("task re requires a label_set")

    runs: list[SeedRun] = []
    for seed in seed_list:
        metrics_path = (
            Path(metrics_dir) / f"seed-{seed}-metrics.jsonl" if metrics_dir else None
        )
        if task == "ner":
            model, metrics = train_ner(
                train_data, vocab, init, config,
                recipe=recipe, seed=seed, log_every=log_every, metrics_path=metrics_path,
            )
            report = None
            if eval_data is not None:
                _check_examples("ner", eval_data, NerExample, "token-tagged sentences")
                tags = predict_ner(
                    model, eval_data, vocab, max_seq_length=recipe.max_seq_length
                )
                report = evaluate_ner(eval_data, tags)
        elif task == "re":
            model, metrics = train_re(
                train_data, vocab, init, config, label_set,
                recipe=recipe, seed=seed, log_every=log_every, metrics_path=metrics_path,
            )
            report = None
            if eval_data is not None:
                _check_examples("re", eval_data, ReExample, "labeled sentence pairs")
                pred = predict_re(
                    model, eval_data, vocab, max_seq_length=recipe.max_seq_length
                )
                report = evaluate_re(eval_data, pred, label_set)
        else:
            model, metrics = train_qa(
                train_data, vocab, init, config,
                recipe=recipe, seed=seed, log_every=log_every, metrics_path=metrics_path,
            )
            report = None
            if eval_data is not None:
                _check_examples("qa", eval_data, QaQuestion, "grouped questions with contexts")
                nbest = predict_qa(
                    model, eval_data, vocab,
                    max_seq_length=recipe.max_seq_length,
                    document_stride=recipe.document_stride,
                )
                report = evaluate_qa(eval_data, nbest)
        runs.append(SeedRun(seed=seed, model=model, metrics=metrics, report=report))

    aggregate = None
    if all(r.report is not None for r in runs):
        aggregate = aggregate_seeds([r.report for r in runs])
    return FinetuneOutcome(task=task, runs=runs, aggregate=aggregate)


# ---------------------------------------------------------------------------
# Prediction files
# ---------------------------------------------------------------------------

def write_ner_predictions(
    path: str | Path,
    examples: Sequence[NerExample],
    predicted: Sequence[Sequence[str]],
) -> None:
    """Sentences with the predicted tag column, one token per line."""
    if len(examples) != len(predicted):
        raise ValueError(f"{len(examples)} sentences vs {len(predicted)} predictions")
    rows = [NerExample(e.tokens, tuple(tags)) for e, tags in zip(examples, predicted)]
    write_conll(rows, path)


def write_re_predictions(
    path: str | Path, ids: Sequence[str], labels: Sequence[str]
) -> None:
    """Two tab-separated columns: example id, predicted label."""
    if len(ids) != len(labels):
        raise ValueError(f"{len(ids)} ids vs {len(labels)} labels")
    with open(path, "w", encoding="utf-8") as f:
        for ex_id, label in zip(ids, labels):
            f.write(f"{ex_id}\t{label}\n")


def read_re_predictions(path: str | Path) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}: line {i}: expected 2 tab-separated fields")
            out.append((parts[0], parts[1]))
    return out


def write_qa_predictions(
    path: str | Path, answers: Mapping[str, Sequence[str] | NBestList]
) -> None:
    """Question id -> ordered candidate answers, at most five each."""
    payload = {
        qid: (c.texts() if isinstance(c, NBestList) else list(c))[:N_BEST]
        for qid, c in answers.items()
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=1, sort_keys=True)
        f.write("\n")


def read_qa_predictions(path: str | Path) -> dict[str, list[str]]:
    with open(path, encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(payload, dict):
        raise DataError(f"{path}: expected an object mapping question ids to answers")
    out = {}
    for qid, cands in payload.items():
        if not isinstance(cands, list) or not all(isinstance(c, str) for c in cands):
            raise DataError(f"{path}: question {qid}: candidates must be a string list")
        out[qid] = cands
    return out
