"""Command-line surface: pretrain, finetune, predict, evaluate, score-bioasq.

Every command writes a run manifest (config hash, seed, library versions)
beside its outputs and exits 0 only when no error occurred.  Numeric work
runs under a single BLAS thread so identical inputs give byte-identical
metric logs.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .config import RunConfig, default_config, load_config
from .data import (
    CHEMPROT_LABELS, DDI_LABELS, DataError, read_bioasq, read_conll,
    read_re_tsv, read_squad, stream_pretrain_corpus,
)
from .encoder import ConfigError, EncoderConfig
from .finetune import (
    Recipe, evaluate_qa, finetune, load_model, predict_ner, predict_qa,
    predict_re, read_qa_predictions, read_re_predictions, save_model,
    write_ner_predictions, write_qa_predictions, write_re_predictions,
)
from .metrics import (
    entity_prf, extract_chunks, format_prf, format_qa, format_score_table,
    qa_metrics, relation_prf, report_as_dict, score_table,
)
from .optim import TrainingError
from .pretraining import JointLossConfig, export_discriminator, pack_sequences, pretrain
from .text import (
    VocabularyError, load_vocabulary, save_vocabulary, vocabulary_from_corpus,
)

FINETUNE_TASKS = ("ner", "re", "qa-squad", "qa-bioasq")
LABEL_SETS = {"chemprot": CHEMPROT_LABELS, "ddi": DDI_LABELS}
_ERRORS = (
    DataError, ConfigError, CheckpointError, VocabularyError, TrainingError,
    ValueError, OSError,
)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _write_manifest(anchor: Path, command: str, *, config_hash=None, seed=None,
                    arguments=None) -> None:
    """Run manifest beside the outputs: directory gets run-manifest.json,
    a file output gets <name>.manifest.json next to it."""
    if anchor.is_dir():
        target = anchor / "run-manifest.json"
    else:
        target = anchor.parent / (anchor.name + ".manifest.json")
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "versions": {
            "rtdkit": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "arguments": arguments or {},
    }
    target.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                      encoding="utf-8")


def _resolve_vocab(flag: str | None, anchor: Path):
    """--vocab wins; otherwise vocab.txt beside the anchor path."""
    if flag:
        return load_vocabulary(flag)
    candidate = (anchor / "vocab.txt") if anchor.is_dir() else (anchor.parent / "vocab.txt")
    if candidate.exists():
        return load_vocabulary(candidate)
    raise DataError(f"no vocabulary: pass --vocab or place vocab.txt at {candidate}")


def _recipe_from_config(cfg: RunConfig) -> Recipe:
    return Recipe(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        max_seq_length=cfg.max_seq_length,
        document_stride=cfg.document_stride,
        epochs=cfg.train_epochs if cfg.train_epochs is not None else 3,
        layerwise_lr_decay=cfg.layerwise_lr_decay,
        adam_beta1=cfg.adam_beta1,
        adam_beta2=cfg.adam_beta2,
        adam_eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )


def _read_qa_gold(path: str):
    """SQuAD-style and BioASQ-style files are told apart by their top key."""
    with open(path, encoding="utf-8") as fh:
        head = json.load(fh)
    if not isinstance(head, dict):
        raise DataError(f"{path}: expected a JSON object")
    if "data" in head:
        return read_squad(path)
    if "questions" in head:
        return read_bioasq(path)
    raise DataError(f"{path}: neither a SQuAD-style nor a BioASQ-style file")


def _task_files(task: str, data_dir: Path) -> tuple[Path, Path | None]:
    names = {"ner": ("train.conll", "dev.conll"),
             "re": ("train.tsv", "dev.tsv"),
             "qa-squad": ("train.json", "dev.json"),
             "qa-bioasq": ("train.json", "dev.json")}
    train_name, dev_name = names[task]
    train = data_dir / train_name
    if not train.exists():
        raise DataError(f"task {task}: missing {train}")
    dev = data_dir / dev_name
    return train, dev if dev.exists() else None


def _load_task_data(task: str, path: Path, label_key: str):
    if task == "ner":
        return read_conll(path)
    if task == "re":
        return read_re_tsv(path, LABEL_SETS[label_key])
    if task == "qa-squad":
        return read_squad(path)
    return _read_qa_gold(path)   # qa-bioasq fine-tuning data is often converted


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_pretrain(args) -> int:
    cfg = load_config(args.config, task="pretrain")
    if cfg.task != "pretrain":
        raise ConfigError(f"pretrain got a config for task {cfg.task!r}")
    corpus = Path(args.corpus)
    pattern = corpus / "*.txt" if corpus.is_dir() else corpus
    documents = list(stream_pretrain_corpus(pattern))
    if args.vocab:
        vocab = load_vocabulary(args.vocab)
    elif corpus.is_dir() and (corpus / "vocab.txt").exists():
        vocab = load_vocabulary(corpus / "vocab.txt")
    else:
        vocab = vocabulary_from_corpus(documents)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    enc_cfg = cfg.encoder_config(len(vocab.entries))
    packed = pack_sequences(documents, vocab, cfg.max_seq_length)
    result = pretrain(
        packed, vocab, enc_cfg,
        steps=cfg.train_steps,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        warmup_steps=cfg.warmup_steps,
        adam_beta1=cfg.adam_beta1,
        adam_beta2=cfg.adam_beta2,
        adam_eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
        mask_rate=cfg.mask_rate,
        loss_cfg=JointLossConfig(generator_size_ratio=cfg.generator_size),
        seed=cfg.seed,
        log_every=args.log_every,
        metrics_path=out / "metrics.jsonl",
        checkpoint_dir=out / "checkpoints",
        checkpoint_every=args.checkpoint_every,
        resume_from=args.resume,
    )
    export_discriminator(out / "discriminator.ckpt", result.params, enc_cfg,
                         step=result.steps_done, seed=cfg.seed)
    save_vocabulary(out / "vocab.txt", vocab)
    _write_manifest(out, "pretrain", config_hash=cfg.config_hash(), seed=cfg.seed,
                    arguments={"config": str(args.config), "corpus": str(args.corpus)})
    last = result.metrics[-1] if result.metrics else {}
    print(f"pretrained {result.steps_done} steps; "
          f"final loss {last.get('loss', float('nan')):.4f}, "
          f"balanced accuracy {last.get('balanced_accuracy', float('nan')):.4f}")
    return 0


def _cmd_finetune(args) -> int:
    task = args.task
    cfg = (load_config(args.config, task=task) if args.config
           else default_config(task))
    if cfg.task != task:
        raise ConfigError(f"--task {task} contradicts config task {cfg.task!r}")
    loaded = load_checkpoint(args.init)
    if task == "qa-bioasq":
        extras = loaded.manifest.extras or {}
        if loaded.manifest.component != "task-head" or extras.get("task") != "qa-squad":
            raise CheckpointError(
                "qa-bioasq requires an --init checkpoint produced by a qa-squad run"
            )
    enc_cfg = EncoderConfig.from_dict(loaded.manifest.encoder_config)
    if cfg.max_seq_length > enc_cfg.max_positions:
        raise ConfigError(
            f"max_seq_length {cfg.max_seq_length} exceeds the checkpoint's "
            f"{enc_cfg.max_positions} positions; pass --config with a smaller value"
        )
    vocab = _resolve_vocab(args.vocab, Path(args.init))
    data_dir = Path(args.data)
    train_path, dev_path = _task_files(task, data_dir)
    train_data = _load_task_data(task, train_path, args.labels)
    eval_data = _load_task_data(task, dev_path, args.labels) if dev_path else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outcome = finetune(
        task, loaded.params, enc_cfg, vocab, train_data, eval_data,
        label_set=LABEL_SETS[args.labels] if task == "re" else None,
        seeds=args.seeds,
        recipe=_recipe_from_config(cfg),
        log_every=args.log_every,
        metrics_dir=out,
    )
    for run in outcome.runs:
        seed_dir = out / f"seed-{run.seed}"
        seed_dir.mkdir(exist_ok=True)
        save_model(seed_dir / "model.ckpt", run.model, task, seed=run.seed)
        # each seed directory is a complete model: predict resolves vocab beside it
        save_vocabulary(seed_dir / "vocab.txt", vocab)
    save_vocabulary(out / "vocab.txt", vocab)
    report = {
        "task": task,
        "seeds": [run.seed for run in outcome.runs],
        "per_seed": {str(run.seed): report_as_dict(run.report)
                     for run in outcome.runs if run.report is not None},
        "aggregate": outcome.aggregate,
    }
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n",
                                     encoding="utf-8")
    _write_manifest(out, "finetune", config_hash=cfg.config_hash(),
                    seed=[run.seed for run in outcome.runs],
                    arguments={"task": task, "init": str(args.init),
                               "data": str(args.data), "seeds": args.seeds})
    print(f"fine-tuned {task} over {len(outcome.runs)} seed(s)")
    if outcome.aggregate:
        line = ", ".join(f"{k} {v:.2f}" if isinstance(v, float) else f"{k} {v}"
                         for k, v in outcome.aggregate.items())
        print(f"aggregate: {line}")
    return 0


def _cmd_predict(args) -> int:
    saved_task, model = load_model(args.model)
    if saved_task != args.task:
        raise CheckpointError(
            f"--task {args.task} contradicts the model, which was fine-tuned for {saved_task}"
        )
    vocab = _resolve_vocab(args.vocab, Path(args.model))
    cfg = (load_config(args.config, task=args.task) if args.config
           else default_config(args.task))
    # prediction geometry cannot exceed the model's positional table
    max_seq = min(cfg.max_seq_length, model.config.max_positions)
    stride = min(cfg.document_stride, max(1, max_seq // 3))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.task == "ner":
        examples = read_conll(args.data)
        tags = predict_ner(model, examples, vocab,
                           max_seq_length=max_seq,
                           batch_size=cfg.batch_size)
        write_ner_predictions(out, examples, tags)
        n = len(examples)
    elif args.task == "re":
        examples = read_re_tsv(args.data, LABEL_SETS[args.labels])
        labels = predict_re(model, examples, vocab,
                            max_seq_length=max_seq,
                            batch_size=cfg.batch_size)
        write_re_predictions(out, [e.id for e in examples], labels)
        n = len(examples)
    else:
        questions = _read_qa_gold(args.data)
        nbest = predict_qa(model, questions, vocab,
                           max_seq_length=max_seq,
                           document_stride=stride,
                           batch_size=cfg.batch_size)
        write_qa_predictions(out, nbest)
        n = len(questions)
    _write_manifest(out, "predict", seed=None,
                    arguments={"task": args.task, "model": str(args.model),
                               "data": str(args.data)})
    print(f"wrote predictions for {n} examples to {out}")
    return 0


def _cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.task == "ner":
        gold = read_conll(args.gold)
        pred = read_conll(args.pred)
        if len(gold) != len(pred):
            raise DataError(
                f"gold has {len(gold)} sentences, predictions have {len(pred)}"
            )
        for i, (g, p) in enumerate(zip(gold, pred)):
            if g.tokens != p.tokens:
                raise DataError(f"sentence {i}: gold and prediction tokens differ")
        report = entity_prf([extract_chunks(e.tags) for e in gold],
                            [extract_chunks(e.tags) for e in pred])
        print(format_prf(report))
    elif args.task == "re":
        labels = LABEL_SETS[args.labels]
        gold = read_re_tsv(args.gold, labels)
        pred_map = dict(read_re_predictions(args.pred))
        missing = [e.id for e in gold if e.id not in pred_map]
        if missing:
            raise DataError(f"predictions missing ids {missing[:5]}")
        report = relation_prf([e.label for e in gold],
                              [pred_map[e.id] for e in gold],
                              positive=labels.positive, allowed=labels.labels)
        print(format_prf(report))
    else:
        questions = _read_qa_gold(args.gold)
        nbest = read_qa_predictions(args.pred)
        report = qa_metrics({q.id: q.synonyms for q in questions}, nbest,
                            case_sensitive=args.case_sensitive)
        print(format_qa(report))
    out.write_text(json.dumps(report_as_dict(report), indent=1, sort_keys=True) + "\n",
                   encoding="utf-8")
    _write_manifest(out, "evaluate", seed=None,
                    arguments={"task": args.task, "gold": str(args.gold),
                               "pred": str(args.pred)})
    return 0


def _read_mrr_table(path: str) -> dict[str, dict[str, float]]:
    """Wide TSV: header 'system<TAB>batch...', one row per system, blank
    cells for batches a system skipped."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(lines) < 2:
        raise DataError(f"{path}: need a header and at least one system row")
    header = lines[0].split("\t")
    if len(header) < 2:
        raise DataError(f"{path}: header must name at least one batch")
    batches = header[1:]
    table: dict[str, dict[str, float]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        if len(cells) != len(header):
            raise DataError(
                f"{path} line {lineno}: expected {len(header)} columns, got {len(cells)}"
            )
        system, values = cells[0], cells[1:]
        if system in table:
            raise DataError(f"{path} line {lineno}: duplicate system {system!r}")
        row = {}
        for batch, cell in zip(batches, values):
            if cell.strip():
                try:
                    row[batch] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path} line {lineno}: bad value {cell!r} for {batch}"
                    ) from None
        table[system] = row
    return table


def _cmd_score_bioasq(args) -> int:
    table = score_table(_read_mrr_table(args.mrr_table))
    print(format_score_table(table))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "batches": list(table.batches),
        "ratios": {c: {b: table.ratios[(c, b)] for b in table.batches
                       if (c, b) in table.ratios}
                   for c in table.competitors},
        "totals": dict(table.totals),
    }
    out.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n",
                   encoding="utf-8")
    _write_manifest(out, "score-bioasq", seed=None,
                    arguments={"mrr_table": str(args.mrr_table)})
    return 0


# ---------------------------------------------------------------------------
# Argument surface
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtdkit",
        description="Replaced-token-detection pretraining and biomedical task "
                    "fine-tuning, prediction, and evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="joint generator/discriminator pretraining")
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--corpus", required=True,
                   help="directory of *.txt documents (or one file/glob)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--vocab", help="vocabulary file (default: vocab.txt in the "
                                   "corpus directory, else derived from the corpus)")
    p.add_argument("--checkpoint-every", type=int, default=None, metavar="N",
                   help="also write a checkpoint every N steps")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--log-every", type=int, default=50, metavar="N")
    p.set_defaults(run=_cmd_pretrain)

    f = sub.add_parser("finetune", help="fine-tune a pretrained encoder on a task")
    f.add_argument("--task", required=True, choices=FINETUNE_TASKS)
    f.add_argument("--init", required=True,
                   help="initial checkpoint (qa-bioasq requires a qa-squad model)")
    f.add_argument("--data", required=True,
                   help="directory with train.* and optional dev.* files")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--seeds", type=int, default=1, metavar="N",
                   help="train seeds 0..N-1 and aggregate (default 1)")
    f.add_argument("--config", help="flat config file overriding the task defaults")
    f.add_argument("--vocab", help="vocabulary file (default: vocab.txt beside --init)")
    f.add_argument("--labels", choices=sorted(LABEL_SETS), default="chemprot",
                   help="relation label inventory for --task re")
    f.add_argument("--log-every", type=int, default=10, metavar="N")
    f.set_defaults(run=_cmd_finetune)

    q = sub.add_parser("predict", help="write predictions from a fine-tuned model")
    q.add_argument("--task", required=True, choices=FINETUNE_TASKS)
    q.add_argument("--model", required=True, help="task-head checkpoint")
    q.add_argument("--data", required=True, help="input file")
    q.add_argument("--out", required=True, help="prediction file to write")
    q.add_argument("--vocab", help="vocabulary file (default: vocab.txt beside --model)")
    q.add_argument("--labels", choices=sorted(LABEL_SETS), default="chemprot")
    q.add_argument("--config", help="flat config file overriding the task defaults")
    q.set_defaults(run=_cmd_predict)

    e = sub.add_parser("evaluate", help="score predictions against gold (no model)")
    e.add_argument("--task", required=True, choices=FINETUNE_TASKS)
    e.add_argument("--gold", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--out", required=True, help="JSON report to write")
    e.add_argument("--labels", choices=sorted(LABEL_SETS), default="chemprot")
    e.add_argument("--case-sensitive", action="store_true",
                   help="QA answer matching keeps case")
    e.set_defaults(run=_cmd_evaluate)

    s = sub.add_parser("score-bioasq", help="relative-MRR table analysis")
    s.add_argument("--mrr-table", required=True,
                   help="wide TSV: system, then one MRR column per batch")
    s.add_argument("--out", required=True, help="JSON report to write")
    s.set_defaults(run=_cmd_score_bioasq)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=1):
            return args.run(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
