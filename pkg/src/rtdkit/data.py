"""Corpus readers: CoNLL span labels, relation TSV, extractive QA JSON.

All readers take user-supplied paths and parse strictly: malformed input
fails with the offending line or question id rather than silently
degrading.  Nothing here downloads anything.
"""

from __future__ import annotations

import glob
import json
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from . import rng as streams
from .rng import stream_rng


class DataError(ValueError):
    """Malformed or inconsistent input data."""


# ---------------------------------------------------------------------------
# Task label sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelSet:
    """Positive relation classes plus the designated negative class."""

    positive: tuple[str, ...]
    negative: str

    @property
    def labels(self) -> tuple[str, ...]:
        return self.positive + (self.negative,)


CHEMPROT_LABELS = LabelSet(("CPR:3", "CPR:4", "CPR:5", "CPR:6", "CPR:9"), "false")
DDI_LABELS = LabelSet(("effect", "mechanism", "advice", "int"), "negative")


# ---------------------------------------------------------------------------
# Example types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NerExample:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise DataError(
                f"{len(self.tokens)} tokens but {len(self.tags)} tags"
            )


@dataclass(frozen=True)
class ReExample:
    id: str
    sentence: str
    label: str


@dataclass(frozen=True)
class CharAnswer:
    """A gold answer anchored to a character offset in its context."""

    text: str
    start: int


@dataclass(frozen=True)
class QaPair:
    """One question-context pair, the unit the model actually reads."""

    qid: str
    context: str
    answers: tuple[CharAnswer, ...]


@dataclass(frozen=True)
class QaQuestion:
    id: str
    question: str
    pairs: tuple[QaPair, ...]
    synonyms: tuple[str, ...]
    batch: str | None = None

    def __post_init__(self):
        if not self.pairs:
            raise DataError(f"question {self.id}: no contexts")


@dataclass(frozen=True)
class CorpusSplit:
    """A named split with per-class bookkeeping."""

    name: str
    examples: tuple
    counts: Mapping[str, int]

    def __post_init__(self):
        if self.name not in ("train", "validation", "test"):
            raise DataError(f"split name {self.name!r} not train/validation/test")


def re_split(name: str, examples: Sequence[ReExample]) -> CorpusSplit:
    seen = Counter(e.id for e in examples)
    dupes = sorted(k for k, n in seen.items() if n > 1)
    if dupes:
        raise DataError(f"duplicate example id(s) {dupes[:5]}")
    return CorpusSplit(name, tuple(examples), dict(Counter(e.label for e in examples)))


def ner_split(name: str, examples: Sequence[NerExample]) -> CorpusSplit:
    counts = Counter(tag[2:] for e in examples for tag in e.tags if tag.startswith("B-"))
    counts["sentences"] = len(examples)
    return CorpusSplit(name, tuple(examples), dict(counts))


def qa_split(name: str, questions: Sequence[QaQuestion]) -> CorpusSplit:
    seen = Counter(q.id for q in questions)
    dupes = sorted(k for k, n in seen.items() if n > 1)
    if dupes:
        raise DataError(f"duplicate question id(s) {dupes[:5]}")
    counts = {
        "questions": len(questions),
        "pairs": sum(len(q.pairs) for q in questions),
    }
    return CorpusSplit(name, tuple(questions), counts)


# ---------------------------------------------------------------------------
# CoNLL span labels
# ---------------------------------------------------------------------------

def _check_tag(tag: str, lineno: int) -> None:
    if tag == "O":
        return
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
        return
    raise DataError(f"line {lineno}: unknown tag {tag!r}")


def read_conll(path: str | Path) -> list[NerExample]:
    """One token per line as "token<TAB or space>tag"; blank line ends a sentence."""
    examples: list[NerExample] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush():
        if tokens:
            examples.append(NerExample(tuple(tokens), tuple(tags)))
            tokens.clear()
            tags.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                continue
            fields = line.split("\t") if "\t" in line else line.split(" ")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise DataError(
                    f"line {lineno}: expected 'token<TAB or space>tag', got {line!r}"
                )
            _check_tag(fields[1], lineno)
            tokens.append(fields[0])
            tags.append(fields[1])
    flush()
    return examples


def write_conll(examples: Iterable[NerExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            for token, tag in zip(e.tokens, e.tags):
                fh.write(f"{token}\t{tag}\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# Relation TSV
# ---------------------------------------------------------------------------

def read_re_tsv(path: str | Path, label_set: LabelSet) -> list[ReExample]:
    """Three tab-separated columns: id, pre-anonymized sentence, label."""
    allowed = set(label_set.labels)
    out: list[ReExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(
                    f"line {lineno}: expected 3 tab-separated columns, got {len(fields)}"
                )
            ex_id, sentence, label = fields
            if label not in allowed:
                raise DataError(
                    f"line {lineno}: label {label!r} not in {sorted(allowed)}"
                )
            out.append(ReExample(id=ex_id, sentence=sentence, label=label))
    if not out:
        warnings.warn(f"{path}: no examples")
    return out


# ---------------------------------------------------------------------------
# Extractive QA JSON
# ---------------------------------------------------------------------------

def _parse_qa_json(path: str | Path) -> list[tuple[str, str, str, list[CharAnswer]]]:
    """Flatten the nested schema to (pair id, question, context, answers)."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    pairs = []
    try:
        articles = doc["data"]
    except (TypeError, KeyError):
        raise DataError(f"{path}: missing top-level 'data' list") from None
    for article in articles:
        for para in article["paragraphs"]:
            context = para["context"]
            for qa in para["qas"]:
                qid, question = qa["id"], qa["question"]
                answers = []
                for ans in qa["answers"]:
                    text, start = ans["text"], int(ans["answer_start"])
                    if context[start : start + len(text)] != text:
                        raise DataError(
                            f"question {qid}: answer {text!r} not at offset {start}"
                        )
                    answers.append(CharAnswer(text=text, start=start))
                pairs.append((qid, question, context, answers))
    return pairs


def read_squad(path: str | Path) -> list[QaQuestion]:
    """v1.1 schema; every question-context pair stands alone."""
    out = []
    for qid, question, context, answers in _parse_qa_json(path):
        synonyms = tuple(dict.fromkeys(a.text for a in answers))
        out.append(
            QaQuestion(
                id=qid, question=question,
                pairs=(QaPair(qid=qid, context=context, answers=tuple(answers)),),
                synonyms=synonyms,
            )
        )
    return out


def question_group(pair_id: str) -> str:
    """Pairs from one source question share the id prefix before '_'."""
    return pair_id.split("_", 1)[0]


def read_bioasq(path: str | Path, batch: str | None = None) -> list[QaQuestion]:
    """Same JSON shape as v1.1, but pairs regroup by question id prefix."""
    grouped: dict[str, list] = {}
    for qid, question, context, answers in _parse_qa_json(path):
        grouped.setdefault(question_group(qid), []).append(
            (qid, question, context, answers)
        )
    out = []
    for gid, rows in grouped.items():
        synonyms = tuple(
            dict.fromkeys(a.text for _, _, _, answers in rows for a in answers)
        )
        out.append(
            QaQuestion(
                id=gid,
                question=rows[0][1],
                pairs=tuple(
                    QaPair(qid=qid, context=ctx, answers=tuple(ans))
                    for qid, _, ctx, ans in rows
                ),
                synonyms=synonyms,
                batch=batch,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Pretraining corpus stream
# ---------------------------------------------------------------------------

def stream_pretrain_corpus(
    pattern: str | Path, shuffle_seed: int | None = None
) -> Iterator[list[str]]:
    """Documents from text files: one sentence per line, blank line between
    documents.  Files are visited in sorted order; with ``shuffle_seed`` the
    full document list is materialized and permuted reproducibly.
    """
    paths = sorted(glob.glob(str(pattern))) if any(
        ch in str(pattern) for ch in "*?["
    ) else [str(pattern)]
    if not paths:
        raise DataError(f"no files match {pattern!r}")

    def generate() -> Iterator[list[str]]:
        for path in paths:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise DataError(f"{path}: {exc}") from None
            doc: list[str] = []
            count = 0
            for line in text.splitlines():
                if line.strip():
                    doc.append(line.strip())
                elif doc:
                    yield doc
                    count += 1
                    doc = []
            if doc:
                yield doc
                count += 1
            if count == 0:
                warnings.warn(f"{path}: no documents")

    if shuffle_seed is None:
        yield from generate()
    else:
        docs = list(generate())
        order = stream_rng(shuffle_seed, streams.DATA_ORDER).permutation(len(docs))
        for i in order:
            yield docs[i]
