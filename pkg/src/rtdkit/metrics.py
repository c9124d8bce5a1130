"""Evaluation arithmetic for the three task families.

Entity-level precision/recall/F1 for span labeling, micro-averaged
precision/recall/F1 over positive relation classes, and strict accuracy /
lenient accuracy / mean reciprocal rank for ranked answer lists, plus
seed averaging and the per-batch score-ratio table for comparing systems.

Everything here is a pure function over plain values; rounding happens
only in the formatting helpers.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from typing import Collection, Iterable, Mapping, Sequence

LENIENT_K = 5  # candidates past this rank count as a miss everywhere


@dataclass(frozen=True, order=True)
class Chunk:
    """One labeled span, word indices inclusive."""

    start: int
    end: int
    type: str

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"chunk start {self.start} after end {self.end}")


@dataclass(frozen=True)
class PrfReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class QaReport:
    sacc: float
    lacc: float
    mrr: float

    def __post_init__(self):
        if not (self.sacc - 1e-9 <= self.mrr <= self.lacc + 1e-9):
            raise ValueError(
                f"inconsistent ranking metrics: sacc {self.sacc} mrr {self.mrr} "
                f"lacc {self.lacc}"
            )


@dataclass(frozen=True)
class ScoreTable:
    """Per-batch MRR ratios against the best system in that batch."""

    competitors: tuple[str, ...]
    batches: tuple[str, ...]
    ratios: Mapping[tuple[str, str], float]
    totals: Mapping[str, float]


# ---------------------------------------------------------------------------
# Span extraction
# ---------------------------------------------------------------------------

def extract_chunks(tags: Sequence[str]) -> set[Chunk]:
    """Maximal spans from a BIO tag sequence.

    A span opens at ``B-t`` or at a bare ``I-t`` (one with no open span of
    type t right before it) and closes before ``O``, before any ``B-``, and
    before ``I-u`` with a different type.  The bare-I repair rule makes
    every tag sequence decodable.
    """
    chunks: set[Chunk] = set()
    start = None
    cur = None
    for i, tag in enumerate(tags):
        if tag == "O":
            head, kind = "O", None
        elif len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
            head, kind = tag[0], tag[2:]
        else:
            raise ValueError(f"malformed BIO tag {tag!r} at position {i}")
        continues = head == "I" and cur is not None and kind == cur
        if cur is not None and not continues:
            chunks.add(Chunk(start, i - 1, cur))
            cur = None
        if head == "B" or (head == "I" and not continues):
            start, cur = i, kind
    if cur is not None:
        chunks.add(Chunk(start, len(tags) - 1, cur))
    return chunks


def chunks_to_tags(chunks: Collection[Chunk], length: int) -> list[str]:
    """Render non-overlapping chunks back to BIO tags."""
    tags = ["O"] * length
    for c in sorted(chunks):
        if c.end >= length:
            raise ValueError(f"chunk {c} exceeds sequence length {length}")
        if any(tags[i] != "O" for i in range(c.start, c.end + 1)):
            raise ValueError(f"chunk {c} overlaps another chunk")
        tags[c.start] = f"B-{c.type}"
        for i in range(c.start + 1, c.end + 1):
            tags[i] = f"I-{c.type}"
    return tags


# ---------------------------------------------------------------------------
# Precision / recall / F
# ---------------------------------------------------------------------------

def f1(p: float, r: float) -> float:
    """Harmonic mean of two percentages; 0 when both are 0."""
    if p + r == 0:
        return 0.0
    return 2.0 * p * r / (p + r)


def _prf(tp: int, fp: int, fn: int) -> PrfReport:
    p = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    r = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    return PrfReport(precision=p, recall=r, f1=f1(p, r), tp=tp, fp=fp, fn=fn)


def entity_prf(
    gold: Sequence[Collection[Chunk]], pred: Sequence[Collection[Chunk]]
) -> PrfReport:
    """Exact-match span scoring, summed over sentences."""
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        g, p = set(g), set(p)
        hit = len(g & p)
        tp += hit
        fp += len(p) - hit
        fn += len(g) - hit
    return _prf(tp, fp, fn)


def relation_prf(
    gold: Sequence[str],
    pred: Sequence[str],
    positive: Collection[str],
    allowed: Collection[str],
) -> PrfReport:
    """Micro-averaged P/R/F over the positive classes.

    The negative class contributes no tp/fp/fn of its own: a negative
    prediction on a positive example is a miss, a positive prediction on a
    negative example is a false alarm.
    """
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold labels vs {len(pred)} predictions")
    allowed = set(allowed)
    positive = set(positive)
    if not positive <= allowed:
        raise ValueError(f"positive classes {sorted(positive - allowed)} not in label set")
    for labels, what in ((gold, "gold"), (pred, "predicted")):
        bad = sorted(set(labels) - allowed)
        if bad:
            raise ValueError(f"unknown {what} label(s) {bad}")
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        if p == g:
            tp += g in positive
        else:
            fp += p in positive
            fn += g in positive
    return _prf(tp, fp, fn)


# ---------------------------------------------------------------------------
# Ranked answers
# ---------------------------------------------------------------------------

def _squash(text: str, case_sensitive: bool) -> str:
    out = re.sub(r"\s+", " ", text).strip()
    return out if case_sensitive else out.lower()


def answer_rank(
    candidates: Sequence[str],
    synonyms: Collection[str],
    case_sensitive: bool = False,
) -> int | None:
    """1-based rank of the first candidate matching any synonym, top 5 only."""
    keys = {_squash(s, case_sensitive) for s in synonyms}
    for i, cand in enumerate(candidates[:LENIENT_K], start=1):
        if _squash(cand, case_sensitive) in keys:
            return i
    return None


def qa_metrics(
    gold: Mapping[str, Sequence[str]] | Sequence[tuple[str, Sequence[str]]],
    nbest: Mapping[str, Sequence[str]],
    case_sensitive: bool = False,
) -> QaReport:
    """Strict accuracy, lenient accuracy, and MRR over a question set.

    ``gold`` maps each question id to its acceptable answer strings;
    ``nbest`` maps it to the ranked candidates.  Only the first
    :data:`LENIENT_K` candidates can score.
    """
    items = list(gold.items()) if isinstance(gold, Mapping) else list(gold)
    ids = [q for q, _ in items]
    if len(set(ids)) != len(ids):
        dupes = sorted({q for q in ids if ids.count(q) > 1})
        raise ValueError(f"duplicate question id(s) {dupes[:5]}")
    if not items:
        raise ValueError("no questions to score")
    missing = sorted(set(ids) - set(nbest))
    if missing:
        raise ValueError(f"no candidate list for question(s) {missing[:5]}")
    strict = lenient = reciprocal = 0.0
    for qid, synonyms in items:
        rank = answer_rank(nbest[qid], synonyms, case_sensitive)
        if rank is not None:
            strict += rank == 1
            lenient += 1
            reciprocal += 1.0 / rank
    n = len(items)
    return QaReport(
        sacc=100.0 * strict / n, lacc=100.0 * lenient / n, mrr=100.0 * reciprocal / n
    )


# ---------------------------------------------------------------------------
# Cross-system score table
# ---------------------------------------------------------------------------

def score_table(mrr: Mapping[str, Mapping[str, float]]) -> ScoreTable:
    """Each system's MRR divided by the batch's best; totals sum the ratios.

    Systems may skip batches; a skipped batch simply adds nothing to the
    total.
    """
    competitors = tuple(mrr)
    if not competitors:
        raise ValueError("empty score table")
    batches = tuple(dict.fromkeys(b for row in mrr.values() for b in row))
    ratios: dict[tuple[str, str], float] = {}
    for batch in batches:
        entries = {c: row[batch] for c, row in mrr.items() if batch in row}
        best = max(entries.values())
        if best <= 0.0:
            warnings.warn(f"batch {batch!r}: no positive value, ratios set to 0")
        for c, value in entries.items():
            ratios[(c, batch)] = value / best if best > 0 else 0.0
    totals = {
        c: sum(v for (cc, _), v in ratios.items() if cc == c) for c in competitors
    }
    return ScoreTable(competitors=competitors, batches=batches, ratios=ratios, totals=totals)


# ---------------------------------------------------------------------------
# Seed averaging and display
# ---------------------------------------------------------------------------

_MEAN_FIELDS = {
    PrfReport: ("precision", "recall", "f1"),
    QaReport: ("sacc", "lacc", "mrr"),
}


def aggregate_seeds(reports: Sequence[PrfReport] | Sequence[QaReport]) -> dict:
    """Arithmetic mean of each metric over per-seed reports.

    For P/R/F reports the harmonic mean of the averaged precision and
    recall is included as ``f1_of_means``; it differs in general from the
    averaged per-seed F, and both are informative.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    kind = type(reports[0])
    if kind not in _MEAN_FIELDS:
        raise TypeError(f"cannot aggregate {kind.__name__}")
    if any(type(r) is not kind for r in reports):
        raise TypeError("mixed report types")
    n = len(reports)
    out = {"count": n}
    for field in _MEAN_FIELDS[kind]:
        out[field] = sum(getattr(r, field) for r in reports) / n
    if kind is PrfReport:
        out["f1_of_means"] = f1(out["precision"], out["recall"])
    return out


def format_percent(x: float) -> str:
    return f"{x:.2f}"


def format_ratio(x: float) -> str:
    return f"{x:.3f}"


def format_prf(report: PrfReport) -> str:
    return (
        f"P {format_percent(report.precision)}  R {format_percent(report.recall)}  "
        f"F1 {format_percent(report.f1)}  (tp {report.tp} fp {report.fp} fn {report.fn})"
    )


def format_qa(report: QaReport) -> str:
    return (
        f"SACC {format_percent(report.sacc)}  LACC {format_percent(report.lacc)}  "
        f"MRR {format_percent(report.mrr)}"
    )


def format_score_table(table: ScoreTable) -> str:
    width = max(len(c) for c in table.competitors)
    lines = [
        " ".join([" " * width] + [f"{b:>7}" for b in table.batches] + ["  total"])
    ]
    for c in table.competitors:
        cells = [
            f"{format_ratio(table.ratios[(c, b)]):>7}" if (c, b) in table.ratios else f"{'-':>7}"
            for b in table.batches
        ]
        lines.append(" ".join([c.ljust(width)] + cells + [f"{format_ratio(table.totals[c]):>7}"]))
    return "\n".join(lines)


def report_as_dict(report: PrfReport | QaReport) -> dict:
    if isinstance(report, PrfReport):
        return {
            "precision": report.precision, "recall": report.recall, "f1": report.f1,
            "tp": report.tp, "fp": report.fp, "fn": report.fn,
        }
    return {"sacc": report.sacc, "lacc": report.lacc, "mrr": report.mrr}
