"""Task heads: token tagging, sentence classification, extractive spans.

Each head is a thin map from encoder states; the interesting logic is the
bookkeeping around it — first-subword label alignment for tagging, sliding
context windows for long passages, and n-best span decoding that merges
windows belonging to one question.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    add,
    cross_entropy,
    reshape,
    scale,
    select_token,
)
from .data import CharAnswer, DataError, NerExample, QaQuestion
from .encoder import NEG_INF, EncoderConfig, linear, truncated_normal
from .text import (
    CLS_TOKEN,
    NO_WORD,
    PAD_TOKEN,
    SEP_TOKEN,
    Encoding,
    Vocabulary,
    encode,
    normalize,
    pretokenize,
    pretokenize_offsets,
    word_pieces,
)

MAX_ANSWER_TOKENS = 30
CANDIDATES_PER_SIDE = 20
N_BEST = 5


# ---------------------------------------------------------------------------
# Tag bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TagSet:
    """The tag inventory, frozen from the training split."""

    tags: tuple[str, ...]

    @classmethod
    def from_examples(cls, examples: Iterable[NerExample]) -> "TagSet":
        seen = {t for e in examples for t in e.tags}
        seen.discard("O")
        return cls(tags=("O",) + tuple(sorted(seen)))

    def __len__(self) -> int:
        return len(self.tags)

    def id(self, tag: str) -> int:
        try:
            return self.tags.index(tag)
        except ValueError:
            raise DataError(f"tag {tag!r} not in training tag set {self.tags}") from None

    def tag(self, tag_id: int) -> str:
        return self.tags[tag_id]


def align_labels(
    words: Sequence[str], tags: Sequence[str], vocab: Vocabulary, tagset: TagSet
) -> tuple[list[str], list[int], list[int]]:
    """Subword pieces with first-piece labels.

    Returns (pieces, label ids, loss mask); continuation pieces carry label
    0 and mask 0, so only the first piece of every word is trained on.
    """
    if len(words) != len(tags):
        raise DataError(f"{len(words)} words but {len(tags)} tags")
    pieces: list[str] = []
    labels: list[int] = []
    mask: list[int] = []
    for word, tag in zip(words, tags):
        for k, piece in enumerate(word_pieces(word, vocab)):
            pieces.append(piece)
            labels.append(tagset.id(tag) if k == 0 else 0)
            mask.append(1 if k == 0 else 0)
    return pieces, labels, mask


@dataclass(frozen=True)
class NerFeature:
    """One model-ready window of a (possibly split) tagged sentence."""

    example_index: int
    part_index: int
    encoding: Encoding
    label_ids: tuple[int, ...]
    loss_mask: tuple[int, ...]
    n_words: int


def _ner_window(
    words, tags, vocab, tagset, max_seq, example_index, part_index
) -> NerFeature:
    pieces, labels, mask = align_labels(words, tags, vocab, tagset)
    pad_n = max_seq - 2 - len(pieces)
    tokens = [CLS_TOKEN] + pieces + [SEP_TOKEN] + [PAD_TOKEN] * pad_n
    word_map, wi = [NO_WORD], -1
    for m in mask:
        wi += m
        word_map.append(wi if m else NO_WORD)
    word_map += [NO_WORD] * (pad_n + 1)
    encoding = Encoding(
        ids=tuple(vocab.index[t] for t in tokens),
        tokens=tuple(tokens),
        segment_ids=(0,) * max_seq,
        attention_mask=tuple([1] * (len(pieces) + 2) + [0] * pad_n),
        word_map=tuple(word_map),
    )
    return NerFeature(
        example_index=example_index,
        part_index=part_index,
        encoding=encoding,
        label_ids=tuple([0] + labels + [0] * (pad_n + 1)),
        loss_mask=tuple([0] + mask + [0] * (pad_n + 1)),
        n_words=len(words),
    )


def ner_featurize(
    examples: Sequence[NerExample],
    vocab: Vocabulary,
    tagset: TagSet,
    max_seq: int = 128,
) -> list[NerFeature]:
    """Encode sentences, splitting over-long ones at word boundaries.

    Split parts are independent training examples; predictions are
    re-joined per original sentence by :func:`ner_predict_tags`.
    """
    out: list[NerFeature] = []
    for idx, example in enumerate(examples):
        budget = max_seq - 2
        part = 0
        start = 0
        used = 0
        for wi, word in enumerate(example.tokens):
            need = len(word_pieces(word, vocab))
            if need > budget:
                raise DataError(
                    f"sentence {idx}: word {word!r} alone exceeds max_seq {max_seq}"
                )
            if used + need > budget:
                out.append(_ner_window(
                    example.tokens[start:wi], example.tags[start:wi], vocab,
                    tagset, max_seq, idx, part,
                ))
                part += 1
                start, used = wi, 0
            used += need
        out.append(_ner_window(
            example.tokens[start:], example.tags[start:], vocab,
            tagset, max_seq, idx, part,
        ))
    return out


def init_ner_head(config: EncoderConfig, n_tags: int, rng: np.random.Generator) -> dict:
    return {
        "head/ner/weight": Parameter(
            truncated_normal(rng, (config.hidden, n_tags)), name="head/ner/weight"
        ),
        "head/ner/bias": Parameter(
            np.zeros(n_tags, np.float32), name="head/ner/bias", no_decay=True
        ),
    }


def ner_logits(params: Mapping[str, Parameter], hidden: Tensor) -> Tensor:
    return linear(hidden, params["head/ner/weight"], params["head/ner/bias"])


def ner_loss(logits: Tensor, label_ids: np.ndarray, loss_mask: np.ndarray) -> Tensor:
    """Cross-entropy over first-subword positions only."""
    return cross_entropy(logits, label_ids, mask=loss_mask)


def ner_predict_tags(
    features: Sequence[NerFeature], logits: np.ndarray, tagset: TagSet
) -> list[list[str]]:
    """Per-original-sentence word tags, re-joined across split parts.

    ``logits`` rows align with ``features``; the tag of a word is the
    argmax at its first subword.
    """
    if len(features) != logits.shape[0]:
        raise ValueError(f"{len(features)} features but {logits.shape[0]} logit rows")
    by_example: dict[int, list[NerFeature]] = {}
    rows: dict[int, np.ndarray] = {}
    for feat, row in zip(features, logits):
        by_example.setdefault(feat.example_index, []).append(feat)
        rows[id(feat)] = row
    out = []
    for idx in sorted(by_example):
        parts = sorted(by_example[idx], key=lambda f: f.part_index)
        tags: list[str] = []
        for feat in parts:
            row = rows[id(feat)]
            for pos, m in enumerate(feat.loss_mask):
                if m:
                    tags.append(tagset.tag(int(row[pos].argmax())))
        out.append(tags)
    return out


# ---------------------------------------------------------------------------
# Sentence classification
# ---------------------------------------------------------------------------

def init_re_head(config: EncoderConfig, n_classes: int, rng: np.random.Generator) -> dict:
    return {
        "head/re/weight": Parameter(
            truncated_normal(rng, (config.hidden, n_classes)), name="head/re/weight"
        ),
        "head/re/bias": Parameter(
            np.zeros(n_classes, np.float32), name="head/re/bias", no_decay=True
        ),
    }


def re_logits(params: Mapping[str, Parameter], hidden: Tensor) -> Tensor:
    """Class scores from the cls-position representation."""
    return linear(select_token(hidden, 0), params["head/re/weight"], params["head/re/bias"])


def re_loss(logits: Tensor, label_ids: np.ndarray) -> Tensor:
    return cross_entropy(logits, label_ids)


def re_featurize(
    sentences: Sequence[str], vocab: Vocabulary, max_seq: int = 128
) -> list[Encoding]:
    """Single-segment encodings; overlong sentences tail-truncate."""
    return [
        encode(pretokenize(normalize(s)), None, vocab, max_len=max_seq)
        for s in sentences
    ]


# ---------------------------------------------------------------------------
# Extractive QA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QaFeature:
    """One sliding window over one question-context pair."""

    question_id: str
    pair_id: str
    window_index: int
    encoding: Encoding
    context: str
    context_offset: int
    token_to_char: tuple
    start_position: int
    end_position: int


@dataclass(frozen=True)
class SpanPrediction:
    text: str
    start_logit: float
    end_logit: float
    window_index: int
    pair_id: str

    @property
    def score(self) -> float:
        return self.start_logit + self.end_logit


@dataclass(frozen=True)
class NBestList:
    question_id: str
    predictions: tuple[SpanPrediction, ...]

    def texts(self) -> list[str]:
        return [p.text for p in self.predictions]


def _context_pieces(context: str, vocab: Vocabulary):
    """Flatten context words to pieces with per-piece char spans."""
    pieces: list[str] = []
    spans: list[tuple[int, int]] = []
    word_index: list[int] = []
    words = pretokenize_offsets(context)
    for wi, (word, cs, ce) in enumerate(words):
        for piece in word_pieces(word, vocab):
            pieces.append(piece)
            spans.append((cs, ce))
            word_index.append(wi)
    return pieces, spans, word_index, words


def _gold_piece_span(
    answers: Sequence[CharAnswer], words, word_index
) -> tuple[int, int] | None:
    """First answer that lands on whole words, as a context-piece span."""
    for ans in answers:
        lo, hi = ans.start, ans.start + len(ans.text)
        hit_words = [
            wi for wi, (_, cs, ce) in enumerate(words) if cs < hi and ce > lo
        ]
        if not hit_words:
            continue
        w1, w2 = hit_words[0], hit_words[-1]
        p1 = word_index.index(w1)
        p2 = len(word_index) - 1 - word_index[::-1].index(w2)
        return p1, p2
    return None


def qa_featurize(
    question: str,
    context: str,
    vocab: Vocabulary,
    max_seq: int = 384,
    stride: int = 128,
    answers: Sequence[CharAnswer] = (),
    question_id: str = "q",
    pair_id: str | None = None,
) -> list[QaFeature]:
    """Sliding windows over a long context, question attached to each.

    Window capacity is ``max_seq`` minus the question pieces minus the
    three separators; starts advance by ``stride`` until the tail is
    covered.  Training features carry the gold span when it lies wholly
    inside the window, the cls position otherwise.
    """
    if not question.strip() or not context.strip():
        raise DataError("empty question or context")
    pair_id = pair_id if pair_id is not None else question_id
    q_pieces = [p for w in pretokenize(normalize(question)) for p in word_pieces(w, vocab)]
    ctx_pieces, spans, word_index, words = _context_pieces(context, vocab)
    capacity = max_seq - len(q_pieces) - 3
    if capacity < 1:
        raise DataError(f"question {question_id}: question exhausts window")
    if stride > capacity:
        raise DataError(
            f"stride {stride} exceeds window capacity {capacity}; contexts would be skipped"
        )
    n_ctx = len(ctx_pieces)
    starts = [0]
    while starts[-1] + capacity < n_ctx:
        starts.append(starts[-1] + stride)

    gold = _gold_piece_span(answers, words, word_index) if answers else None
    prefix = 2 + len(q_pieces)  # cls + question + sep
    features = []
    for w, s in enumerate(starts):
        win = ctx_pieces[s : s + capacity]
        tokens = (
            [CLS_TOKEN] + q_pieces + [SEP_TOKEN] + win + [SEP_TOKEN]
        )
        pad_n = max_seq - len(tokens)
        tokens += [PAD_TOKEN] * pad_n
        segments = [0] * (2 + len(q_pieces)) + [1] * (len(win) + 1) + [0] * pad_n
        attention = [1] * (max_seq - pad_n) + [0] * pad_n
        word_map = (
            [NO_WORD] * (1 + len(q_pieces) + 1)
            + [word_index[s + i] for i in range(len(win))]
            + [NO_WORD] * (pad_n + 1)
        )
        t2c = (
            [None] * prefix
            + [spans[s + i] for i in range(len(win))]
            + [None] * (pad_n + 1)
        )
        start_pos = end_pos = 0
        if gold is not None and gold[0] >= s and gold[1] < s + len(win):
            start_pos = prefix + gold[0] - s
            end_pos = prefix + gold[1] - s
        features.append(QaFeature(
            question_id=question_id,
            pair_id=pair_id,
            window_index=w,
            encoding=Encoding(
                ids=tuple(vocab.index[t] for t in tokens),
                tokens=tuple(tokens),
                segment_ids=tuple(segments),
                attention_mask=tuple(attention),
                word_map=tuple(word_map),
            ),
            context=context,
            context_offset=s,
            token_to_char=tuple(t2c),
            start_position=start_pos,
            end_position=end_pos,
        ))
    return features


def featurize_question(
    q: QaQuestion,
    vocab: Vocabulary,
    max_seq: int = 384,
    stride: int = 128,
    with_answers: bool = True,
) -> list[QaFeature]:
    out = []
    for pair in q.pairs:
        out += qa_featurize(
            q.question, pair.context, vocab, max_seq=max_seq, stride=stride,
            answers=pair.answers if with_answers else (),
            question_id=q.id, pair_id=pair.qid,
        )
    return out


def init_qa_head(config: EncoderConfig, rng: np.random.Generator) -> dict:
    params = {}
    for side in ("start", "end"):
        params[f"head/qa/{side}/weight"] = Parameter(
            truncated_normal(rng, (config.hidden, 1)), name=f"head/qa/{side}/weight"
        )
        params[f"head/qa/{side}/bias"] = Parameter(
            np.zeros(1, np.float32), name=f"head/qa/{side}/bias", no_decay=True
        )
    return params


def qa_logits(
    params: Mapping[str, Parameter], hidden: Tensor, attention_mask: np.ndarray
) -> tuple[Tensor, Tensor]:
    """Per-position start and end scores, pads pushed to -inf."""
    off = Tensor(((1 - attention_mask) * NEG_INF).astype(np.float32))
    out = []
    for side in ("start", "end"):
        x = linear(hidden, params[f"head/qa/{side}/weight"], params[f"head/qa/{side}/bias"])
        out.append(add(reshape(x, x.shape[:-1]), off))
    return out[0], out[1]


def qa_loss(start_logits: Tensor, end_logits: Tensor,
            starts: np.ndarray, ends: np.ndarray) -> Tensor:
    """Mean of the start and end position cross-entropies."""
    return scale(
        add(cross_entropy(start_logits, starts), cross_entropy(end_logits, ends)), 0.5
    )


def _squash_text(text: str) -> str:
    return " ".join(text.split()).lower()


def qa_decode(
    features: Sequence[QaFeature],
    start_logits: np.ndarray,
    end_logits: np.ndarray,
    n_best: int = N_BEST,
    max_answer_tokens: int = MAX_ANSWER_TOKENS,
    candidates_per_side: int = CANDIDATES_PER_SIDE,
) -> dict[str, NBestList]:
    """Merge span candidates across windows and pairs of each question.

    Per window the top ``candidates_per_side`` start and end positions are
    paired, filtered to spans lying inside the context segment and at most
    ``max_answer_tokens`` long, then pooled per question, deduplicated by
    normalized answer text (best score wins), and cut to ``n_best``.
    """
    if len(features) != start_logits.shape[0] or len(features) != end_logits.shape[0]:
        raise ValueError(
            f"{len(features)} features but {start_logits.shape[0]}/{end_logits.shape[0]} logit rows"
        )
    pool: dict[str, list[SpanPrediction]] = {}
    for feat, srow, erow in zip(features, start_logits, end_logits):
        pool.setdefault(feat.question_id, [])
        valid = [i for i, span in enumerate(feat.token_to_char) if span is not None]
        if not valid:
            continue
        k = min(candidates_per_side, len(srow))
        top_start = np.argsort(srow)[::-1][:k]
        top_end = np.argsort(erow)[::-1][:k]
        for i in top_start:
            if feat.token_to_char[i] is None:
                continue
            for j in top_end:
                if j < i or j - i + 1 > max_answer_tokens:
                    continue
                if feat.token_to_char[j] is None:
                    continue
                text = feat.context[feat.token_to_char[i][0] : feat.token_to_char[j][1]]
                pool[feat.question_id].append(SpanPrediction(
                    text=text, start_logit=float(srow[i]), end_logit=float(erow[j]),
                    window_index=feat.window_index, pair_id=feat.pair_id,
                ))
    out = {}
    for qid, candidates in pool.items():
        best: dict[str, SpanPrediction] = {}
        for cand in candidates:
            key = _squash_text(cand.text)
            if key not in best or cand.score > best[key].score:
                best[key] = cand
        ranked = sorted(best.values(), key=lambda p: (-p.score, p.text))[:n_best]
        out[qid] = NBestList(question_id=qid, predictions=tuple(ranked))
    return out
