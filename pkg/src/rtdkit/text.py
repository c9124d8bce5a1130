"""Corpus text normalization and WordPiece subword tokenization.

The normalization step lowercases, keeps only characters inside the ASCII
range, and collapses whitespace runs.  Tokenization is greedy
longest-prefix WordPiece against a fixed vocabulary with ``##``
continuation pieces; vocabularies are always inputs, never trained here.

All functions are pure and a :class:`Vocabulary` is immutable after
construction, so everything in this module can be shared freely across
threads.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
MASK_TOKEN = "[MASK]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, MASK_TOKEN)

# Sentinel in Encoding.word_map for cls/sep/pad positions.
NO_WORD = -1

_MAX_WORD_CHARS = 100


class VocabularyError(ValueError):
    """The vocabulary file violates the required shape."""


@dataclass(frozen=True)
class Vocabulary:
    """Token list with dense ids; line number equals id in the file form."""

    entries: tuple[str, ...]
    index: dict[str, int] = field(repr=False)
    pad_id: int
    unk_id: int
    cls_id: int
    sep_id: int
    mask_id: int

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise VocabularyError(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            index[tok] = i
        missing = [t for t in SPECIAL_TOKENS if t not in index]
        if missing:
            raise VocabularyError(f"missing special tokens: {missing}")
        return cls(
            entries=tuple(tokens),
            index=index,
            pad_id=index[PAD_TOKEN],
            unk_id=index[UNK_TOKEN],
            cls_id=index[CLS_TOKEN],
            sep_id=index[SEP_TOKEN],
            mask_id=index[MASK_TOKEN],
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls.from_tokens(lines)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.entries) + "\n", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset((self.pad_id, self.unk_id, self.cls_id, self.sep_id, self.mask_id))

    def is_maskable(self, token_id: int) -> bool:
        """Content positions only: cls/sep/pad/mask are never masked over."""
        return token_id not in (self.pad_id, self.cls_id, self.sep_id, self.mask_id)


@dataclass(frozen=True)
class Encoding:
    """One model input sequence with word provenance.

    ``word_map[i]`` is the index of the source word for subword position
    ``i``, or :data:`NO_WORD` for cls/sep/pad.  For sequence pairs, words
    of the second sequence are indexed after those of the first.
    """

    ids: tuple[int, ...]
    tokens: tuple[str, ...]
    segment_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    word_map: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


def normalize(text: str) -> str:
    """Lowercase, drop characters outside the ASCII range, collapse spaces."""
    lowered = text.lower()
    ascii_only = "".join(ch for ch in lowered if ord(ch) <= 0x7F)
    return " ".join(ascii_only.split())


def _is_punctuation(ch: str) -> bool:
    code = ord(ch)
    if 33 <= code <= 47 or 58 <= code <= 64 or 91 <= code <= 96 or 123 <= code <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def pretokenize(text: str) -> list[str]:
    """Whitespace-split, with punctuation characters as standalone words."""
    words: list[str] = []
    for chunk in text.split():
        run = ""
        for ch in chunk:
            if _is_punctuation(ch):
                if run:
                    words.append(run)
                    run = ""
                words.append(ch)
            else:
                run += ch
        if run:
            words.append(run)
    return words


def pretokenize_offsets(text: str) -> list[tuple[str, int, int]]:
    """Like :func:`pretokenize`, but over raw text with character spans.

    Each entry is ``(word, start, end)`` with ``text[start:end] == word``;
    words keep their raw form so spans survive, normalization happens per
    word later (see :func:`word_pieces`).
    """
    words: list[tuple[str, int, int]] = []
    run_start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if run_start is not None:
                words.append((text[run_start:i], run_start, i))
                run_start = None
        elif _is_punctuation(ch):
            if run_start is not None:
                words.append((text[run_start:i], run_start, i))
                run_start = None
            words.append((ch, i, i + 1))
        elif run_start is None:
            run_start = i
    if run_start is not None:
        words.append((text[run_start:], run_start, len(text)))
    return words


def normalize_word(word: str) -> str:
    """Per-word form of :func:`normalize` (no whitespace handling)."""
    return "".join(ch for ch in word.lower() if ord(ch) <= 0x7F)


def word_pieces(word: str, vocab: Vocabulary) -> list[str]:
    """Normalize one raw word and split it; words that normalize away are unk."""
    normed = normalize_word(word)
    if not normed:
        return [UNK_TOKEN]
    return wordpiece(normed, vocab)


def wordpiece(word: str, vocab: Vocabulary) -> list[str]:
    """Greedy longest-prefix-match subword split of a single word.

    Returns the unk token alone when no vocabulary entry matches at some
    offset or the word exceeds the length guard.
    """
    if not word or " " in word:
        raise ValueError(f"wordpiece expects a single non-empty word, got {word!r}")
    if len(word) > _MAX_WORD_CHARS:
        return [UNK_TOKEN]
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = "##" + piece
            if piece in vocab.index:
                match = piece
                break
            end -= 1
        if match is None:
            return [UNK_TOKEN]
        pieces.append(match)
        start = end
    return pieces


def tokenize_words(words: Sequence[str], vocab: Vocabulary) -> list[list[str]]:
    """WordPiece split per raw word, preserving word boundaries."""
    return [word_pieces(w, vocab) for w in words]


def encode(
    words_a: Sequence[str],
    words_b: Sequence[str] | None,
    vocab: Vocabulary,
    max_len: int,
) -> Encoding:
    """Assemble the cls/sep layout used by every task.

    Single sequences are tail-truncated to fit; pairs must already fit
    (the QA featurizer sizes its windows before calling in).
    """
    if max_len < 3:
        raise ValueError(f"max_len {max_len} leaves no room for cls + token + sep")
    if not words_a:
        raise ValueError("empty input sequence")

    flat_a: list[tuple[str, int]] = []
    for wi, word in enumerate(words_a):
        for piece in word_pieces(word, vocab):
            flat_a.append((piece, wi))

    if words_b is None:
        budget = max_len - 2
        flat_a = flat_a[:budget]
        parts = [(CLS_TOKEN, NO_WORD, 0)]
        parts += [(p, w, 0) for p, w in flat_a]
        parts += [(SEP_TOKEN, NO_WORD, 0)]
    else:
        if not words_b:
            raise ValueError("empty input sequence")
        flat_b: list[tuple[str, int]] = []
        offset = len(words_a)
        for wi, word in enumerate(words_b):
            for piece in word_pieces(word, vocab):
                flat_b.append((piece, offset + wi))
        if 3 + len(flat_a) + len(flat_b) > max_len:
            raise ValueError(
                f"pair of {len(flat_a)}+{len(flat_b)} pieces does not fit max_len {max_len}; "
                "size the pair before encoding"
            )
        parts = [(CLS_TOKEN, NO_WORD, 0)]
        parts += [(p, w, 0) for p, w in flat_a]
        parts += [(SEP_TOKEN, NO_WORD, 0)]
        parts += [(p, w, 1) for p, w in flat_b]
        parts += [(SEP_TOKEN, NO_WORD, 1)]

    tokens = [p[0] for p in parts]
    word_map = [p[1] for p in parts]
    segments = [p[2] for p in parts]
    ids = [vocab.index[t] for t in tokens]
    mask = [1] * len(parts)

    pad_n = max_len - len(parts)
    ids += [vocab.pad_id] * pad_n
    tokens += [PAD_TOKEN] * pad_n
    segments += [0] * pad_n
    mask += [0] * pad_n
    word_map += [NO_WORD] * pad_n

    return Encoding(
        ids=tuple(ids),
        tokens=tuple(tokens),
        segment_ids=tuple(segments),
        attention_mask=tuple(mask),
        word_map=tuple(word_map),
    )


def decode_words(encoding: Encoding) -> list[str]:
    """Reassemble words from pieces grouped by word provenance."""
    words: dict[int, str] = {}
    order: list[int] = []
    for token, wi in zip(encoding.tokens, encoding.word_map):
        if wi == NO_WORD:
            continue
        if wi not in words:
            words[wi] = ""
            order.append(wi)
        words[wi] += token[2:] if token.startswith("##") else token
    return [words[wi] for wi in order]


# ---------------------------------------------------------------------------
# Vocabulary files
# ---------------------------------------------------------------------------

def load_vocabulary(path) -> Vocabulary:
    """One token per line; the line number (from zero) is the id."""
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    while tokens and not tokens[-1]:
        tokens.pop()
    if any(not t or t != t.strip() for t in tokens):
        raise VocabularyError(f"{path}: blank or padded entry")
    return Vocabulary.from_tokens(tokens)


def save_vocabulary(path, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token in vocab.entries:
            fh.write(token + "\n")


def vocabulary_from_corpus(documents) -> Vocabulary:
    """Specials followed by the sorted unique words of the documents.

    Whole words become single pieces; anything unseen at run time maps to
    [UNK].  Adequate for synthetic corpora; real corpora should ship a
    curated piece inventory instead.
    """
    words: set[str] = set()
    for document in documents:
        for sentence in document:
            words.update(pretokenize(normalize(sentence)))
    overlap = words & set(SPECIAL_TOKENS)
    if overlap:
        raise VocabularyError(f"corpus words collide with specials: {sorted(overlap)}")
    return Vocabulary.from_tokens(list(SPECIAL_TOKENS) + sorted(words))
