"""Synthetic corpora over a fixed 200-token vocabulary.

Desk-scale training checks need data whose structure a small encoder can
actually learn in minutes.  Everything here shares one token inventory,
so an encoder pretrained on the motif corpus fine-tunes directly on the
tagging, classification, and QA corpora without a vocabulary swap.

The inventory (200 entries):

  specials                    5
  filler    w000..w099      100
  NER       ba/ia/bb/ib*     40   begin/inside words for entity types A, B
  QA        qb*/qe* + find   21   answer-begin/answer-end words + question
  RE        m1 m2 m3          3   relation marker words
            enta entb         2   anonymized mention placeholders
  extra     v00..v28         29   corpus diversity

Tags never leak into the data: the corpora are pattern-defined, with the
pattern chosen so the label is a deterministic function of the tokens.
"""

from __future__ import annotations

import json

import numpy as np

from .data import CharAnswer, LabelSet, NerExample, QaPair, QaQuestion, ReExample
from .encoder import EncoderConfig
from .text import SPECIAL_TOKENS, Vocabulary

FILLER = tuple(f"w{i:03d}" for i in range(100))
NER_BEGIN = {"A": tuple(f"ba{i:02d}" for i in range(10)),
             "B": tuple(f"bb{i:02d}" for i in range(10))}
NER_INSIDE = {"A": tuple(f"ia{i:02d}" for i in range(10)),
              "B": tuple(f"ib{i:02d}" for i in range(10))}
QA_BEGIN = tuple(f"qb{i:02d}" for i in range(10))
QA_END = tuple(f"qe{i:02d}" for i in range(10))
QA_QUESTION = "find"
# Marker words map to a subset of the ChemProt label names so files written
# from this corpus flow through the standard relation label inventory.
RE_MARKERS = {"CPR:3": "m1", "CPR:4": "m2", "CPR:9": "m3"}
RE_MENTIONS = ("enta", "entb")
EXTRA = tuple(f"v{i:02d}" for i in range(29))

RE_TOY_LABELS = LabelSet(tuple(sorted(RE_MARKERS)), "false")


def desk_vocab() -> Vocabulary:
    """The shared 200-entry vocabulary."""
    tokens = (
        list(SPECIAL_TOKENS)
        + list(FILLER)
        + list(NER_BEGIN["A"]) + list(NER_INSIDE["A"])
        + list(NER_BEGIN["B"]) + list(NER_INSIDE["B"])
        + list(QA_BEGIN) + list(QA_END) + [QA_QUESTION]
        + list(RE_MARKERS.values()) + list(RE_MENTIONS)
        + list(EXTRA)
    )
    assert len(tokens) == 200
    return Vocabulary.from_tokens(tokens)


def desk_config(**overrides) -> EncoderConfig:
    """A 4-layer, 128-hidden encoder sized for CPU minutes."""
    fields = dict(
        num_layers=4, hidden=128, ffn_inner=512, heads=4, head_size=32,
        embedding_size=128, vocab_size=200, max_positions=128,
        dropout=0.1, attention_dropout=0.1,
    )
    fields.update(overrides)
    return EncoderConfig(**fields)


# ---------------------------------------------------------------------------
# Pretraining corpus
# ---------------------------------------------------------------------------

def motif_corpus(
    n_documents: int,
    seed: int = 0,
    n_motifs: int = 24,
    motif_len: int = 8,
) -> list[list[str]]:
    """Documents of sentences built by concatenating fixed token motifs.

    A motif is a fixed sequence of vocabulary words, so every token is
    predictable from its neighbors; masked-token prediction and
    replaced-token detection both have learnable structure.
    """
    vocab = desk_vocab()
    words = [t for t in vocab.entries if t not in SPECIAL_TOKENS]
    rng = np.random.default_rng(seed)
    motifs = [
        [words[i] for i in rng.integers(0, len(words), size=motif_len)]
        for _ in range(n_motifs)
    ]
    docs = []
    for _ in range(n_documents):
        sentences = []
        for _ in range(int(rng.integers(3, 7))):
            picks = rng.integers(0, n_motifs, size=int(rng.integers(2, 4)))
            sentences.append(" ".join(w for m in picks for w in motifs[m]))
        docs.append(sentences)
    return docs


ROW_SENTENCES = 7
ROW_SENTENCE_LEN = 8
ROW_LEN = 1 + ROW_SENTENCES * (ROW_SENTENCE_LEN + 1)   # cls + 7 x (8 words + sep)

# Fixed 7-sentence template over the extra pool; the index arithmetic just
# spreads the 29 words over the 56 slots.
ROW_TEMPLATE = tuple(
    tuple(EXTRA[(7 * k + 11 * j + 3 * k * j) % len(EXTRA)] for j in range(ROW_SENTENCE_LEN))
    for k in range(ROW_SENTENCES)
)


def template_corpus(n_documents: int, seed: int = 0) -> list[list[str]]:
    """Documents cycling the fixed row template; length is the only variety.

    Packed at max_len 64, each 8-word sentence plus its separator lands at a
    fixed phase of the 64-token row, so every token is a function of its
    absolute position.  A replacement that is not the exact original token
    is then always detectable from position alone, no matter how sharp the
    sampling generator has become.  Positions carrying irreducible entropy
    would instead accumulate in-distribution replacements that no detector
    can flag, capping balanced accuracy near chance.
    """
    rng = np.random.default_rng(seed)
    docs = []
    for _ in range(n_documents):
        n = int(rng.integers(5, 15))
        docs.append([" ".join(ROW_TEMPLATE[i % ROW_SENTENCES]) for i in range(n)])
    return docs


def write_text_corpus(path, documents) -> None:
    """One sentence per line, blank line between documents."""
    with open(path, "w", encoding="utf-8") as f:
        for i, doc in enumerate(documents):
            if i:
                f.write("\n")
            for sentence in doc:
                f.write(sentence + "\n")


# ---------------------------------------------------------------------------
# Fine-tuning corpora
# ---------------------------------------------------------------------------

def ner_corpus(n_sentences: int, seed: int = 0) -> list[NerExample]:
    """Token-tagged sentences; the tag is a function of the word's pool.

    Entities are runs of one begin word and zero to two inside words from
    the matching pool; everything else is filler tagged O.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_sentences):
        toks: list[str] = []
        tags: list[str] = []
        for _ in range(int(rng.integers(3, 7))):
            kind = rng.random()
            if kind < 0.5:
                toks.append(FILLER[int(rng.integers(0, len(FILLER)))])
                tags.append("O")
            else:
                ent = "A" if kind < 0.75 else "B"
                toks.append(NER_BEGIN[ent][int(rng.integers(0, 10))])
                tags.append("B-" + ent)
                for _ in range(int(rng.integers(0, 3))):
                    toks.append(NER_INSIDE[ent][int(rng.integers(0, 10))])
                    tags.append("I-" + ent)
        out.append(NerExample(tuple(toks), tuple(tags)))
    return out


def qa_corpus(n_questions: int, seed: int = 0, n_words: int = 36) -> list[QaQuestion]:
    """One two-word answer span hidden in filler per context.

    The span is a begin-pool word followed by an end-pool word.  With a
    window shorter than the context, many gold spans land beyond the
    first window, which is the point: decoding must stride.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_questions):
        words = [FILLER[int(rng.integers(0, len(FILLER)))] for _ in range(n_words)]
        slot = int(rng.integers(0, n_words - 1))
        words[slot] = QA_BEGIN[int(rng.integers(0, 10))]
        words[slot + 1] = QA_END[int(rng.integers(0, 10))]
        context = " ".join(words)
        answer = f"{words[slot]} {words[slot + 1]}"
        start = context.index(words[slot])
        qid = f"q{i:04d}"
        out.append(QaQuestion(
            id=qid, question=QA_QUESTION,
            pairs=(QaPair(qid=f"{qid}_001", context=context,
                          answers=(CharAnswer(text=answer, start=start),)),),
            synonyms=(answer,),
        ))
    return out


def re_corpus(n_examples: int, seed: int = 0) -> list[ReExample]:
    """Anonymized-mention sentences; a marker word decides the relation.

    Labels come from :data:`RE_TOY_LABELS`; sentences without a marker
    are the negative class.
    """
    rng = np.random.default_rng(seed)
    labels = RE_TOY_LABELS.labels
    out = []
    for i in range(n_examples):
        label = labels[int(rng.integers(0, len(labels)))]
        words = [FILLER[int(rng.integers(0, len(FILLER)))] for _ in range(8)]
        words[2], words[5] = RE_MENTIONS
        if label != RE_TOY_LABELS.negative:
            words[3] = RE_MARKERS[label]
        out.append(ReExample(id=f"s{i:04d}", sentence=" ".join(words), label=label))
    return out


# ---------------------------------------------------------------------------
# File emitters for the QA corpora
# ---------------------------------------------------------------------------

def as_squad_json(questions) -> dict:
    """The nested article/paragraph shape with answer_start offsets."""
    qas = []
    for q in questions:
        for pair in q.pairs:
            qas.append({
                "paragraphs": [{
                    "context": pair.context,
                    "qas": [{
                        "id": pair.qid,
                        "question": q.question,
                        "answers": [
                            {"text": a.text, "answer_start": a.start}
                            for a in pair.answers
                        ],
                    }],
                }],
            })
    return {"data": [{"title": "synthetic", "paragraphs": p["paragraphs"]}
                     for p in qas]}


def write_squad_json(path, questions) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(as_squad_json(questions), f, ensure_ascii=False)
        f.write("\n")
