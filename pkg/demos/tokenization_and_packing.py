"""Wordpiece tokenization and fixed-length sequence packing, step by step.

Runs in about a second. Shows how words become subword pieces with ##
continuations, how a sentence pair is framed with cls/sep, and how whole
sentences are packed greedily into fixed 32-token rows.
"""

from rtdkit import synthetic as syn
from rtdkit.pretraining import pack_sequences
from rtdkit.text import SPECIAL_TOKENS, Vocabulary, encode, wordpiece

# a vocabulary with continuation pieces, to show longest-match splitting
demo_vocab = Vocabulary.from_tokens(
    list(SPECIAL_TOKENS)
    + ["bind", "##ing", "##s", "gene", "chem", "##0", "##1", "does", "the", "to"]
)

print("== subword splitting ==")
for word in ("bind", "binding", "gene0", "chem1", "genes", "paracetamol"):
    print(f"  {word!r:>14} -> {wordpiece(word, demo_vocab)}")

print("\n== one encoded sentence pair ==")
enc = encode(["gene0", "binds", "chem1"], ["does", "gene0", "bind"], demo_vocab, max_len=16)
for pos, (tok, seg, mask) in enumerate(zip(enc.tokens, enc.segment_ids, enc.attention_mask)):
    marker = " " if mask else "."
    print(f"  {pos:2d} {marker} seg={seg} {tok}")

print("\n== packing documents into 32-token rows ==")
vocab = syn.desk_vocab()
documents = syn.motif_corpus(4, seed=1)
packed = pack_sequences(documents, vocab, 32)
print(f"  {len(documents)} documents -> {len(packed.sequences)} rows")
for row in packed.sequences[:3]:
    used = sum(row.attention_mask)
    text = " ".join(t for t, m in zip(row.tokens, row.attention_mask) if m)
    print(f"  [{used:2d}/32] {text}")
print("  (rows never mix documents; a new document always opens a new row)")
