"""Walk through byte-level BPE on a toy corpus.

Trains a handful of merges, shows how ranks drive encoding, and verifies
the round trip. Run with: python3 demos/tokenizer_walkthrough.py
"""

from wikilm import bpe

docs = [
    "ankara türkiye'nin başkentidir",
    "istanbul türkiye'nin en büyük şehridir",
    "izmir ege bölgesindedir",
]

model = bpe.train_bpe(docs, 256 + 20)
print(f"trained {len(model.merges)} merges on {len(docs)} documents\n")

print("first merges (rank: left + right -> new id):")
for rank, (left, right) in enumerate(model.merges[:8]):
    l = model.decode_table[left].decode("utf-8", errors="replace")
    r = model.decode_table[right].decode("utf-8", errors="replace")
    print(f"  {rank:2d}: {l!r} + {r!r} -> {256 + rank}")

text = "türkiye'nin şehri"
ids = bpe.encode(model, text)
print(f"\nencode {text!r}:")
print(f"  {len(text.encode('utf-8'))} bytes -> {len(ids)} tokens: {ids}")
pieces = [model.decode_table[i].decode("utf-8", errors="replace") for i in ids]
print(f"  pieces: {pieces}")
assert bpe.decode(model, ids) == text
print("  round trip exact")

stats = bpe.corpus_stats(model, docs)
print(f"\ncorpus: {stats.total_bytes} bytes -> {stats.total_tokens} tokens "
      f"({stats.total_bytes / stats.total_tokens:.2f} bytes/token)")
