"""Byte-level Byte-Pair Encoding: training, encode/decode, model files, stats.

The base alphabet is the 256 byte values. Training learns an ordered merge
list; merge at rank r creates token id 256 + r. No pre-tokenization is
applied: merges run over the raw byte stream of each document, and pairs
never span document boundaries.
"""

from __future__ import annotations

import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable

BASE_SIZE = 256
FORMAT_VERSION = "bpe-v1"


class ModelFormatError(ValueError):
    """Raised when a tokenizer model file violates the bpe-v1 format."""


@dataclass
class TokenizerModel:
    """Ordered merge list over the byte alphabet.

    merges[r] = (left_id, right_id) produces token id 256 + r. Both
    constituents must already exist, i.e. be smaller than 256 + r.
    """

    merges: list[tuple[int, int]]
    base_size: int = BASE_SIZE
    decode_table: list[bytes] = field(init=False, repr=False)
    ranks: dict[tuple[int, int], int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.base_size != BASE_SIZE:
            raise ModelFormatError(f"base_size must be {BASE_SIZE}")
        table = [bytes([b]) for b in range(BASE_SIZE)]
        for rank, (left, right) in enumerate(self.merges):
            new_id = BASE_SIZE + rank
            if not (0 <= left < new_id and 0 <= right < new_id):
                raise ModelFormatError(
                    f"merge {rank} references id >= its own id {new_id}: "
                    f"({left}, {right})"
                )
            table.append(table[left] + table[right])
        self.decode_table = table
        self.ranks = {pair: rank for rank, pair in enumerate(self.merges)}

    @property
    def vocab_size(self) -> int:
        return self.base_size + len(self.merges)


@dataclass
class TokenStats:
    documents: int
    total_tokens: int
    total_bytes: int

    @property
    def bytes_per_token(self) -> float:
        return self.total_bytes / self.total_tokens if self.total_tokens else 0.0


def _pair_counter(seq: list[int]) -> Counter:
    return Counter(zip(seq, seq[1:]))


def _merge_seq(seq: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    """Replace occurrences of pair with new_id, leftmost-first."""
    left, right = pair
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def train_bpe(corpus: Iterable[str], target_vocab: int) -> TokenizerModel:
    """Learn (target_vocab - 256) merges from a corpus of documents.

    Each step merges the most frequent adjacent pair; ties break to the
    lexicographically smallest (left_id, right_id). Stops early with a
    warning when no pair occurs at least twice.
    """
    if target_vocab < BASE_SIZE:
        raise ValueError(f"target_vocab must be >= {BASE_SIZE}, got {target_vocab}")

    sequences: list[list[int]] = [list(doc.encode("utf-8")) for doc in corpus]
    n_merges = target_vocab - BASE_SIZE
    if n_merges > 0 and not any(sequences):
        raise ValueError("corpus is empty but target_vocab > 256")

    pair_counts: Counter = Counter()
    pair_docs: defaultdict[tuple[int, int], set[int]] = defaultdict(set)
    for doc_id, seq in enumerate(sequences):
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += 1
            pair_docs[pair].add(doc_id)

    merges: list[tuple[int, int]] = []
    for rank in range(n_merges):
        if not pair_counts:
            warnings.warn(f"no pairs left after {rank} merges; stopping early")
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            warnings.warn(
                f"no pair occurs >= 2 times after {rank} merges; stopping early"
            )
            break
        best = min(p for p, c in pair_counts.items() if c == best_count)
        new_id = BASE_SIZE + rank
        merges.append(best)

        for doc_id in sorted(pair_docs[best]):
            old_seq = sequences[doc_id]
            new_seq = _merge_seq(old_seq, best, new_id)
            old_pairs = _pair_counter(old_seq)
            new_pairs = _pair_counter(new_seq)
            for pair, c in old_pairs.items():
                pair_counts[pair] -= c
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
                if pair not in new_pairs:
                    pair_docs[pair].discard(doc_id)
            for pair, c in new_pairs.items():
                pair_counts[pair] += c
                pair_docs[pair].add(doc_id)
            sequences[doc_id] = new_seq

    return TokenizerModel(merges=merges)


def encode(model: TokenizerModel, text: str) -> list[int]:
    """Encode text to token ids, applying merges in rank order.

    Repeatedly merges the lowest-rank pair present anywhere in the
    sequence, leftmost occurrences first, until no merge applies.
    """
    ids = list(text.encode("utf-8"))
    ranks = model.ranks
    while len(ids) >= 2:
        best_rank = None
        best_pair = None
        for pair in zip(ids, ids[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
                best_pair = pair
        if best_pair is None:
            break
        ids = _merge_seq(ids, best_pair, BASE_SIZE + best_rank)
    return ids


def decode(model: TokenizerModel, ids: Iterable[int]) -> str:
    """Decode token ids to text; invalid UTF-8 becomes U+FFFD."""
    table = model.decode_table
    vocab_size = model.vocab_size
    parts = []
    for i in ids:
        if not (0 <= i < vocab_size):
            raise ValueError(f"token id {i} out of range for vocab_size {vocab_size}")
        parts.append(table[i])
    return b"".join(parts).decode("utf-8", errors="replace")


def save_model(model: TokenizerModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{FORMAT_VERSION} {model.vocab_size}\n")
        for rank, (left, right) in enumerate(model.merges):
            f.write(f"{rank} {left} {right}\n")


def load_model(path) -> TokenizerModel:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ModelFormatError("empty model file (line 1)")
    header = lines[0].split()
    if len(header) != 2 or header[0] != FORMAT_VERSION:
        raise ModelFormatError(f"bad header (line 1): {lines[0]!r}")
    try:
        vocab_size = int(header[1])
    except ValueError:
        raise ModelFormatError(f"bad vocab_size (line 1): {header[1]!r}") from None
    merges = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 3:
            raise ModelFormatError(f"expected 'rank left right' (line {lineno})")
        try:
            rank, left, right = (int(x) for x in fields)
        except ValueError:
            raise ModelFormatError(f"non-integer field (line {lineno})") from None
        if rank != len(merges):
            raise ModelFormatError(f"rank out of order (line {lineno}): {rank}")
        new_id = BASE_SIZE + rank
        if left >= new_id or right >= new_id:
            raise ModelFormatError(
                f"merge references future id (line {lineno}): ({left}, {right})"
            )
        merges.append((left, right))
    model = TokenizerModel(merges=merges)
    if model.vocab_size != vocab_size:
        raise ModelFormatError(
            f"header vocab_size {vocab_size} != 256 + {len(merges)} merges (line 1)"
        )
    return model


def corpus_stats(model: TokenizerModel, corpus: Iterable[str]) -> TokenStats:
    documents = 0
    total_tokens = 0
    total_bytes = 0
    for doc in corpus:
        documents += 1
        raw = doc.encode("utf-8")
        total_bytes += len(raw)
        total_tokens += len(encode(model, doc))
    return TokenStats(documents=documents, total_tokens=total_tokens,
                      total_bytes=total_bytes)
