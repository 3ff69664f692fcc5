"""Train/val splitting, binary token shards, and batch sampling.

Shard layout (little-endian): 8-byte magic ``TOKSHRD1``, u32 token_width
(2 or 4), u64 vocab_size, u64 count, then count tokens of token_width
bytes each. token_width is 2 iff vocab_size <= 65,536.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .bpe import TokenizerModel, encode

SHARD_MAGIC = b"TOKSHRD1"
_HEADER = struct.Struct("<8sIQQ")


class ShardFormatError(ValueError):
    """Malformed token shard file."""


@dataclass
class SplitSpec:
    val_fraction: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass
class TokenShard:
    vocab_size: int
    token_width: int
    tokens: np.ndarray  # 1-D, read-only view

    @property
    def count(self) -> int:
        return int(self.tokens.shape[0])


@dataclass
class Batch:
    inputs: np.ndarray   # (batch_size, context_len) int64
    targets: np.ndarray  # same shape, inputs shifted by one


def assign_to_val(record_id: int, spec: SplitSpec) -> bool:
    """Seeded hash assignment; stable across runs and platforms."""
    digest = hashlib.sha256(f"{spec.seed}:{record_id}".encode()).digest()
    u = int.from_bytes(digest[:8], "big")
    return u < spec.val_fraction * 2**64


def split_corpus(records: Iterable[dict], spec: SplitSpec):
    """Partition records into (train, val) by seeded hash of record id."""
    train, val = [], []
    for rec in records:
        (val if assign_to_val(int(rec["id"]), spec) else train).append(rec)
    return train, val


def token_width_for(vocab_size: int) -> int:
    return 2 if vocab_size <= 65536 else 4


def write_shard(tokens: Sequence[int] | np.ndarray, vocab_size: int, path) -> TokenShard:
    tokens = np.asarray(tokens, dtype=np.uint64)
    if tokens.size and int(tokens.max()) >= vocab_size:
        raise ValueError(
            f"token id {int(tokens.max())} >= vocab_size {vocab_size}"
        )
    width = token_width_for(vocab_size)
    dtype = np.dtype("<u2") if width == 2 else np.dtype("<u4")
    tmp = os.fspath(path) + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(_HEADER.pack(SHARD_MAGIC, width, vocab_size, tokens.size))
            f.write(tokens.astype(dtype).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return read_shard(path)


def read_shard(path) -> TokenShard:
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
    if len(header) < _HEADER.size:
        raise ShardFormatError(f"truncated shard header: {path}")
    magic, width, vocab_size, count = _HEADER.unpack(header)
    if magic != SHARD_MAGIC:
        raise ShardFormatError(f"bad magic {magic!r} in {path}")
    if width not in (2, 4) or width != token_width_for(vocab_size):
        raise ShardFormatError(f"token_width {width} inconsistent with "
                               f"vocab_size {vocab_size} in {path}")
    expected = _HEADER.size + count * width
    actual = os.path.getsize(path)
    if actual != expected:
        raise ShardFormatError(f"shard {path} is {actual} bytes, expected {expected}")
    dtype = np.dtype("<u2") if width == 2 else np.dtype("<u4")
    tokens = np.memmap(path, dtype=dtype, mode="r", offset=_HEADER.size,
                       shape=(count,))
    return TokenShard(vocab_size=int(vocab_size), token_width=int(width),
                      tokens=tokens)


def pack_shard(records: Iterable[dict], model: TokenizerModel, out_path) -> TokenShard:
    """Encode record bodies into one shard, separator token between docs.

    The separator id is model.vocab_size (one past the BPE vocabulary);
    the shard's declared vocab_size is model.vocab_size + 1, so the
    separator is the highest id and collides with no merge.
    """
    sep = model.vocab_size
    tokens: list[int] = []
    first = True
    for rec in records:
        if not first:
            tokens.append(sep)
        tokens.extend(encode(model, rec["body"]))
        first = False
    return write_shard(tokens, vocab_size=model.vocab_size + 1, path=out_path)


def sample_batch(shard: TokenShard, batch_size: int, context_len: int,
                 rng: np.random.Generator) -> Batch:
    """Uniform random offsets; targets are inputs shifted by one."""
    if shard.count < context_len + 1:
        raise ValueError(
            f"shard has {shard.count} tokens, need >= {context_len + 1}"
        )
    offsets = rng.integers(0, shard.count - context_len, size=batch_size)
    data = shard.tokens
    inputs = np.stack([data[o:o + context_len] for o in offsets]).astype(np.int64)
    targets = np.stack([data[o + 1:o + context_len + 1] for o in offsets]).astype(np.int64)
    return Batch(inputs=inputs, targets=targets)
