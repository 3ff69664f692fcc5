"""Corpus-to-model pipeline for low-resource language modeling.

Stages: Wikipedia dump ingest -> byte-level BPE tokenizer -> binary token
shards -> decoder-only GPT training (numpy, analytic gradients) -> translated
instruction-tuning dataset preparation.
"""

__version__ = "0.1.0"

BPE_FORMAT_VERSION = "bpe-v1"
SHARD_MAGIC = b"TOKSHRD1"
