"""Instruction-tuning datasets: load/validate, translate, render, pack.

Records are komut/girdi/çıktı triples (instruction, optional input,
response); the English instruction/input/output key scheme is accepted on
load. Translation goes through a pluggable client; prompt rendering uses
a frozen Turkish template with the input section omitted when girdi is
empty.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

from .bpe import TokenizerModel, encode

CANONICAL_KEYS = ("komut", "girdi", "çıktı")
SOURCE_KEYS = ("instruction", "input", "output")

END_OF_TEXT = "<|son|>"

_HEADER_NO_INPUT = (
    "Aşağıda bir görevi tanımlayan bir komut bulunmaktadır. "
    "İsteği uygun şekilde tamamlayan bir yanıt yazın.\n\n"
)
_HEADER_WITH_INPUT = (
    "Aşağıda bir görevi tanımlayan bir komut ve daha fazla bağlam sağlayan "
    "bir girdi bulunmaktadır. İsteği uygun şekilde tamamlayan bir yanıt "
    "yazın.\n\n"
)


class DatasetFormatError(ValueError):
    """Unparseable or schema-mismatched instruction dataset."""


class TranslationInterrupted(RuntimeError):
    """Translator unreachable after retries; partial progress was saved."""

    def __init__(self, message: str, cursor: int):
        super().__init__(message)
        self.cursor = cursor


@dataclass
class InstructionRecord:
    komut: str
    girdi: str
    çıktı: str

    def to_json(self) -> str:
        obj = {"komut": self.komut, "girdi": self.girdi, "çıktı": self.çıktı}
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


@dataclass
class RejectedRecord:
    index: int
    reason: str
    raw: dict


class TranslatorClient(Protocol):
    """Pluggable machine-translation backend."""

    def translate(self, text: str, source_lang: str, target_lang: str) -> str: ...

    def translate_batch(self, texts: list[str], source_lang: str,
                        target_lang: str) -> list[str]: ...

    def health_check(self) -> bool: ...


class IdentityTranslator:
    """Returns input unchanged; useful for plumbing tests."""

    def translate(self, text, source_lang, target_lang):
        return text

    def translate_batch(self, texts, source_lang, target_lang):
        return [self.translate(t, source_lang, target_lang) for t in texts]

    def health_check(self):
        return True


class FileBackedTranslator:
    """Mock adapter: translations looked up in a JSON mapping file.

    Unmapped strings pass through unchanged.
    """

    def __init__(self, mapping_path):
        with open(mapping_path, "r", encoding="utf-8") as f:
            self.mapping = json.load(f)

    def translate(self, text, source_lang, target_lang):
        return self.mapping.get(text, text)

    def translate_batch(self, texts, source_lang, target_lang):
        return [self.translate(t, source_lang, target_lang) for t in texts]

    def health_check(self):
        return True


def _validate_raw(raw: dict) -> tuple[InstructionRecord | None, str | None]:
    if all(k in raw for k in (CANONICAL_KEYS[0], CANONICAL_KEYS[2])):
        komut, girdi, cikti = (raw.get(k, "") for k in CANONICAL_KEYS)
    elif all(k in raw for k in (SOURCE_KEYS[0], SOURCE_KEYS[2])):
        komut, girdi, cikti = (raw.get(k, "") for k in SOURCE_KEYS)
    elif CANONICAL_KEYS[0] in raw or SOURCE_KEYS[0] in raw:
        return None, "missing output"
    elif CANONICAL_KEYS[2] in raw or SOURCE_KEYS[2] in raw:
        return None, "missing instruction"
    else:
        return None, "unrecognized key scheme"
    if not isinstance(komut, str) or not isinstance(cikti, str) \
            or not isinstance(girdi, str):
        return None, "non-string field"
    if not komut:
        return None, "missing instruction"
    if not cikti:
        return None, "missing output"
    return InstructionRecord(komut=komut, girdi=girdi, çıktı=cikti), None


def load_dataset(path) -> tuple[list[InstructionRecord], list[RejectedRecord]]:
    """Load a JSON-array or JSON-lines dataset; key scheme auto-detected.

    Invalid records land in the rejects list; more than 10% rejects
    aborts (a wholesale schema mismatch, not a few bad rows).
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    stripped = text.lstrip()
    try:
        if stripped.startswith("["):
            raw_records = json.loads(text)
        else:
            raw_records = [json.loads(line) for line in text.splitlines()
                           if line.strip()]
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"unparseable dataset {path}: {e}") from e

    records: list[InstructionRecord] = []
    rejects: list[RejectedRecord] = []
    for idx, raw in enumerate(raw_records):
        if not isinstance(raw, dict):
            rejects.append(RejectedRecord(idx, "not an object", {"value": raw}))
            continue
        rec, reason = _validate_raw(raw)
        if rec is None:
            rejects.append(RejectedRecord(idx, reason, raw))
        else:
            records.append(rec)
    total = len(records) + len(rejects)
    if total and len(rejects) / total > 0.10:
        raise DatasetFormatError(
            f"{len(rejects)}/{total} records rejected; likely schema mismatch")
    return records, rejects


def _translate_field(client: TranslatorClient, text: str, source: str,
                     target: str, attempts: int, backoff: float,
                     sleep: Callable[[float], None]) -> str:
    if text == "":
        return ""
    last_error = None
    for attempt in range(attempts):
        try:
            return client.translate(text, source, target)
        except Exception as e:  # backend failures are external
            last_error = e
            if attempt + 1 < attempts:
                sleep(backoff * 2**attempt)
    raise RuntimeError(f"translation failed after {attempts} attempts: "
                       f"{last_error}")


def translate_dataset(records: list[InstructionRecord],
                      client: TranslatorClient,
                      source_lang: str, target_lang: str,
                      out_path=None, attempts: int = 3,
                      backoff: float = 0.5,
                      sleep: Callable[[float], None] = time.sleep):
    """Translate each non-empty field independently, preserving order.

    When out_path is given, progress streams to out_path + ".partial"
    one record per line; an interrupted run resumes from the partial file
    and the finished file is byte-identical to an uninterrupted run (for
    a deterministic client). Records that fail all retries are reported,
    never silently dropped.
    """
    partial_path = None
    done = 0
    out = None
    if out_path is not None:
        partial_path = os.fspath(out_path) + ".partial"
        if os.path.exists(partial_path):
            with open(partial_path, "r", encoding="utf-8") as f:
                done = sum(1 for line in f if line.strip())
        out = open(partial_path, "a", encoding="utf-8", newline="\n")

    translated: list[InstructionRecord] = []
    failures: list[RejectedRecord] = []
    try:
        for idx, rec in enumerate(records):
            if idx < done:
                continue
            try:
                new = InstructionRecord(
                    komut=_translate_field(client, rec.komut, source_lang,
                                           target_lang, attempts, backoff, sleep),
                    girdi=_translate_field(client, rec.girdi, source_lang,
                                           target_lang, attempts, backoff, sleep),
                    çıktı=_translate_field(client, rec.çıktı, source_lang,
                                           target_lang, attempts, backoff, sleep),
                )
            except RuntimeError as e:
                if out is not None:
                    out.close()
                    out = None
                    raise TranslationInterrupted(
                        f"record {idx}: {e}; partial progress at "
                        f"{partial_path}", cursor=idx) from e
                failures.append(RejectedRecord(idx, str(e),
                                               {"komut": rec.komut}))
                continue
            translated.append(new)
            if out is not None:
                out.write(new.to_json())
                out.write("\n")
                out.flush()
    finally:
        if out is not None:
            out.close()
    if out_path is not None:
        os.replace(partial_path, out_path)
    return translated, failures


def render_prompt_parts(record: InstructionRecord) -> tuple[str, str]:
    """(prompt text, response text incl. end-of-text marker)."""
    if record.girdi:
        prompt = (_HEADER_WITH_INPUT
                  + f"### Komut:\n{record.komut}\n\n"
                  + f"### Girdi:\n{record.girdi}\n\n"
                  + "### Yanıt:\n")
    else:
        prompt = (_HEADER_NO_INPUT
                  + f"### Komut:\n{record.komut}\n\n"
                  + "### Yanıt:\n")
    return prompt, record.çıktı + END_OF_TEXT


def render_prompt(record: InstructionRecord) -> str:
    prompt, response = render_prompt_parts(record)
    return prompt + response


@dataclass
class FinetuneExample:
    token_ids: list[int]
    loss_mask: list[int]

    def __post_init__(self):
        if len(self.token_ids) != len(self.loss_mask):
            raise ValueError("token_ids and loss_mask lengths differ")


def pack_finetune(records: list[InstructionRecord], model: TokenizerModel,
                  context_len: int, epochs: int = 3, seed: int = 0,
                  mask_prompt: bool = True):
    """Render, tokenize and mask records; materialize epochs shuffles.

    Truncation drops response tokens from the end, never prompt tokens;
    a record whose prompt alone exceeds context_len is rejected. Returns
    (examples, rejects); examples hold all epochs back to back, each
    epoch an independent seeded permutation of the record list.
    """
    import numpy as np

    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    prepared: list[FinetuneExample] = []
    rejects: list[RejectedRecord] = []
    for idx, rec in enumerate(records):
        prompt, response = render_prompt_parts(rec)
        prompt_ids = encode(model, prompt)
        response_ids = encode(model, response)
        if len(prompt_ids) > context_len:
            rejects.append(RejectedRecord(
                idx, f"prompt alone is {len(prompt_ids)} tokens, "
                     f"exceeds context_len {context_len}", {"komut": rec.komut}))
            continue
        ids = (prompt_ids + response_ids)[:context_len]
        mask = ([0] * len(prompt_ids) + [1] * len(response_ids))[:context_len]
        if not mask_prompt:
            mask = [1] * len(ids)
        prepared.append(FinetuneExample(token_ids=ids, loss_mask=mask))

    examples: list[FinetuneExample] = []
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(prepared))
        examples.extend(prepared[i] for i in order)
    return examples, rejects


def write_finetune_shard(examples: Iterable[FinetuneExample], path) -> None:
    """One JSON object per line: {"token_ids": [...], "loss_mask": [...]}."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ex in examples:
            f.write(json.dumps({"token_ids": ex.token_ids,
                                "loss_mask": ex.loss_mask},
                               separators=(",", ":")))
            f.write("\n")


def save_dataset(records: Iterable[InstructionRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(rec.to_json())
            f.write("\n")
