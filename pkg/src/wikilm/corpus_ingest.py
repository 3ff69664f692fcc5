"""Wikipedia dump ingestion: stream XML pages, strip wikitext, emit records.

Keeps main-namespace, non-redirect pages whose cleaned body is non-empty.
Output is UTF-8 JSON lines with field order id, title, body, char_len.
"""

from __future__ import annotations

import bz2
import gzip
import json
import os
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import IO, Iterator


class DumpFormatError(ValueError):
    """Malformed dump XML."""


class UnsupportedCompressionError(ValueError):
    """Dump file extension does not declare a supported codec."""


@dataclass
class RawPage:
    id: int
    title: str
    namespace: int
    wikitext: str
    is_redirect: bool


@dataclass
class ArticleRecord:
    id: int
    title: str
    body: str

    @property
    def char_len(self) -> int:
        return len(self.body)

    def to_json(self) -> str:
        obj = {"id": self.id, "title": self.title, "body": self.body,
               "char_len": self.char_len}
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


@dataclass
class IngestReport:
    pages_seen: int = 0
    redirects_dropped: int = 0
    empty_dropped: int = 0
    other_dropped: int = 0  # non-article namespaces
    records_emitted: int = 0
    total_chars: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, separators=(",", ":"))


def _open_dump(source) -> IO[bytes]:
    if hasattr(source, "read"):
        return source
    name = os.fspath(source)
    if name.endswith(".bz2"):
        return bz2.open(name, "rb")
    if name.endswith(".gz"):
        return gzip.open(name, "rb")
    if name.endswith(".xml"):
        return open(name, "rb")
    raise UnsupportedCompressionError(
        f"cannot determine codec from extension: {name!r} "
        "(expected .xml, .xml.bz2 or .xml.gz)"
    )


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_dump(source) -> Iterator[RawPage]:
    """Stream pages from a dump in document order; bounded memory.

    source may be a path (codec chosen by extension) or a binary stream of
    plain XML.
    """
    stream = _open_dump(source)
    try:
        context = ET.iterparse(stream, events=("start", "end"))
        root = None
        for event, elem in context:
            if event == "start":
                if root is None:
                    root = elem
                continue
            if _local(elem.tag) != "page":
                continue
            page_id = None
            title = ""
            ns = 0
            text = ""
            is_redirect = False
            for child in elem:
                tag = _local(child.tag)
                if tag == "id" and page_id is None:
                    page_id = int(child.text)
                elif tag == "title":
                    title = child.text or ""
                elif tag == "ns":
                    ns = int(child.text or 0)
                elif tag == "redirect":
                    is_redirect = True
                elif tag == "revision":
                    for sub in child:
                        if _local(sub.tag) == "text":
                            text = sub.text or ""
            if page_id is None:
                raise DumpFormatError(f"page without id (title {title!r})")
            yield RawPage(id=page_id, title=title, namespace=ns,
                          wikitext=text, is_redirect=is_redirect)
            elem.clear()
            if root is not None:
                # drop processed siblings so memory stays bounded
                for done in list(root):
                    root.remove(done)
    except ET.ParseError as e:
        raise DumpFormatError(f"malformed dump XML: {e}") from e
    finally:
        if stream is not source:
            stream.close()


_RE_COMMENT = re.compile(r"<!--.*?-->", re.DOTALL)
_RE_REF = re.compile(r"<ref[^>/]*?/>|<ref[^>]*?>.*?</ref>", re.DOTALL | re.IGNORECASE)
_RE_TAG = re.compile(r"</?[a-zA-Z][^>]*>")
_RE_EXTLINK = re.compile(r"\[(?:https?|ftp)://[^\s\]]+(?:\s+([^\]]*))?\]")
_RE_INNER_LINK = re.compile(r"\[\[([^\[\]]*)\]\]")
_RE_HEADING = re.compile(r"^\s*(={1,6})\s*(.*?)\s*\1\s*$", re.MULTILINE)
_RE_QUOTES = re.compile(r"''+")

_DROP_LINK_PREFIXES = (
    "file:", "image:", "category:", "dosya:", "resim:", "kategori:",
)


def _strip_balanced(text: str, open_mark: str, close_mark: str) -> str:
    """Remove nesting-aware open..close blocks; unbalanced opens drop to
    the end of the paragraph."""
    out = []
    i = 0
    n = len(text)
    while i < n:
        start = text.find(open_mark, i)
        if start < 0:
            out.append(text[i:])
            break
        out.append(text[i:start])
        depth = 1
        j = start + len(open_mark)
        while j < n and depth:
            if text.startswith(open_mark, j):
                depth += 1
                j += len(open_mark)
            elif text.startswith(close_mark, j):
                depth -= 1
                j += len(close_mark)
            else:
                j += 1
        if depth:
            # unbalanced: drop to end of paragraph
            para_end = text.find("\n\n", start)
            j = n if para_end < 0 else para_end
        i = j
    return "".join(out)


def _replace_links(text: str) -> str:
    # innermost-out so nested links (image captions) resolve
    while True:
        def repl(m: re.Match) -> str:
            inner = m.group(1)
            target, _, label = inner.partition("|")
            if target.strip().lower().startswith(_DROP_LINK_PREFIXES):
                return ""
            return label.rpartition("|")[-1] if "|" in inner else target
        new = _RE_INNER_LINK.sub(repl, text)
        if new == text:
            return new
        text = new


def _drop_unbalanced(text: str, marker: str) -> str:
    while True:
        pos = text.find(marker)
        if pos < 0:
            return text
        para_end = text.find("\n\n", pos)
        text = text[:pos] + ("" if para_end < 0 else text[para_end:])


def clean_markup(wikitext: str) -> str:
    """Reduce wikitext to plaintext.

    Removes comments, ref blocks, templates (nesting-aware), tables and
    HTML tags; reduces wiki links to their label and external links to
    their anchor text; strips heading markers and emphasis quotes; then
    collapses whitespace so paragraphs are separated by single blank
    lines. Total: any input yields some (possibly empty) plaintext.
    """
    text = _RE_COMMENT.sub("", wikitext)
    text = _RE_REF.sub("", text)
    text = _strip_balanced(text, "{{", "}}")
    text = _strip_balanced(text, "{|", "|}")
    text = _replace_links(text)
    text = _RE_EXTLINK.sub(lambda m: m.group(1) or "", text)
    text = _RE_TAG.sub("", text)
    text = _RE_HEADING.sub(r"\2", text)
    text = _RE_QUOTES.sub("", text)
    text = re.sub(r"={2,}", " ", text)  # heading markers not alone on a line
    text = _drop_unbalanced(text, "{{")
    text = _drop_unbalanced(text, "[[")
    text = text.replace("]]", "").replace("}}", "")

    # collapse whitespace: single spaces within lines, single blank lines
    # between paragraphs
    lines = [re.sub(r"[ \t]+", " ", ln).strip() for ln in text.split("\n")]
    paragraphs = []
    current: list[str] = []
    for ln in lines:
        if ln:
            current.append(ln)
        elif current:
            paragraphs.append("\n".join(current))
            current = []
    if current:
        paragraphs.append("\n".join(current))
    return "\n\n".join(paragraphs)


def ingest(source, sink, min_chars: int = 0) -> IngestReport:
    """Run the dump through cleaning and write one JSON record per line.

    Deterministic: the same dump bytes produce a byte-identical record
    file. On failure the partial output file is removed.
    """
    report = IngestReport()
    tmp = os.fspath(sink) + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as out:
            for page in parse_dump(source):
                report.pages_seen += 1
                if page.namespace != 0:
                    report.other_dropped += 1
                    continue
                if page.is_redirect:
                    report.redirects_dropped += 1
                    continue
                body = clean_markup(page.wikitext)
                if len(body) == 0 or len(body) < min_chars:
                    report.empty_dropped += 1
                    continue
                record = ArticleRecord(id=page.id, title=page.title, body=body)
                out.write(record.to_json())
                out.write("\n")
                report.records_emitted += 1
                report.total_chars += record.char_len
        os.replace(tmp, sink)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return report


def read_records(path) -> Iterator[dict]:
    """Iterate records from a line-delimited record file."""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)
