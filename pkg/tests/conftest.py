import json
import random

import numpy as np
import pytest

from wikilm import bpe

MEDIAWIKI_NS = "http://www.mediawiki.org/xml/export-0.10/"

DUMP_HEADER = f'<mediawiki xmlns="{MEDIAWIKI_NS}" xml:lang="tr">\n'
DUMP_FOOTER = "</mediawiki>\n"


def make_page(page_id, title, text, ns=0, redirect=None):
    redirect_tag = f'<redirect title="{redirect}" />' if redirect else ""
    return (
        "<page>"
        f"<title>{title}</title><ns>{ns}</ns><id>{page_id}</id>{redirect_tag}"
        f"<revision><id>{page_id * 10}</id>"
        f"<text xml:space=\"preserve\">{text}</text></revision>"
        "</page>\n"
    )


@pytest.fixture
def fixture_dump_xml():
    """1 redirect, 1 article cleaning to empty, 2 normal articles, 1 talk page."""
    pages = [
        make_page(1, "Ankara", "'''Ankara''' [[Türkiye]]'nin başkentidir.\n\n"
                               "== Tarih ==\nŞehir çok eskidir."),
        make_page(2, "Yönlendirme", "#YÖNLENDİRME [[Ankara]]", redirect="Ankara"),
        make_page(3, "Boş", "{{sil|gerekçe}}"),
        make_page(4, "İstanbul", "[[İstanbul|Şehir]] {{Infobox|x=1}} büyüktür."),
        make_page(5, "Tartışma:Ankara", "tartışma metni", ns=1),
    ]
    return DUMP_HEADER + "".join(pages) + DUMP_FOOTER


@pytest.fixture
def fixture_dump_path(tmp_path, fixture_dump_xml):
    path = tmp_path / "fixture.xml"
    path.write_text(fixture_dump_xml, encoding="utf-8")
    return path


_WORDS = (
    "ankara istanbul izmir şehir büyük küçük eski yeni tarih deniz dağ göl "
    "nehir ülke başkent nüfus bölge iklim yaz kış bahar güz kültür sanat "
    "müzik eğitim bilim sanayi tarım ticaret ulaşım köprü cadde meydan park"
).split()


def synthetic_articles(n, seed=0, words_per_article=(20, 60)):
    """Deterministic fixture corpus of Turkish-flavoured word salad."""
    rng = random.Random(seed)
    records = []
    for i in range(n):
        k = rng.randint(*words_per_article)
        body = " ".join(rng.choice(_WORDS) for _ in range(k))
        records.append({"id": i, "title": f"Makale {i}", "body": body,
                        "char_len": len(body)})
    return records


@pytest.fixture(scope="session")
def fixture_corpus_100():
    return synthetic_articles(100, seed=1)


@pytest.fixture(scope="session")
def tokenizer_300(fixture_corpus_100):
    """Small trained model shared across tests (300-merge class)."""
    return bpe.train_bpe((r["body"] for r in fixture_corpus_100), 256 + 300)


def write_records(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False, separators=(",", ":")))
            f.write("\n")
    return path
