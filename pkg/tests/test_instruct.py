import json

import numpy as np
import pytest

from wikilm import bpe, gpt
from wikilm.instruct import (
    END_OF_TEXT,
    DatasetFormatError,
    FileBackedTranslator,
    FinetuneExample,
    IdentityTranslator,
    InstructionRecord,
    RejectedRecord,
    TranslationInterrupted,
    load_dataset,
    pack_finetune,
    render_prompt,
    render_prompt_parts,
    save_dataset,
    translate_dataset,
    write_finetune_shard,
)

# the two first records of the translated 52k set, as published
PUBLISHED_RECORDS = [
    {"komut": "Sağlıklı kalmak için 3 ipucu verin.", "girdi": "",
     "çıktı": "1. Dengeli bir diyet yiyin ve bol miktarda meyve ve sebze "
              "içerdiğinizden emin olun. 2. Vücudunuzu aktif ve güçlü tutmak "
              "için düzenli olarak egzersiz yapın. 3. Yeterli uyku alın ve "
              "tutarlı bir uyku programı tutun."},
    {"komut": "Üç ana renk nedir?", "girdi": "",
     "çıktı": "Üç ana renk kırmızı, mavi ve sarıdır."},
]


class UppercaseTranslator:
    def translate(self, text, source_lang, target_lang):
        return text.upper()

    def translate_batch(self, texts, source_lang, target_lang):
        return [t.upper() for t in texts]

    def health_check(self):
        return True


class FlakyTranslator:
    """Fails the first n calls, then behaves."""

    def __init__(self, fail_first):
        self.remaining = fail_first

    def translate(self, text, source_lang, target_lang):
        if self.remaining > 0:
            self.remaining -= 1
            raise ConnectionError("backend down")
        return text

    def translate_batch(self, texts, source_lang, target_lang):
        return [self.translate(t, source_lang, target_lang) for t in texts]

    def health_check(self):
        return self.remaining <= 0


class TestLoadDataset:
    def test_published_records_jsonl(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("\n".join(json.dumps(r, ensure_ascii=False)
                                  for r in PUBLISHED_RECORDS), encoding="utf-8")
        records, rejects = load_dataset(path)
        assert rejects == []
        assert len(records) == 2
        assert records[1].komut == "Üç ana renk nedir?"
        assert records[0].girdi == ""

    def test_json_array_form(self, tmp_path):
        path = tmp_path / "d.json"
        path.write_text(json.dumps(PUBLISHED_RECORDS, ensure_ascii=False),
                        encoding="utf-8")
        records, rejects = load_dataset(path)
        assert len(records) == 2

    def test_english_key_scheme(self, tmp_path):
        path = tmp_path / "alpaca.json"
        path.write_text(json.dumps([
            {"instruction": "Give three tips.", "input": "", "output": "1..."},
            {"instruction": "Sum these.", "input": "1,2,3", "output": "6"},
        ]), encoding="utf-8")
        records, rejects = load_dataset(path)
        assert len(records) == 2
        assert records[1].girdi == "1,2,3"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        records, rejects = load_dataset(path)
        assert records == [] and rejects == []

    def test_missing_output_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        rows = [json.dumps(r, ensure_ascii=False) for r in PUBLISHED_RECORDS] * 5
        rows.append(json.dumps({"komut": "Eksik."}))
        path.write_text("\n".join(rows), encoding="utf-8")
        records, rejects = load_dataset(path)
        assert len(rejects) == 1
        assert rejects[0].reason == "missing output"

    def test_majority_rejects_abort(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("\n".join(json.dumps({"foo": "bar"})
                                  for _ in range(10)), encoding="utf-8")
        with pytest.raises(DatasetFormatError, match="schema"):
            load_dataset(path)

    def test_unparseable(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("[{not json")
        with pytest.raises(DatasetFormatError):
            load_dataset(path)


class TestTranslate:
    def _records(self, n=10):
        return [InstructionRecord(komut=f"Komut {i}.",
                                  girdi="" if i % 2 == 0 else f"girdi {i}",
                                  çıktı=f"cevap {i}") for i in range(n)]

    def test_identity_round_trip(self):
        records = self._records()
        out, failures = translate_dataset(records, IdentityTranslator(),
                                          "en", "tr")
        assert failures == []
        assert out == records

    def test_identity_file_round_trip(self, tmp_path):
        records = self._records()
        src = tmp_path / "in.jsonl"
        save_dataset(records, src)
        out_path = tmp_path / "out.jsonl"
        translate_dataset(records, IdentityTranslator(), "en", "tr",
                          out_path=out_path)
        assert out_path.read_bytes() == src.read_bytes()

    def test_mock_reproduces_published_pair(self, tmp_path):
        mapping = {"What are the three primary colors?": "Üç ana renk nedir?",
                   "The three primary colors are red, blue, and yellow.":
                       "Üç ana renk kırmızı, mavi ve sarıdır."}
        mpath = tmp_path / "map.json"
        mpath.write_text(json.dumps(mapping, ensure_ascii=False),
                         encoding="utf-8")
        client = FileBackedTranslator(mpath)
        src = [InstructionRecord(
            komut="What are the three primary colors?", girdi="",
            çıktı="The three primary colors are red, blue, and yellow.")]
        out, _ = translate_dataset(src, client, "en", "tr")
        assert out[0].komut == PUBLISHED_RECORDS[1]["komut"]
        assert out[0].çıktı == PUBLISHED_RECORDS[1]["çıktı"]
        assert out[0].girdi == ""

    def test_uppercase_mock_preserves_empties(self):
        records = self._records(100)
        out, failures = translate_dataset(records, UppercaseTranslator(),
                                          "en", "tr")
        assert len(out) == 100 and failures == []
        for before, after in zip(records, out):
            assert after.komut == before.komut.upper()
            if before.girdi == "":
                assert after.girdi == ""
            else:
                assert after.girdi == before.girdi.upper()

    def test_order_and_cardinality(self):
        records = self._records(30)
        out, failures = translate_dataset(records, IdentityTranslator(),
                                          "en", "tr")
        assert len(out) + len(failures) == len(records)
        assert [r.komut for r in out] == [r.komut for r in records]

    def test_retry_then_success(self):
        records = self._records(2)
        client = FlakyTranslator(fail_first=2)
        out, failures = translate_dataset(records, client, "en", "tr",
                                          sleep=lambda s: None)
        assert len(out) == 2 and failures == []

    def test_exhausted_retries_reported_without_file(self):
        records = self._records(3)
        client = FlakyTranslator(fail_first=100)
        out, failures = translate_dataset(records, client, "en", "tr",
                                          attempts=2, sleep=lambda s: None)
        assert len(failures) >= 1
        assert len(out) + len(failures) == 3

    def test_interrupt_then_resume_identical(self, tmp_path):
        records = self._records(10)
        uninterrupted = tmp_path / "full.jsonl"
        translate_dataset(records, IdentityTranslator(), "en", "tr",
                          out_path=uninterrupted)

        resumed = tmp_path / "resumed.jsonl"
        # enough failures to kill record 4's retries mid-run
        client = FlakyTranslator(fail_first=3)
        # 4 records * 3 fields each retried up to 3 times; fail_first=3
        # exhausts attempts on the very first field
        with pytest.raises(TranslationInterrupted) as exc:
            translate_dataset(records, client, "en", "tr", out_path=resumed,
                              attempts=3, sleep=lambda s: None)
        assert exc.value.cursor == 0
        assert (tmp_path / "resumed.jsonl.partial").exists()

        translate_dataset(records, IdentityTranslator(), "en", "tr",
                          out_path=resumed)
        assert resumed.read_bytes() == uninterrupted.read_bytes()

    def test_interrupt_midway_resume(self, tmp_path):
        records = self._records(10)
        full = tmp_path / "full.jsonl"
        translate_dataset(records, IdentityTranslator(), "en", "tr",
                          out_path=full)
        part = tmp_path / "part.jsonl"

        class DiesAtRecord6(IdentityTranslator):
            def __init__(self):
                self.calls = 0

            def translate(self, text, source_lang, target_lang):
                self.calls += 1
                if self.calls > 6 * 3:
                    raise ConnectionError("gone")
                return text

        with pytest.raises(TranslationInterrupted) as exc:
            translate_dataset(records, DiesAtRecord6(), "en", "tr",
                              out_path=part, attempts=1, sleep=lambda s: None)
        assert 0 < exc.value.cursor < 10
        translate_dataset(records, IdentityTranslator(), "en", "tr",
                          out_path=part)
        assert part.read_bytes() == full.read_bytes()


class TestRender:
    def test_empty_girdi_omits_input_section(self):
        rec = InstructionRecord(**PUBLISHED_RECORDS[0])
        text = render_prompt(rec)
        assert "### Girdi:" not in text
        assert "### Komut:" in text
        assert rec.çıktı in text
        assert text.endswith(END_OF_TEXT)

    def test_girdi_present(self):
        rec = InstructionRecord(komut="Topla.", girdi="1,2,3", çıktı="6")
        text = render_prompt(rec)
        assert "### Girdi:\n1,2,3" in text

    def test_deterministic(self):
        rec = InstructionRecord(**PUBLISHED_RECORDS[1])
        assert render_prompt(rec) == render_prompt(rec)

    def test_injective_on_fixture(self):
        records = [InstructionRecord(komut=f"K{i}", girdi="" if i % 3 else f"G{i}",
                                     çıktı=f"C{i}") for i in range(2000)]
        rendered = {render_prompt(r) for r in records}
        assert len(rendered) == len(records)


class TestPackFinetune:
    @pytest.fixture
    def model(self):
        return bpe.TokenizerModel(merges=[])

    def test_mask_shape(self, model):
        rec = InstructionRecord(komut="K", girdi="", çıktı="C")
        examples, rejects = pack_finetune([rec], model, context_len=512,
                                          epochs=1)
        assert rejects == []
        ex = examples[0]
        prompt, response = render_prompt_parts(rec)
        n_prompt = len(bpe.encode(model, prompt))
        n_resp = len(bpe.encode(model, response))
        assert ex.loss_mask == [0] * n_prompt + [1] * n_resp
        assert sum(ex.loss_mask) == n_resp

    def test_epochs_are_permutations(self, model):
        records = [InstructionRecord(komut=f"K{i}", girdi="", çıktı=f"C{i}")
                   for i in range(100)]
        examples, _ = pack_finetune(records, model, context_len=512, epochs=3,
                                    seed=5)
        assert len(examples) == 300
        keys = [tuple(ex.token_ids) for ex in examples]
        base = sorted(keys[:100])
        for e in range(3):
            assert sorted(keys[e * 100:(e + 1) * 100]) == base
        # shuffled, not repeated verbatim
        assert keys[:100] != keys[100:200] or keys[100:200] != keys[200:300]

    def test_truncation_drops_response_tail(self, model):
        rec = InstructionRecord(komut="K", girdi="", çıktı="x" * 1000)
        prompt, _ = render_prompt_parts(rec)
        n_prompt = len(bpe.encode(model, prompt))
        ctx = n_prompt + 10
        examples, rejects = pack_finetune([rec], model, context_len=ctx,
                                          epochs=1)
        assert rejects == []
        ex = examples[0]
        assert len(ex.token_ids) == ctx
        assert ex.loss_mask[:n_prompt] == [0] * n_prompt
        assert ex.loss_mask[n_prompt:] == [1] * 10

    def test_oversized_prompt_rejected(self, model):
        rec = InstructionRecord(komut="K" * 500, girdi="", çıktı="C")
        examples, rejects = pack_finetune([rec], model, context_len=64,
                                          epochs=1)
        assert examples == []
        assert len(rejects) == 1 and "exceeds" in rejects[0].reason

    def test_masked_loss_matches_suffix_conditional(self, model):
        # cross-module check: masked mean CE over the response equals the
        # mean CE of the response tokens conditioned on the prompt
        rec = InstructionRecord(komut="ab", girdi="", çıktı="cd")
        examples, _ = pack_finetune([rec], model, context_len=256, epochs=1)
        ex = examples[0]
        cfg = gpt.GptConfig(n_layer=1, n_head=2, d_model=16, vocab_size=257,
                            context_len=256)
        params = gpt.init_params(cfg, seed=0, dtype=np.float64)
        ids = np.array([ex.token_ids])
        inputs, targets = ids[:, :-1], ids[:, 1:]
        mask = np.array([ex.loss_mask[1:]])
        masked_loss = gpt.forward(params, cfg, inputs, targets,
                                  loss_mask=mask).loss
        logits = gpt.forward(params, cfg, inputs).logits[0]
        ces = []
        for t in range(inputs.shape[1]):
            if mask[0, t]:
                row = logits[t].astype(np.float64)
                lse = np.log(np.exp(row - row.max()).sum()) + row.max()
                ces.append(lse - row[targets[0, t]])
        assert abs(masked_loss - np.mean(ces)) < 1e-9

    def test_write_shard_format(self, model, tmp_path):
        rec = InstructionRecord(komut="K", girdi="", çıktı="C")
        examples, _ = pack_finetune([rec], model, context_len=512, epochs=2)
        path = tmp_path / "ft.jsonl"
        write_finetune_shard(examples, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        obj = json.loads(lines[0])
        assert len(obj["token_ids"]) == len(obj["loss_mask"])

    def test_bad_epochs(self, model):
        with pytest.raises(ValueError):
            pack_finetune([], model, context_len=8, epochs=0)
