"""Walk through the instruction-dataset pipeline on two records.

Shows key-scheme detection, the frozen Turkish prompt template, and how
loss masks cover the response only. Run with:
python3 demos/instruct_walkthrough.py
"""

import json
import pathlib
import tempfile

from wikilm import bpe
from wikilm.instruct import (
    IdentityTranslator,
    load_dataset,
    pack_finetune,
    render_prompt_parts,
    translate_dataset,
)

rows = [
    {"instruction": "What are the three primary colors?", "input": "",
     "output": "The three primary colors are red, blue, and yellow."},
    {"komut": "Cümleyi tamamlayın.", "girdi": "Ankara ...",
     "çıktı": "Ankara Türkiye'nin başkentidir."},
]

with tempfile.TemporaryDirectory() as tmp:
    src = pathlib.Path(tmp) / "data.jsonl"
    src.write_text("\n".join(json.dumps(r, ensure_ascii=False) for r in rows),
                   encoding="utf-8")
    records, rejects = load_dataset(src)

print(f"loaded {len(records)} records, {len(rejects)} rejects "
      "(both key schemes accepted)\n")

# a real deployment plugs in a machine-translation client here
translated, failures = translate_dataset(records, IdentityTranslator(),
                                         "en", "tr")

for rec in translated:
    prompt, response = render_prompt_parts(rec)
    print("--- prompt " + "-" * 40)
    print(prompt, end="")
    print("--- response (loss-bearing) " + "-" * 23)
    print(response)
    print()

model = bpe.TokenizerModel(merges=[])  # raw bytes; any trained model works
examples, _ = pack_finetune(translated, model, context_len=1024, epochs=1)
for ex in examples:
    n_prompt = ex.loss_mask.count(0)
    n_resp = ex.loss_mask.count(1)
    print(f"packed example: {len(ex.token_ids)} tokens "
          f"({n_prompt} prompt masked out, {n_resp} response in the loss)")
