"""Train a tiny model on a repeating token pattern, then sample from it.

A one-layer transformer memorizes the cycle 1..12 in 200 steps and
continues it greedily with 100% accuracy. Writes checkpoints, a loss log,
and a loss plot under demos/out/. Run with: python3 demos/train_tiny.py
"""

import pathlib

from wikilm import gpt, trainer
from wikilm.packing import write_shard

out = pathlib.Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

pattern = list(range(1, 13))
train_shard = write_shard(pattern * 400, vocab_size=16, path=out / "train.bin")
val_shard = write_shard(pattern * 50, vocab_size=16, path=out / "val.bin")

cfg = gpt.GptConfig(n_layer=1, n_head=4, d_model=64, vocab_size=16,
                    context_len=24)
sched = trainer.LrSchedule(warmup_steps=20, total_steps=200, lr_max=3e-3)
tcfg = trainer.TrainerConfig(batch_size=16, log_interval=20, eval_interval=100,
                             eval_iters=4, seed=0)
print(f"model: {gpt.param_count(cfg):,} parameters")

last = trainer.train(cfg, sched, tcfg, train_shard, val_shard, out / "run",
                     total_steps=200)
rows = trainer.read_log(out / "run" / "loss_log.csv")
print(f"loss: {rows[0].train_loss:.3f} (step 1) -> "
      f"{last.train_loss:.4f} (step {last.step})")

_, tensors, _ = trainer.load_train_checkpoint(out / "run" / "ckpt.bin")
sample = gpt.generate(tensors["params"], cfg, pattern[:4], max_new=32,
                      greedy=True)
print(f"greedy continuation of {pattern[:4]}: {sample[4:]}")

trainer.plot_loss(out / "run" / "loss_log.csv", out / "loss.svg")
print(f"loss curve written to {out / 'loss.svg'}")
