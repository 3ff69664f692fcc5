"""Single entry point exposing the pipeline stages as subcommands.

Exit codes: 0 success, 1 domain error, 2 usage error. A shared INI-style
config file supplies defaults; command-line flags win. All randomness is
seeded from config/flags, never the wall clock.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

import numpy as np

from . import __version__, bpe, corpus_ingest, instruct, packing, trainer
from . import gpt as gpt_mod


class CliError(ValueError):
    pass


def _load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not os.path.exists(path):
            raise CliError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
    return cp


def _cfg(cp, section, key, fallback=None, cast=str):
    if cp.has_option(section, key):
        return cast(cp.get(section, key))
    return fallback


def _iter_bodies(records_path):
    for rec in corpus_ingest.read_records(records_path):
        yield rec["body"]


def cmd_ingest(args, cp):
    report = corpus_ingest.ingest(args.dump, args.out, min_chars=args.min_chars)
    print(report.to_json())
    return 0


def cmd_tokenizer_train(args, cp):
    model = bpe.train_bpe(_iter_bodies(args.corpus), args.vocab)
    bpe.save_model(model, args.out)
    print(json.dumps({"vocab_size": model.vocab_size,
                      "merges": len(model.merges)}))
    return 0


def cmd_tokenizer_encode(args, cp):
    model = bpe.load_model(args.model)
    records = list(corpus_ingest.read_records(args.infile))
    packing.pack_shard(records, model, args.out)
    shard = packing.read_shard(args.out)
    print(json.dumps({"count": shard.count, "vocab_size": shard.vocab_size}))
    return 0


def cmd_stats(args, cp):
    model = bpe.load_model(args.model)
    stats = bpe.corpus_stats(model, _iter_bodies(args.corpus))
    print(json.dumps({"documents": stats.documents,
                      "total_tokens": stats.total_tokens,
                      "total_bytes": stats.total_bytes,
                      "bytes_per_token": stats.bytes_per_token}))
    return 0


def cmd_pack(args, cp):
    model = bpe.load_model(args.model)
    spec = packing.SplitSpec(val_fraction=args.val_fraction, seed=args.seed)
    records = list(corpus_ingest.read_records(args.corpus))
    train_recs, val_recs = packing.split_corpus(records, spec)
    os.makedirs(args.out_dir, exist_ok=True)
    t = packing.pack_shard(train_recs, model, os.path.join(args.out_dir, "train.bin"))
    v = packing.pack_shard(val_recs, model, os.path.join(args.out_dir, "val.bin"))
    print(json.dumps({"train_tokens": t.count, "val_tokens": v.count,
                      "train_records": len(train_recs),
                      "val_records": len(val_recs)}))
    return 0


def cmd_train(args, cp):
    train_shard = packing.read_shard(os.path.join(args.data_dir, "train.bin"))
    val_shard = packing.read_shard(os.path.join(args.data_dir, "val.bin"))
    vocab_size = _cfg(cp, "model", "vocab_size", train_shard.vocab_size, int)
    config = gpt_mod.GptConfig(
        n_layer=_cfg(cp, "model", "n_layer", 4, int),
        n_head=_cfg(cp, "model", "n_head", 4, int),
        d_model=_cfg(cp, "model", "d_model", 128, int),
        vocab_size=vocab_size,
        context_len=_cfg(cp, "model", "context_len", 128, int),
    )
    total_steps = args.steps or _cfg(cp, "schedule", "total_steps", 1000, int)
    schedule = trainer.LrSchedule(
        warmup_steps=_cfg(cp, "schedule", "warmup_steps", 200, int),
        total_steps=total_steps,
        lr_max=_cfg(cp, "schedule", "lr_max", 6e-4, float),
        lr_min=_cfg(cp, "schedule", "lr_min", None,
                    lambda v: float(v)),
    )
    seed = args.seed if args.seed is not None else _cfg(cp, "seeds", "seed", 0, int)
    tcfg = trainer.TrainerConfig(
        batch_size=_cfg(cp, "trainer", "batch_size", 16, int),
        log_interval=_cfg(cp, "trainer", "log_interval", 10, int),
        eval_interval=_cfg(cp, "trainer", "eval_interval", 100, int),
        eval_iters=_cfg(cp, "trainer", "eval_iters", 8, int),
        grad_clip=_cfg(cp, "trainer", "grad_clip", 1.0, float),
        weight_decay=_cfg(cp, "trainer", "weight_decay", 0.1, float),
        seed=seed,
    )
    row = trainer.train(config, schedule, tcfg, train_shard, val_shard,
                        args.out_dir, total_steps=total_steps,
                        resume=args.resume)
    print(json.dumps({"step": row.step, "train_loss": row.train_loss,
                      "val_loss": row.val_loss}))
    return 0


def cmd_plot_loss(args, cp):
    trainer.plot_loss(args.log, args.out)
    print(json.dumps({"out": os.fspath(args.out)}))
    return 0


_ADAPTERS = {
    "identity": lambda spec: instruct.IdentityTranslator(),
    "file": lambda spec: instruct.FileBackedTranslator(spec),
}


def cmd_instruct_translate(args, cp):
    records, rejects = instruct.load_dataset(args.infile)
    if args.adapter not in _ADAPTERS:
        raise CliError(f"unknown adapter {args.adapter!r}; "
                       f"choose from {sorted(_ADAPTERS)}")
    client = _ADAPTERS[args.adapter](args.adapter_arg)
    translated, failures = instruct.translate_dataset(
        records, client, args.source, args.target, out_path=args.out)
    with open(args.out, encoding="utf-8") as f:
        written = sum(1 for line in f if line.strip())
    print(json.dumps({"translated": written, "rejects": len(rejects),
                      "failures": len(failures)}))
    return 0


def cmd_instruct_pack(args, cp):
    records, rejects = instruct.load_dataset(args.infile)
    model = bpe.load_model(args.model)
    examples, pack_rejects = instruct.pack_finetune(
        records, model, context_len=args.ctx, epochs=args.epochs,
        seed=args.seed)
    instruct.write_finetune_shard(examples, args.out)
    print(json.dumps({"examples": len(examples),
                      "rejects": len(rejects) + len(pack_rejects)}))
    return 0


def cmd_version(args, cp):
    print(json.dumps({"version": __version__,
                      "tokenizer_format": bpe.FORMAT_VERSION,
                      "shard_format": packing.SHARD_MAGIC.decode()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wikilm")
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="dump XML -> cleaned record file")
    p.add_argument("--dump", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-chars", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    tok = sub.add_parser("tokenizer", help="BPE tokenizer operations")
    tok_sub = tok.add_subparsers(dest="tok_command", required=True)
    p = tok_sub.add_parser("train")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenizer_train)
    p = tok_sub.add_parser("encode")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenizer_encode)
    p = tok_sub.add_parser("stats")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("stats", help="corpus token statistics")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("pack", help="split corpus and write token shards")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--val-fraction", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("train", help="train the decoder-only model")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--resume", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plot-loss", help="render loss curves from a log CSV")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_loss)

    ins = sub.add_parser("instruct", help="instruction dataset operations")
    ins_sub = ins.add_subparsers(dest="instruct_command", required=True)
    p = ins_sub.add_parser("translate")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--adapter", default="identity")
    p.add_argument("--adapter-arg", default=None,
                   help="adapter parameter (e.g. mapping file for 'file')")
    p.set_defaults(func=cmd_instruct_translate)
    p = ins_sub.add_parser("pack")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--ctx", type=int, required=True)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_instruct_pack)

    p = sub.add_parser("version", help="print tool and format versions")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cp = _load_config(args.config)
        return args.func(args, cp)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
