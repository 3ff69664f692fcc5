"""Optimization loop: AdamW, warmup + cosine LR, eval, checkpoints, logs.

The loss log is an append-only CSV ``step,lr,train_loss,val_loss,wall_ms``
(val_loss cell empty on non-eval steps). A run is a pure function of
(config, schedule, shard bytes, seeds, clock).
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import gpt
from .packing import TokenShard, sample_batch


class NonFiniteLossError(RuntimeError):
    """Training loss became NaN or infinite."""


@dataclass
class LrSchedule:
    warmup_steps: int
    total_steps: int
    lr_max: float = 6e-4
    lr_min: float | None = None

    def __post_init__(self):
        if self.lr_min is None:
            self.lr_min = self.lr_max / 10
        if not (0 < self.warmup_steps < self.total_steps):
            raise ValueError("need 0 < warmup_steps < total_steps")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must be <= lr_max")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear warmup to lr_max, then cosine decay to lr_min."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step < schedule.warmup_steps:
        return schedule.lr_max * (step + 1) / schedule.warmup_steps
    if step == schedule.warmup_steps:
        return schedule.lr_max        # cos(0) endpoint, exact
    if step >= schedule.total_steps:
        return schedule.lr_min        # cos(pi) endpoint, exact
    progress = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (
        1.0 + math.cos(math.pi * progress))


@dataclass
class OptimState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1


def init_optim(params: dict[str, np.ndarray], beta1: float = 0.9,
               beta2: float = 0.95, eps: float = 1e-8,
               weight_decay: float = 0.1) -> OptimState:
    return OptimState(
        step=0,
        m={k: np.zeros_like(a) for k, a in params.items()},
        v={k: np.zeros_like(a) for k, a in params.items()},
        beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)


def adamw_step(params: dict, grads: dict, state: OptimState, lr: float):
    """One decoupled-weight-decay Adam update (in place).

    Decay applies only to matrices (ndim >= 2), never to biases or
    layer-norm parameters.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ValueError("parameter/gradient/state key sets differ")
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        update = mhat / (np.sqrt(vhat) + state.eps)
        if theta.ndim >= 2:
            update = update + state.weight_decay * theta
        theta -= (lr * update).astype(theta.dtype)
    state.step = t
    return params, state


def gradient_clip(grads: dict, max_norm: float) -> dict:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64)**2))
                          for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return grads


def estimate_loss(params: dict, config: gpt.GptConfig,
                  train_shard: TokenShard, val_shard: TokenShard,
                  batch_size: int, eval_iters: int, seed: int):
    """Mean forward loss over eval_iters batches per split.

    Uses its own rng stream; never touches the training rng.
    """
    losses = []
    for shard in (train_shard, val_shard):
        rng = np.random.default_rng(seed)
        acc = 0.0
        for _ in range(eval_iters):
            batch = sample_batch(shard, batch_size, config.context_len, rng)
            acc += forward_loss(params, config, batch)
        losses.append(acc / eval_iters)
    return losses[0], losses[1]


def forward_loss(params, config, batch) -> float:
    return gpt.forward(params, config, batch.inputs, batch.targets).loss


@dataclass
class TrainerConfig:
    batch_size: int = 16
    log_interval: int = 10
    eval_interval: int = 100
    eval_iters: int = 8
    grad_clip: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    seed: int = 0


@dataclass
class TrainLogRow:
    step: int
    lr: float
    train_loss: float
    val_loss: float | None
    wall_ms: float


def _append_log(path, rows: list[TrainLogRow], write_header: bool):
    with open(path, "a", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        if write_header:
            w.writerow(["step", "lr", "train_loss", "val_loss", "wall_ms"])
        for r in rows:
            val = "" if r.val_loss is None else repr(r.val_loss)
            w.writerow([r.step, repr(r.lr), repr(r.train_loss), val,
                        repr(r.wall_ms)])


def _rng_state_dumps(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, sort_keys=True)


def _rng_from_state(state_json: str) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(state_json)
    return rng


def train(config: gpt.GptConfig, schedule: LrSchedule, tcfg: TrainerConfig,
          train_shard: TokenShard, val_shard: TokenShard, out_dir,
          total_steps: int | None = None, resume=None,
          clock=time.perf_counter) -> TrainLogRow:
    """Run sample -> forward -> backward -> clip -> AdamW for total_steps.

    Checkpoints (with optimizer state and rng) every eval_interval and at
    the end; resuming from a checkpoint reproduces the uninterrupted run
    exactly. Aborts with a diagnostic checkpoint on non-finite loss.
    """
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "loss_log.csv")
    ckpt_path = os.path.join(out_dir, "ckpt.bin")
    if total_steps is None:
        total_steps = schedule.total_steps

    if resume is not None:
        config, tensors, meta = load_train_checkpoint(resume)
        params = tensors["params"]
        opt = tensors["opt"]
        start_step = int(meta["step"])
        rng = _rng_from_state(meta["rng_state"])
    else:
        params = gpt.init_params(config, seed=tcfg.seed)
        opt = init_optim(params, beta1=tcfg.beta1, beta2=tcfg.beta2,
                         weight_decay=tcfg.weight_decay)
        start_step = 0
        rng = np.random.default_rng((tcfg.seed, 1))
        if os.path.exists(log_path):
            os.remove(log_path)

    wrote_header = os.path.exists(log_path)
    t0 = clock()
    pending: list[TrainLogRow] = []
    last_row: TrainLogRow | None = None
    for step in range(start_step, total_steps):
        batch = sample_batch(train_shard, tcfg.batch_size, config.context_len, rng)
        loss, grads = gpt.backward(params, config, batch.inputs, batch.targets)
        if not math.isfinite(loss):
            save_train_checkpoint(ckpt_path + ".diagnostic", config, params,
                                  opt, step, rng)
            raise NonFiniteLossError(f"loss {loss} at step {step}; "
                                     "diagnostic checkpoint written")
        gradient_clip(grads, tcfg.grad_clip)
        lr = lr_at(schedule, step)
        adamw_step(params, grads, opt, lr)

        done = step + 1
        is_eval = done % tcfg.eval_interval == 0 or done == total_steps
        val_loss = None
        train_loss = loss
        if is_eval:
            train_loss, val_loss = estimate_loss(
                params, config, train_shard, val_shard,
                tcfg.batch_size, tcfg.eval_iters, seed=(tcfg.seed * 1000003 + done))
            save_train_checkpoint(ckpt_path, config, params, opt, done, rng)
        if is_eval or done % tcfg.log_interval == 0 or done == 1:
            wall_ms = (clock() - t0) * 1000.0
            row = TrainLogRow(step=done, lr=lr, train_loss=train_loss,
                              val_loss=val_loss, wall_ms=wall_ms)
            pending.append(row)
            last_row = row
    _append_log(log_path, pending, write_header=not wrote_header)
    if last_row is None:
        raise ValueError("total_steps must exceed the resume step")
    return last_row


def save_train_checkpoint(path, config, params, opt: OptimState, step: int,
                          rng: np.random.Generator) -> None:
    tensors = dict(params)
    for name, arr in opt.m.items():
        tensors["opt.m." + name] = arr
    for name, arr in opt.v.items():
        tensors["opt.v." + name] = arr
    meta = {
        "step": str(step),
        "rng_state": _rng_state_dumps(rng),
        "opt": json.dumps({"step": opt.step, "beta1": opt.beta1,
                           "beta2": opt.beta2, "eps": opt.eps,
                           "weight_decay": opt.weight_decay}, sort_keys=True),
    }
    gpt.save_checkpoint(path, config, tensors, meta)


def load_train_checkpoint(path):
    config, tensors, meta = gpt.load_checkpoint(path)
    params = {}
    m = {}
    v = {}
    for name, arr in tensors.items():
        if name.startswith("opt.m."):
            m[name[len("opt.m."):]] = arr
        elif name.startswith("opt.v."):
            v[name[len("opt.v."):]] = arr
        else:
            params[name] = arr
    opt_meta = json.loads(meta["opt"])
    opt = OptimState(step=opt_meta["step"], m=m, v=v,
                     beta1=opt_meta["beta1"], beta2=opt_meta["beta2"],
                     eps=opt_meta["eps"], weight_decay=opt_meta["weight_decay"])
    return config, {"params": params, "opt": opt}, meta


def read_log(path) -> list[TrainLogRow]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        for rec in reader:
            rows.append(TrainLogRow(
                step=int(rec["step"]), lr=float(rec["lr"]),
                train_loss=float(rec["train_loss"]),
                val_loss=float(rec["val_loss"]) if rec["val_loss"] else None,
                wall_ms=float(rec["wall_ms"])))
    return rows


def plot_loss(log_path, out_path) -> None:
    """Render train/val loss curves from a loss log CSV to an image file."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_log(log_path)
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot([r.step for r in rows], [r.train_loss for r in rows],
            label="train")
    evals = [r for r in rows if r.val_loss is not None]
    if evals:
        ax.plot([r.step for r in evals], [r.val_loss for r in evals],
                marker="o", label="val")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
