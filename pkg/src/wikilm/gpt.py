"""Decoder-only transformer in numpy: init, forward, analytic backward,
sampling, checkpoints.

Pre-norm residual blocks, learned positional embeddings, tanh-gelu MLP,
causal masking via -inf scores, output head tied to the token embedding.
Parameters live in a flat dict keyed by name (see param_shapes).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

CKPT_MAGIC = b"GPTCKPT1\n"
LN_EPS = 1e-5


@dataclass(frozen=True)
class GptConfig:
    n_layer: int
    n_head: int
    d_model: int
    vocab_size: int
    context_len: int
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_head != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by "
                             f"n_head {self.n_head}")
        if self.context_len < 1:
            raise ValueError("context_len must be >= 1")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")


@dataclass
class ForwardResult:
    logits: np.ndarray      # (batch, seq, vocab_size)
    loss: float | None


def param_shapes(config: GptConfig) -> dict[str, tuple[int, ...]]:
    d = config.d_model
    shapes: dict[str, tuple[int, ...]] = {
        "wte": (config.vocab_size, d),
        "wpe": (config.context_len, d),
    }
    for i in range(config.n_layer):
        p = f"h{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + name] = (d, d)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[p + "attn." + name] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes[p + "mlp.w1"] = (d, 4 * d)
        shapes[p + "mlp.b1"] = (4 * d,)
        shapes[p + "mlp.w2"] = (4 * d, d)
        shapes[p + "mlp.b2"] = (d,)
    shapes["lnf.g"] = (d,)
    shapes["lnf.b"] = (d,)
    return shapes


def param_count(config: GptConfig) -> int:
    """Closed-form parameter count; output head is tied to wte."""
    return sum(math.prod(s) for s in param_shapes(config).values())


def init_params(config: GptConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """normal(0, 0.02) weights, residual projections scaled 1/sqrt(2L),
    zero biases, unit layer-norm gains. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    resid_std = 0.02 / math.sqrt(2 * config.n_layer) if config.n_layer else 0.02
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith((".g",)):
            arr = np.ones(shape)
        elif name.endswith((".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            arr = np.zeros(shape)
        elif name.endswith(("attn.wo", "mlp.w2")):
            arr = rng.normal(0.0, resid_std, size=shape)
        else:
            arr = rng.normal(0.0, 0.02, size=shape)
        params[name] = arr.astype(dtype)
    return params


def _layernorm(x, g, b):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mean) * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_backward(dout, cache):
    xhat, inv, g = cache
    db = dout.sum(axis=tuple(range(dout.ndim - 1)))
    dg = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * g
    n = xhat.shape[-1]
    dx = inv / n * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dg, db


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _gelu_backward(dout, x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    dt = (1.0 - t**2) * _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dout * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _check_batch(config: GptConfig, inputs: np.ndarray):
    if inputs.ndim != 2:
        raise ValueError(f"inputs must be (batch, seq), got shape {inputs.shape}")
    if inputs.shape[1] > config.context_len:
        raise ValueError(f"sequence length {inputs.shape[1]} exceeds "
                         f"context_len {config.context_len}")
    if inputs.size and (inputs.min() < 0 or inputs.max() >= config.vocab_size):
        raise ValueError("token id out of range")


def _forward_cached(params, config, inputs):
    B, T = inputs.shape
    H = config.n_head
    d = config.d_model
    hd = d // H
    scale = 1.0 / math.sqrt(hd)
    causal = np.tril(np.ones((T, T), dtype=bool))

    x = params["wte"][inputs] + params["wpe"][:T]
    layer_caches = []
    for i in range(config.n_layer):
        p = f"h{i}."
        a, ln1_cache = _layernorm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = a @ params[p + "attn.wq"] + params[p + "attn.bq"]
        k = a @ params[p + "attn.wk"] + params[p + "attn.bk"]
        v = a @ params[p + "attn.wv"] + params[p + "attn.bv"]
        # (B, H, T, hd)
        qh = q.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        kh = k.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        vh = v.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        scores = np.where(causal, scores, -np.inf)
        att = _softmax(scores)
        oh = att @ vh                                   # (B, H, T, hd)
        o = oh.transpose(0, 2, 1, 3).reshape(B, T, d)
        proj = o @ params[p + "attn.wo"] + params[p + "attn.bo"]
        x_attn = x + proj

        m, ln2_cache = _layernorm(x_attn, params[p + "ln2.g"], params[p + "ln2.b"])
        z1 = m @ params[p + "mlp.w1"] + params[p + "mlp.b1"]
        h1 = _gelu(z1)
        z2 = h1 @ params[p + "mlp.w2"] + params[p + "mlp.b2"]
        x = x_attn + z2
        layer_caches.append((a, ln1_cache, qh, kh, vh, att, o,
                             m, ln2_cache, z1, h1))
    f, lnf_cache = _layernorm(x, params["lnf.g"], params["lnf.b"])
    logits = f @ params["wte"].T
    return logits, (f, lnf_cache, layer_caches, causal, scale)


def _loss_and_dlogits(logits, targets, loss_mask=None):
    B, T, V = logits.shape
    m = logits.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(logits - m).sum(axis=-1))
    picked = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]
    ce = lse - picked                                    # (B, T)
    if loss_mask is None:
        weight = np.ones_like(ce)
    else:
        weight = np.asarray(loss_mask, dtype=logits.dtype)
    total = weight.sum()
    loss = float((ce * weight).sum() / total)
    probs = np.exp(logits - m) / np.exp(lse - m[..., 0])[..., None]
    dlogits = probs
    np.put_along_axis(dlogits, targets[..., None],
                      np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0,
                      axis=-1)
    dlogits *= (weight / total)[..., None]
    return loss, dlogits


def forward(params: dict, config: GptConfig, inputs: np.ndarray,
            targets: np.ndarray | None = None,
            loss_mask: np.ndarray | None = None) -> ForwardResult:
    """Forward pass; loss is mean next-token cross-entropy when targets
    are given (optionally weighted by a 0/1 loss_mask)."""
    inputs = np.asarray(inputs)
    _check_batch(config, inputs)
    logits, _ = _forward_cached(params, config, inputs)
    loss = None
    if targets is not None:
        loss, _ = _loss_and_dlogits(logits, np.asarray(targets), loss_mask)
    return ForwardResult(logits=logits, loss=loss)


def backward(params: dict, config: GptConfig, inputs: np.ndarray,
             targets: np.ndarray, loss_mask: np.ndarray | None = None):
    """Analytic gradient of the mean loss w.r.t. every parameter.

    Returns (loss, grads) with grads keyed like params.
    """
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    _check_batch(config, inputs)
    B, T = inputs.shape
    H = config.n_head
    d = config.d_model
    hd = d // H

    logits, (f, lnf_cache, layer_caches, causal, scale) = \
        _forward_cached(params, config, inputs)
    loss, dlogits = _loss_and_dlogits(logits, targets, loss_mask)

    grads = {name: np.zeros_like(arr) for name, arr in params.items()}

    # tied head: logits = f @ wte.T
    grads["wte"] += np.einsum("btv,btd->vd", dlogits, f)
    df = dlogits @ params["wte"]
    dx, dg, db = _layernorm_backward(df, lnf_cache)
    grads["lnf.g"] += dg
    grads["lnf.b"] += db

    for i in reversed(range(config.n_layer)):
        p = f"h{i}."
        (a, ln1_cache, qh, kh, vh, att, o, m, ln2_cache, z1, h1) = layer_caches[i]

        # mlp branch: x = x_attn + (gelu(m @ w1 + b1) @ w2 + b2)
        dz2 = dx
        grads[p + "mlp.w2"] += np.einsum("bth,btd->hd", h1, dz2)
        grads[p + "mlp.b2"] += dz2.sum(axis=(0, 1))
        dh1 = dz2 @ params[p + "mlp.w2"].T
        dz1 = _gelu_backward(dh1, z1)
        grads[p + "mlp.w1"] += np.einsum("btd,bth->dh", m, dz1)
        grads[p + "mlp.b1"] += dz1.sum(axis=(0, 1))
        dm = dz1 @ params[p + "mlp.w1"].T
        dx_attn, dg2, db2 = _layernorm_backward(dm, ln2_cache)
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        dx_attn = dx_attn + dx  # residual

        # attention branch
        dproj = dx_attn
        grads[p + "attn.wo"] += np.einsum("btd,bte->de", o, dproj)
        grads[p + "attn.bo"] += dproj.sum(axis=(0, 1))
        do = dproj @ params[p + "attn.wo"].T
        doh = do.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        datt = doh @ vh.transpose(0, 1, 3, 2)
        dvh = att.transpose(0, 1, 3, 2) @ doh
        # softmax backward (masked entries have att = 0)
        dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
        dqh = (dscores @ kh) * scale
        dkh = (dscores.transpose(0, 1, 3, 2) @ qh) * scale

        dq = dqh.transpose(0, 2, 1, 3).reshape(B, T, d)
        dk = dkh.transpose(0, 2, 1, 3).reshape(B, T, d)
        dv = dvh.transpose(0, 2, 1, 3).reshape(B, T, d)
        grads[p + "attn.wq"] += np.einsum("btd,bte->de", a, dq)
        grads[p + "attn.wk"] += np.einsum("btd,bte->de", a, dk)
        grads[p + "attn.wv"] += np.einsum("btd,bte->de", a, dv)
        grads[p + "attn.bq"] += dq.sum(axis=(0, 1))
        grads[p + "attn.bk"] += dk.sum(axis=(0, 1))
        grads[p + "attn.bv"] += dv.sum(axis=(0, 1))
        da = (dq @ params[p + "attn.wq"].T
              + dk @ params[p + "attn.wk"].T
              + dv @ params[p + "attn.wv"].T)
        dx_pre, dg1, db1 = _layernorm_backward(da, ln1_cache)
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dx = dx_attn + dx_pre

    # embeddings
    np.add.at(grads["wte"], inputs, dx)
    grads["wpe"][:T] += dx.sum(axis=0)
    return loss, grads


def generate(params: dict, config: GptConfig, prompt: list[int] | np.ndarray,
             max_new: int, temperature: float = 1.0, top_k: int | None = None,
             rng: np.random.Generator | None = None,
             greedy: bool = False) -> list[int]:
    """Autoregressive sampling with a sliding context window.

    Greedy mode (or top_k = 1) is deterministic and needs no rng.
    """
    ids = list(np.asarray(prompt).tolist())
    if not ids:
        raise ValueError("prompt must be non-empty")
    if not greedy and temperature <= 0:
        raise ValueError("temperature must be > 0 (or use greedy)")
    for _ in range(max_new):
        window = np.asarray([ids[-config.context_len:]])
        logits = forward(params, config, window).logits[0, -1]
        if greedy or top_k == 1:
            next_id = int(np.argmax(logits))
        else:
            scaled = logits / temperature
            if top_k is not None and top_k < scaled.shape[0]:
                cutoff = np.sort(scaled)[-top_k]
                scaled = np.where(scaled >= cutoff, scaled, -np.inf)
            probs = _softmax(scaled.astype(np.float64))
            probs /= probs.sum()
            if rng is None:
                rng = np.random.default_rng()
            next_id = int(rng.choice(probs.shape[0], p=probs))
        ids.append(next_id)
    return ids


# -- checkpoint container -------------------------------------------------
# Layout: magic line, then header lines "key=value" (no newlines in
# values), a blank line, then per tensor (sorted by name) one line
# "tensor <name> <dtype> <ndim> <dims...>" followed by the raw
# little-endian array bytes.

def save_checkpoint(path, config: GptConfig, tensors: dict[str, np.ndarray],
                    meta: dict[str, str] | None = None) -> None:
    meta = meta or {}
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        for field in ("n_layer", "n_head", "d_model", "vocab_size",
                      "context_len", "dropout"):
            f.write(f"config.{field}={getattr(config, field)}\n".encode())
        for key in sorted(meta):
            value = meta[key]
            if "\n" in value:
                raise ValueError(f"meta value for {key!r} contains newline")
            f.write(f"meta.{key}={value}\n".encode())
        f.write(b"\n")
        for name in sorted(tensors):
            arr = np.asarray(tensors[name])
            dtype = arr.dtype.newbyteorder("<")
            dims = " ".join(str(s) for s in arr.shape)
            f.write(f"tensor {name} {dtype.str} {arr.ndim} {dims}\n".encode())
            f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.readline() != CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        fields: dict[str, str] = {}
        meta: dict[str, str] = {}
        while True:
            line = f.readline().decode()
            if line == "\n":
                break
            if not line:
                raise ValueError(f"truncated checkpoint header: {path}")
            key, _, value = line.rstrip("\n").partition("=")
            if key.startswith("config."):
                fields[key[len("config."):]] = value
            elif key.startswith("meta."):
                meta[key[len("meta."):]] = value
        config = GptConfig(
            n_layer=int(fields["n_layer"]), n_head=int(fields["n_head"]),
            d_model=int(fields["d_model"]), vocab_size=int(fields["vocab_size"]),
            context_len=int(fields["context_len"]),
            dropout=float(fields["dropout"]))
        tensors: dict[str, np.ndarray] = {}
        while True:
            line = f.readline().decode()
            if not line:
                break
            parts = line.split()
            if parts[0] != "tensor":
                raise ValueError(f"bad tensor line in {path}: {line!r}")
            name, dtype_str, ndim = parts[1], parts[2], int(parts[3])
            shape = tuple(int(x) for x in parts[4:4 + ndim])
            dtype = np.dtype(dtype_str)
            raw = f.read(dtype.itemsize * math.prod(shape))
            tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        return config, tensors, meta
