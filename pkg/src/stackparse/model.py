"""Encoder-decoder Transformer over (word sequence -> action sequence).

The decoder's cross-attention supports per-head specialization: a
specialized head may attend only the encoder positions its attention
plan permits at each step (stack or buffer content), optionally adding
a learned depth embedding to the key before scoring:

    e_ti = b_t W_Q ((h_i + p_ti) W_K)^T / sqrt(d)    over permitted i

Everything is numpy with hand-derived backprop; forward functions
return explicit caches consumed by the backward pass.  Training runs in
float32; gradient checks use float64 via `ModelConfig.dtype`.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .plan import FREE, STACK_TARGETS, TARGETS, HeadSpec

LN_EPS = 1e-5


# ------------------------------------------------------------ config

@dataclass(frozen=True)
class ModelConfig:
    n_word_vocab: int
    n_action_vocab: int
    enc_layers: int = 2
    dec_layers: int = 2
    d_model: int = 128
    n_heads: int = 4
    ffn_dim: int = 512
    head_specs: tuple[HeadSpec, ...] = tuple(HeadSpec(FREE) for _ in range(4))
    dropout: float = 0.1
    label_smoothing: float = 0.01
    max_depth: int = 32
    vanilla: bool = False  # dedicated cross-attention path, plans ignored
    ext_dim: int | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if len(self.head_specs) != self.n_heads:
            raise ValueError("need exactly one HeadSpec per head")
        if self.vanilla and any(s.target != FREE for s in self.head_specs):
            raise ValueError("vanilla path cannot carry specialized heads")
        if self.n_action_vocab < 2 or self.n_word_vocab < 2:
            raise ValueError("degenerate vocabulary")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def spec_heads(self) -> tuple[tuple[int, int, str, bool], ...]:
        """(head index, plan row, side, with_positions) per specialized head."""
        out = []
        row = 0
        for h, spec in enumerate(self.head_specs):
            if spec.target == FREE:
                continue
            side = "stack" if spec.target in STACK_TARGETS else "buffer"
            out.append((h, row, side, spec.with_positions))
            row += 1
        return tuple(out)

    @property
    def n_spec_heads(self) -> int:
        return len(self.spec_heads)

    @property
    def has_positions(self) -> bool:
        return any(s.with_positions and s.target != FREE for s in self.head_specs)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "n_word_vocab", "n_action_vocab", "enc_layers", "dec_layers",
            "d_model", "n_heads", "ffn_dim", "dropout", "label_smoothing",
            "max_depth", "vanilla", "ext_dim", "dtype")}
        d["head_specs"] = [[s.target, s.with_positions] for s in self.head_specs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["head_specs"] = tuple(HeadSpec(t, bool(w)) for t, w in d["head_specs"])
        d["ext_dim"] = d.get("ext_dim") or None
        return cls(**d)


def head_specs_from_names(names) -> tuple[HeadSpec, ...]:
    """Parse specs like "stack", "buffer+pos", "stack2", "free"."""
    alias = {"stack": "FULL_STACK", "buffer": "FULL_BUFFER",
             "stack2": "TOP2_STACK", "buffer2": "TOP2_BUFFER", "free": "FREE"}
    specs = []
    for name in names:
        base, _, flag = name.partition("+")
        if flag not in ("", "pos"):
            raise ValueError(f"bad head spec {name!r}")
        target = alias.get(base, base)
        if target not in TARGETS:
            raise ValueError(f"bad head spec {name!r}")
        specs.append(HeadSpec(target, with_positions=flag == "pos"))
    return tuple(specs)


# ------------------------------------------------------- parameters

def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Fresh parameters; creation order is fixed so equal-shape variants
    share initial weights under the same seed."""
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    d = config.d_model
    p: dict[str, np.ndarray] = {}

    def emb(name, rows):
        p[name] = (rng.standard_normal((rows, d)) / math.sqrt(d)).astype(dt)

    def mat(name, fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        p[name] = rng.uniform(-lim, lim, (fan_in, fan_out)).astype(dt)

    def zeros(name, *shape):
        p[name] = np.zeros(shape, dtype=dt)

    def ones(name, *shape):
        p[name] = np.ones(shape, dtype=dt)

    def attn_block(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            mat(f"{prefix}.{w}", d, d)
        for b in ("bq", "bk", "bv", "bo"):
            zeros(f"{prefix}.{b}", d)

    def ffn_block(prefix):
        mat(f"{prefix}.w1", d, config.ffn_dim)
        zeros(f"{prefix}.b1", config.ffn_dim)
        mat(f"{prefix}.w2", config.ffn_dim, d)
        zeros(f"{prefix}.b2", d)

    def ln_block(prefix):
        ones(f"{prefix}.g", d)
        zeros(f"{prefix}.b", d)

    emb("word_emb", config.n_word_vocab)
    emb("act_emb", config.n_action_vocab)
    for i in range(config.enc_layers):
        attn_block(f"enc{i}.attn")
        ln_block(f"enc{i}.ln1")
        ffn_block(f"enc{i}.ffn")
        ln_block(f"enc{i}.ln2")
    for i in range(config.dec_layers):
        attn_block(f"dec{i}.self")
        ln_block(f"dec{i}.ln1")
        attn_block(f"dec{i}.cross")
        ln_block(f"dec{i}.ln2")
        ffn_block(f"dec{i}.ffn")
        ln_block(f"dec{i}.ln3")
    mat("out.w", d, config.n_action_vocab)
    zeros("out.b", config.n_action_vocab)
    if config.has_positions:
        emb("depth.stack", config.max_depth)
        emb("depth.buffer", config.max_depth)
    if config.ext_dim:
        mat("ext.proj", config.ext_dim, d)
    return p


def count_params(params: dict[str, np.ndarray]) -> int:
    return sum(int(v.size) for v in params.values())


@lru_cache(maxsize=8)
def _sinusoid_table(n_pos: int, d: int, dtype: str) -> np.ndarray:
    pos = np.arange(n_pos, dtype=np.float64)[:, None]
    dim = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (dim // 2) / d)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def sinusoid(n_pos: int, config: ModelConfig) -> np.ndarray:
    # round the table size up so incremental decoding reuses one cache entry
    size = max(64, 1 << (n_pos - 1).bit_length())
    return _sinusoid_table(size, config.d_model, config.dtype)[:n_pos]


# ------------------------------------------------------- primitives

def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _linear(x, w, b):
    return x @ w + b


def _linear_bwd(dy, x, w):
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dy = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, flat_x.T @ flat_dy, flat_dy.sum(0)


def _dropout(x, rate, rng, cache, key):
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    cache[key] = keep
    return x * keep


def _dropout_bwd(dy, cache, key):
    keep = cache.get(key)
    return dy if keep is None else dy * keep


def _ln(x, params, prefix, cache):
    y, xhat, rstd = kernels.layer_norm(x, params[f"{prefix}.g"],
                                       params[f"{prefix}.b"], LN_EPS)
    cache[prefix] = (xhat, rstd)
    return y


def _ln_bwd(dy, params, prefix, cache, grads):
    xhat, rstd = cache[prefix]
    dx, dg, db = kernels.layer_norm_grad(dy, xhat, rstd, params[f"{prefix}.g"])
    _acc(grads, f"{prefix}.g", dg)
    _acc(grads, f"{prefix}.b", db)
    return dx


def _acc(grads: dict, name: str, val: np.ndarray) -> None:
    if name in grads:
        grads[name] += val
    else:
        grads[name] = val


def _attn_core(q, k, v, mask, scale):
    """q (B,H,T,dh), k/v (B,H,S,dh), mask (B,H,T,S) -> ctx, probs."""
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    probs = kernels.masked_softmax(scores, mask)
    return probs @ v, probs


def _attn_core_bwd(dctx, probs, q, k, v, scale):
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = kernels.masked_softmax_grad(probs, dprobs) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    return dq, dk, dv, dscores


def _ffn(x, params, prefix, cache):
    h = _linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"])
    r = np.maximum(h, 0.0)
    cache[prefix] = (x, h > 0, r)
    return _linear(r, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _ffn_bwd(dy, params, prefix, cache, grads):
    x, relu_mask, r = cache[prefix]
    dr, dw2, db2 = _linear_bwd(dy, r, params[f"{prefix}.w2"])
    _acc(grads, f"{prefix}.w2", dw2)
    _acc(grads, f"{prefix}.b2", db2)
    dh = dr * relu_mask
    dx, dw1, db1 = _linear_bwd(dh, x, params[f"{prefix}.w1"])
    _acc(grads, f"{prefix}.w1", dw1)
    _acc(grads, f"{prefix}.b1", db1)
    return dx


def _self_attention(x, mask, params, prefix, cfg, cache):
    q = _split_heads(_linear(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"]),
                     cfg.n_heads)
    k = _split_heads(_linear(x, params[f"{prefix}.wk"], params[f"{prefix}.bk"]),
                     cfg.n_heads)
    v = _split_heads(_linear(x, params[f"{prefix}.wv"], params[f"{prefix}.bv"]),
                     cfg.n_heads)
    scale = 1.0 / math.sqrt(cfg.d_head)
    ctx, probs = _attn_core(q, k, v, mask, scale)
    merged = _merge_heads(ctx)
    out = _linear(merged, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    cache[prefix] = (x, q, k, v, probs, merged)
    return out


def _self_attention_bwd(dout, params, prefix, cfg, cache, grads):
    x, q, k, v, probs, merged = cache[prefix]
    scale = 1.0 / math.sqrt(cfg.d_head)
    dmerged, dwo, dbo = _linear_bwd(dout, merged, params[f"{prefix}.wo"])
    _acc(grads, f"{prefix}.wo", dwo)
    _acc(grads, f"{prefix}.bo", dbo)
    dctx = _split_heads(dmerged, cfg.n_heads)
    dq, dk, dv, _ = _attn_core_bwd(dctx, probs, q, k, v, scale)
    dx = np.zeros_like(x)
    for name, dmat in (("wq", dq), ("wk", dk), ("wv", dv)):
        dproj = _merge_heads(dmat)
        dxp, dw, db = _linear_bwd(dproj, x, params[f"{prefix}.{name}"])
        _acc(grads, f"{prefix}.{name}", dw)
        _acc(grads, f"{prefix}.b{name[1]}", db)
        dx += dxp
    return dx


def _cross_attention(x, henc, mask, params, prefix, cfg, cache,
                     plan_depths=None):
    """Multi-head cross-attention with optional key-side depth embeddings.

    `mask` (B,H,T,S) already encodes padding for FREE heads and plan
    permission for specialized heads.  `plan_depths` (B,K,T,S) adds
    p_ti W_K to specialized with-positions heads' scores via the
    identity q(k+p)^T = qk^T + qp^T.
    """
    q = _split_heads(_linear(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"]),
                     cfg.n_heads)
    k = _split_heads(_linear(henc, params[f"{prefix}.wk"], params[f"{prefix}.bk"]),
                     cfg.n_heads)
    v = _split_heads(_linear(henc, params[f"{prefix}.wv"], params[f"{prefix}.bv"]),
                     cfg.n_heads)
    scale = 1.0 / math.sqrt(cfg.d_head)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    pos_cache = {}
    if plan_depths is not None:
        dh = cfg.d_head
        wk = params[f"{prefix}.wk"]
        for head, row, side, with_pos in cfg.spec_heads:
            if not with_pos:
                continue
            dproj = params[f"depth.{side}"] @ wk[:, head * dh:(head + 1) * dh]
            didx = plan_depths[:, row]
            padd = dproj[np.clip(didx, 0, cfg.max_depth - 1)]
            padd = padd * (didx >= 0)[..., None].astype(padd.dtype)
            scores[:, head] += np.einsum("btd,btsd->bts", q[:, head], padd) * scale
            pos_cache[head] = (row, side, didx, padd)
    probs = kernels.masked_softmax(scores, mask)
    ctx = probs @ v
    merged = _merge_heads(ctx)
    out = _linear(merged, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    cache[prefix] = (x, henc, q, k, v, probs, merged, pos_cache)
    return out, probs


def _cross_attention_vanilla(x, henc, mask, params, prefix, cfg, cache):
    """Plain multi-head cross-attention; never consults attention plans."""
    q = _split_heads(_linear(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"]),
                     cfg.n_heads)
    k = _split_heads(_linear(henc, params[f"{prefix}.wk"], params[f"{prefix}.bk"]),
                     cfg.n_heads)
    v = _split_heads(_linear(henc, params[f"{prefix}.wv"], params[f"{prefix}.bv"]),
                     cfg.n_heads)
    scale = 1.0 / math.sqrt(cfg.d_head)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    probs = kernels.masked_softmax(scores, mask)
    ctx = probs @ v
    merged = _merge_heads(ctx)
    out = _linear(merged, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    cache[prefix] = (x, henc, q, k, v, probs, merged, {})
    return out, probs


def _cross_attention_bwd(dout, params, prefix, cfg, cache, grads):
    x, henc, q, k, v, probs, merged, pos_cache = cache[prefix]
    scale = 1.0 / math.sqrt(cfg.d_head)
    dh = cfg.d_head
    dmerged, dwo, dbo = _linear_bwd(dout, merged, params[f"{prefix}.wo"])
    _acc(grads, f"{prefix}.wo", dwo)
    _acc(grads, f"{prefix}.bo", dbo)
    dctx = _split_heads(dmerged, cfg.n_heads)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = kernels.masked_softmax_grad(probs, dprobs) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    wk = params[f"{prefix}.wk"]
    for head, (row, side, didx, padd) in pos_cache.items():
        ds = dscores[:, head]  # (B,T,S), already includes the 1/sqrt(d) factor
        dq[:, head] += np.einsum("bts,btsd->btd", ds, padd)
        dpadd = ds[..., None] * q[:, head][:, :, None, :]
        dpadd = dpadd * (didx >= 0)[..., None].astype(dpadd.dtype)
        clipped = np.clip(didx, 0, cfg.max_depth - 1)
        ddproj = np.zeros((cfg.max_depth, dh), dtype=dpadd.dtype)
        np.add.at(ddproj, clipped.reshape(-1),
                  dpadd.reshape(-1, dh))
        table = params[f"depth.{side}"]
        wk_slice = wk[:, head * dh:(head + 1) * dh]
        _acc(grads, f"depth.{side}", ddproj @ wk_slice.T)
        dwk_slice = table.T @ ddproj
        if f"{prefix}.wk" not in grads:
            grads[f"{prefix}.wk"] = np.zeros_like(wk)
        grads[f"{prefix}.wk"][:, head * dh:(head + 1) * dh] += dwk_slice
    dx, dw, db = _linear_bwd(_merge_heads(dq), x, params[f"{prefix}.wq"])
    _acc(grads, f"{prefix}.wq", dw)
    _acc(grads, f"{prefix}.bq", db)
    dhenc, dw, db = _linear_bwd(_merge_heads(dk), henc, params[f"{prefix}.wk"])
    _acc(grads, f"{prefix}.wk", dw)
    _acc(grads, f"{prefix}.bk", db)
    dhenc2, dw, db = _linear_bwd(_merge_heads(dv), henc, params[f"{prefix}.wv"])
    _acc(grads, f"{prefix}.wv", dw)
    _acc(grads, f"{prefix}.bv", db)
    return dx, dhenc + dhenc2


# ---------------------------------------------------------- batches

@dataclass
class ModelInputs:
    """Padded arrays for one batch.

    word_ids includes the SENTINEL column per sentence (at column
    length_b); word_mask covers words plus sentinel.  Plan tensors are
    aligned to the padded encoder width and hold one row per
    specialized head.
    """

    word_ids: np.ndarray        # (B, S) int32
    word_mask: np.ndarray       # (B, S) bool
    dec_in: np.ndarray          # (B, T) int32
    targets: np.ndarray         # (B, T) int32
    target_mask: np.ndarray     # (B, T) bool
    plan_permitted: np.ndarray | None = None  # (B, K, T, S) bool
    plan_depths: np.ndarray | None = None     # (B, K, T, S) int32
    ext: np.ndarray | None = None             # (B, S, ext_dim)
    ext_mask: np.ndarray | None = None        # (B, S) bool

    @property
    def n_tokens(self) -> int:
        return int(self.target_mask.sum())


def _embed(ids, table, scale):
    return table[ids] * scale


def _encode_forward(params, cfg, inputs, rng, cache):
    b, s = inputs.word_ids.shape
    scale = math.sqrt(cfg.d_model)
    x = _embed(inputs.word_ids, params["word_emb"], scale)
    if inputs.ext is not None:
        proj = (inputs.ext @ params["ext.proj"]) * scale
        keep = inputs.ext_mask[..., None]
        x = np.where(keep, proj, x)
        cache["ext"] = keep
    x = x + sinusoid(s, cfg)[None]
    x = _dropout(x, cfg.dropout, rng, cache, "enc.embdrop")
    mask = np.broadcast_to(inputs.word_mask[:, None, None, :],
                           (b, cfg.n_heads, s, s))
    cache["enc.mask"] = mask
    for i in range(cfg.enc_layers):
        att = _self_attention(x, mask, params, f"enc{i}.attn", cfg, cache)
        att = _dropout(att, cfg.dropout, rng, cache, f"enc{i}.drop1")
        x = _ln(x + att, params, f"enc{i}.ln1", cache)
        ff = _ffn(x, params, f"enc{i}.ffn", cache)
        ff = _dropout(ff, cfg.dropout, rng, cache, f"enc{i}.drop2")
        x = _ln(x + ff, params, f"enc{i}.ln2", cache)
    cache["enc.out"] = x
    return x


def _encode_backward(dhenc, params, cfg, inputs, cache, grads):
    dx = dhenc
    for i in reversed(range(cfg.enc_layers)):
        dsum = _ln_bwd(dx, params, f"enc{i}.ln2", cache, grads)
        dff = _dropout_bwd(dsum, cache, f"enc{i}.drop2")
        dx = dsum + _ffn_bwd(dff, params, f"enc{i}.ffn", cache, grads)
        dsum = _ln_bwd(dx, params, f"enc{i}.ln1", cache, grads)
        datt = _dropout_bwd(dsum, cache, f"enc{i}.drop1")
        dx = dsum + _self_attention_bwd(datt, params, f"enc{i}.attn",
                                        cfg, cache, grads)
    dx = _dropout_bwd(dx, cache, "enc.embdrop")
    scale = math.sqrt(cfg.d_model)
    if "ext" in cache:
        keep = cache["ext"]
        dproj = np.where(keep, dx, 0.0) * scale
        flat_ext = inputs.ext.reshape(-1, inputs.ext.shape[-1])
        _acc(grads, "ext.proj", flat_ext.T @ dproj.reshape(-1, cfg.d_model))
        dx = np.where(keep, 0.0, dx)
    demb = np.zeros_like(params["word_emb"])
    np.add.at(demb, inputs.word_ids.reshape(-1),
              dx.reshape(-1, cfg.d_model) * scale)
    _acc(grads, "word_emb", demb)


def _decoder_masks(cfg, inputs):
    b, t = inputs.dec_in.shape
    causal = np.tril(np.ones((t, t), dtype=bool))
    self_mask = np.broadcast_to(causal[None, None], (b, cfg.n_heads, t, t))
    s = inputs.word_ids.shape[1]
    free = np.broadcast_to(inputs.word_mask[:, None, :], (b, t, s))
    if cfg.vanilla:
        cross_mask = np.broadcast_to(free[:, None], (b, cfg.n_heads, t, s))
        return self_mask, np.ascontiguousarray(cross_mask)
    cross = np.empty((b, cfg.n_heads, t, s), dtype=bool)
    spec_rows = {head: row for head, row, _, _ in cfg.spec_heads}
    for h in range(cfg.n_heads):
        if h in spec_rows:
            cross[:, h] = inputs.plan_permitted[:, spec_rows[h]]
        else:
            cross[:, h] = free
    return self_mask, cross


def _decode_forward(params, cfg, inputs, henc, rng, cache, collect_attn):
    b, t = inputs.dec_in.shape
    scale = math.sqrt(cfg.d_model)
    x = _embed(inputs.dec_in, params["act_emb"], scale)
    x = x + sinusoid(t, cfg)[None]
    x = _dropout(x, cfg.dropout, rng, cache, "dec.embdrop")
    self_mask, cross_mask = _decoder_masks(cfg, inputs)
    cache["dec.masks"] = (self_mask, cross_mask)
    depths = None if (cfg.vanilla or cfg.n_spec_heads == 0) \
        else inputs.plan_depths
    attn_maps = []
    for i in range(cfg.dec_layers):
        att = _self_attention(x, self_mask, params, f"dec{i}.self", cfg, cache)
        att = _dropout(att, cfg.dropout, rng, cache, f"dec{i}.drop1")
        x = _ln(x + att, params, f"dec{i}.ln1", cache)
        if cfg.vanilla:
            cross, probs = _cross_attention_vanilla(
                x, henc, cross_mask, params, f"dec{i}.cross", cfg, cache)
        else:
            cross, probs = _cross_attention(x, henc, cross_mask, params,
                                            f"dec{i}.cross", cfg, cache,
                                            plan_depths=depths)
        if collect_attn:
            attn_maps.append(probs)
        cross = _dropout(cross, cfg.dropout, rng, cache, f"dec{i}.drop2")
        x = _ln(x + cross, params, f"dec{i}.ln2", cache)
        ff = _ffn(x, params, f"dec{i}.ffn", cache)
        ff = _dropout(ff, cfg.dropout, rng, cache, f"dec{i}.drop3")
        x = _ln(x + ff, params, f"dec{i}.ln3", cache)
    cache["dec.out"] = x
    return x, attn_maps


def _decode_backward(dx, params, cfg, inputs, cache, grads):
    dhenc = None
    for i in reversed(range(cfg.dec_layers)):
        dsum = _ln_bwd(dx, params, f"dec{i}.ln3", cache, grads)
        dff = _dropout_bwd(dsum, cache, f"dec{i}.drop3")
        dx = dsum + _ffn_bwd(dff, params, f"dec{i}.ffn", cache, grads)
        dsum = _ln_bwd(dx, params, f"dec{i}.ln2", cache, grads)
        dcross = _dropout_bwd(dsum, cache, f"dec{i}.drop2")
        dxc, dh = _cross_attention_bwd(dcross, params, f"dec{i}.cross",
                                       cfg, cache, grads)
        dhenc = dh if dhenc is None else dhenc + dh
        dx = dsum + dxc
        dsum = _ln_bwd(dx, params, f"dec{i}.ln1", cache, grads)
        datt = _dropout_bwd(dsum, cache, f"dec{i}.drop1")
        dx = dsum + _self_attention_bwd(datt, params, f"dec{i}.self",
                                        cfg, cache, grads)
    dx = _dropout_bwd(dx, cache, "dec.embdrop")
    scale = math.sqrt(cfg.d_model)
    demb = np.zeros_like(params["act_emb"])
    np.add.at(demb, inputs.dec_in.reshape(-1),
              dx.reshape(-1, cfg.d_model) * scale)
    _acc(grads, "act_emb", demb)
    return dhenc


def _loss_forward(logits, targets, target_mask, eps, cache):
    v = logits.shape[-1]
    m = logits.max(-1, keepdims=True)
    z = logits - m
    log_z = np.log(np.exp(z).sum(-1, keepdims=True))
    logp = z - log_z
    gold_lp = np.take_along_axis(logp, targets[..., None], -1)[..., 0]
    sum_lp = logp.sum(-1)
    per_tok = -(1.0 - eps) * gold_lp - (eps / (v - 1)) * (sum_lp - gold_lp)
    n_tok = target_mask.sum()
    loss = float((per_tok * target_mask).sum() / n_tok)
    cache["loss"] = (logp, targets, target_mask, eps, int(n_tok))
    return loss


def _loss_backward(cache):
    logp, targets, target_mask, eps, n_tok = cache["loss"]
    v = logp.shape[-1]
    probs = np.exp(logp)
    q = np.full_like(probs, eps / (v - 1))
    np.put_along_axis(q, targets[..., None], 1.0 - eps, -1)
    dlogits = (probs - q) * target_mask[..., None] / n_tok
    return dlogits


def forward_batch(params, cfg: ModelConfig, inputs: ModelInputs,
                  rng: np.random.Generator | None = None,
                  need_cache: bool = False, collect_attn: bool = False):
    """Teacher-forced loss over one batch.

    Returns (loss, stats, cache).  `rng` enables dropout; pass None for
    deterministic evaluation.  stats holds token counts and accuracy
    numerators computed on real (unpadded) target positions.
    """
    cache: dict = {}
    henc = _encode_forward(params, cfg, inputs, rng, cache)
    dec, attn_maps = _decode_forward(params, cfg, inputs, henc, rng, cache,
                                     collect_attn)
    logits = _linear(dec, params["out.w"], params["out.b"])
    loss = _loss_forward(logits, inputs.targets, inputs.target_mask,
                         cfg.label_smoothing, cache)
    pred = logits.argmax(-1)
    correct = int(((pred == inputs.targets) & inputs.target_mask).sum())
    stats = {"n_tokens": inputs.n_tokens, "n_correct": correct,
             "loss": loss}
    if collect_attn:
        stats["cross_attn"] = attn_maps
    if not need_cache:
        return loss, stats, None
    return loss, stats, cache


def backward_batch(params, cfg: ModelConfig, inputs: ModelInputs, cache):
    """Gradients of the cached forward pass; keys mirror params."""
    grads: dict[str, np.ndarray] = {}
    dlogits = _loss_backward(cache)
    dec = cache["dec.out"]
    ddec, dw, db = _linear_bwd(dlogits, dec, params["out.w"])
    _acc(grads, "out.w", dw)
    _acc(grads, "out.b", db)
    dhenc = _decode_backward(ddec, params, cfg, inputs, cache, grads)
    _encode_backward(dhenc, params, cfg, inputs, cache, grads)
    for name, p in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(p)
    return grads


def loss_and_grads(params, cfg, inputs, rng=None):
    loss, stats, cache = forward_batch(params, cfg, inputs, rng,
                                       need_cache=True)
    grads = backward_batch(params, cfg, inputs, cache)
    return loss, stats, grads


# ------------------------------------------------------ gradcheck

def finite_difference_check(cfg: ModelConfig, inputs: ModelInputs,
                            seed: int = 0, fd_step: float = 1e-4,
                            max_entries_per_tensor: int | None = None):
    """Compare analytic gradients against central finite differences.

    Returns (per-tensor max relative error dict, overall max).  The
    relative error for a tensor is max|ga-gf| / max(1e-6, max|gf|).
    """
    if cfg.dtype != "float64":
        raise ValueError("gradient checks require float64")
    params = init_params(cfg, seed)
    _, _, grads = loss_and_grads(params, cfg, inputs, rng=None)

    def loss_at():
        loss, _, _ = forward_batch(params, cfg, inputs, rng=None)
        return loss

    report: dict[str, float] = {}
    for name in sorted(params):
        p = params[name]
        ga = grads[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries_per_tensor and flat.size > max_entries_per_tensor:
            sel_rng = np.random.default_rng(seed + zlib.crc32(name.encode()))
            idx = sel_rng.choice(flat.size, max_entries_per_tensor,
                                 replace=False)
        gf = np.zeros(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + fd_step
            up = loss_at()
            flat[i] = orig - fd_step
            dn = loss_at()
            flat[i] = orig
            gf[j] = (up - dn) / (2.0 * fd_step)
        ga_sel = ga.reshape(-1)[idx]
        denom = max(1e-6, float(np.abs(gf).max()))
        report[name] = float(np.abs(ga_sel - gf).max() / denom)
    return report, max(report.values())


# ------------------------------------------------- incremental decode

@dataclass(eq=False)
class DecodeSession:
    """Per-sentence decoding state with cached projections.

    Encoder keys/values and the depth-table projections are computed
    once; decoder self-attention K/V grow one row per step.
    """

    params: dict
    cfg: ModelConfig
    henc: np.ndarray                       # (S, d)
    cross_k: list                          # per layer (H, S, dh)
    cross_v: list
    depth_proj: list                       # per layer {head: (side, (32, dh))}
    self_k: list = field(default_factory=list)   # per layer (H, t, dh)
    self_v: list = field(default_factory=list)
    t: int = 0


def start_session(params, cfg: ModelConfig, word_ids: np.ndarray,
                  ext: np.ndarray | None = None) -> DecodeSession:
    """Encode one sentence (ids include the SENTINEL) and prime caches."""
    s = word_ids.shape[0]
    ext_mask = None
    if ext is not None:
        ext_mask = np.ones((1, s), dtype=bool)
        ext_mask[0, -1] = False  # sentinel keeps its learned embedding
        ext = ext[None]
    inputs = ModelInputs(word_ids=word_ids[None],
                         word_mask=np.ones((1, s), dtype=bool),
                         dec_in=np.zeros((1, 1), np.int32),
                         targets=np.zeros((1, 1), np.int32),
                         target_mask=np.ones((1, 1), bool),
                         ext=ext, ext_mask=ext_mask)
    cache: dict = {}
    henc = _encode_forward(params, cfg, inputs, None, cache)[0]
    dh = cfg.d_head
    cross_k, cross_v, depth_proj = [], [], []
    for i in range(cfg.dec_layers):
        wk = params[f"dec{i}.cross.wk"]
        k = _linear(henc, wk, params[f"dec{i}.cross.bk"])
        v = _linear(henc, params[f"dec{i}.cross.wv"],
                    params[f"dec{i}.cross.bv"])
        cross_k.append(k.reshape(s, cfg.n_heads, dh).transpose(1, 0, 2))
        cross_v.append(v.reshape(s, cfg.n_heads, dh).transpose(1, 0, 2))
        proj = {}
        if not cfg.vanilla:
            for head, row, side, with_pos in cfg.spec_heads:
                if with_pos:
                    proj[head] = (row, params[f"depth.{side}"]
                                  @ wk[:, head * dh:(head + 1) * dh])
        depth_proj.append(proj)
    sess = DecodeSession(params=params, cfg=cfg, henc=henc,
                         cross_k=cross_k, cross_v=cross_v,
                         depth_proj=depth_proj)
    for _ in range(cfg.dec_layers):
        sess.self_k.append(np.zeros((cfg.n_heads, 0, dh), cfg.np_dtype))
        sess.self_v.append(np.zeros((cfg.n_heads, 0, dh), cfg.np_dtype))
    return sess


def _softmax_1d(scores):
    z = scores - scores.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def session_step(sess: DecodeSession, prev_action_id: int,
                 permitted: np.ndarray | None,
                 depths: np.ndarray | None) -> np.ndarray:
    """Advance one step; returns logits over the action vocabulary.

    `permitted` (K, S) bool and `depths` (K, S) int32 are this step's
    plan rows for the specialized heads (None when the model has none).
    """
    params, cfg = sess.params, sess.cfg
    d, dh, nh = cfg.d_model, cfg.d_head, cfg.n_heads
    s = sess.henc.shape[0]
    scale = 1.0 / math.sqrt(dh)
    x = params["act_emb"][prev_action_id] * math.sqrt(d) + sinusoid(
        sess.t + 1, cfg)[sess.t]
    for i in range(cfg.dec_layers):
        pre = f"dec{i}.self"
        q = (_linear(x, params[f"{pre}.wq"], params[f"{pre}.bq"])
             .reshape(nh, dh))
        k_new = (_linear(x, params[f"{pre}.wk"], params[f"{pre}.bk"])
                 .reshape(nh, 1, dh))
        v_new = (_linear(x, params[f"{pre}.wv"], params[f"{pre}.bv"])
                 .reshape(nh, 1, dh))
        sess.self_k[i] = np.concatenate([sess.self_k[i], k_new], axis=1)
        sess.self_v[i] = np.concatenate([sess.self_v[i], v_new], axis=1)
        scores = np.einsum("hd,htd->ht", q, sess.self_k[i]) * scale
        probs = _softmax_1d(scores)
        ctx = np.einsum("ht,htd->hd", probs, sess.self_v[i]).reshape(d)
        att = _linear(ctx, params[f"{pre}.wo"], params[f"{pre}.bo"])
        x = kernels.layer_norm((x + att)[None], params[f"dec{i}.ln1.g"],
                               params[f"dec{i}.ln1.b"], LN_EPS)[0][0]
        pre = f"dec{i}.cross"
        q = (_linear(x, params[f"{pre}.wq"], params[f"{pre}.bq"])
             .reshape(nh, dh))
        scores = np.einsum("hd,hsd->hs", q, sess.cross_k[i]) * scale
        for head, (row, dproj) in sess.depth_proj[i].items():
            didx = depths[row]
            padd = dproj[np.clip(didx, 0, cfg.max_depth - 1)]
            padd = padd * (didx >= 0)[:, None].astype(padd.dtype)
            scores[head] += (padd @ q[head]) * scale
        if permitted is None or cfg.vanilla or cfg.n_spec_heads == 0:
            probs = _softmax_1d(scores)
        else:
            mask = np.ones((nh, s), dtype=bool)
            for head, row, _, _ in cfg.spec_heads:
                mask[head] = permitted[row]
            probs = kernels.masked_softmax(scores, mask)
        ctx = np.einsum("hs,hsd->hd", probs, sess.cross_v[i]).reshape(d)
        att = _linear(ctx, params[f"{pre}.wo"], params[f"{pre}.bo"])
        x = kernels.layer_norm((x + att)[None], params[f"dec{i}.ln2.g"],
                               params[f"dec{i}.ln2.b"], LN_EPS)[0][0]
        h = _linear(x, params[f"dec{i}.ffn.w1"], params[f"dec{i}.ffn.b1"])
        ff = _linear(np.maximum(h, 0.0), params[f"dec{i}.ffn.w2"],
                     params[f"dec{i}.ffn.b2"])
        x = kernels.layer_norm((x + ff)[None], params[f"dec{i}.ln3.g"],
                               params[f"dec{i}.ln3.b"], LN_EPS)[0][0]
    sess.t += 1
    return _linear(x, params["out.w"], params["out.b"])


def clone_session(sess: DecodeSession) -> DecodeSession:
    """Independent copy sharing immutable encoder caches."""
    return DecodeSession(params=sess.params, cfg=sess.cfg, henc=sess.henc,
                         cross_k=sess.cross_k, cross_v=sess.cross_v,
                         depth_proj=sess.depth_proj,
                         self_k=list(sess.self_k), self_v=list(sess.self_v),
                         t=sess.t)
