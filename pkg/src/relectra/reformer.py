"""Reformer encoder: shared-QK LSH attention over bucket-sorted chunks.

Attention for each hash round sorts positions by (bucket, position), cuts the
sorted sequence into chunks of ``chunk_size`` and lets every query look at
keys from its own chunk and the chunk before it that landed in the same
bucket. Rounds are mixed with weights proportional to each round's softmax
normaliser.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, LengthError
from .seeding import derive_seed
from .tensor import Tensor

MASKED = -1e9


@dataclass
class ReformerConfig:
    vocab_size: int = 30_522
    d_model: int = 256
    n_heads: int = 4
    n_layers: int = 6
    d_ffn: int = 1024
    max_seq_len: int = 8192
    n_buckets: Optional[int] = None  # None: 2 * (padded length / chunk_size)
    n_hash_rounds: int = 4
    chunk_size: int = 64
    attention_dropout: float = 0.1
    hidden_dropout: float = 0.1
    seed: int = 0
    embedding_dim: Optional[int] = None  # token-embedding width; None means d_model
    attention: str = "lsh"  # "full" swaps in dense attention (oracle variant)
    dtype: str = "float64"

    def __post_init__(self):
        self.validate()

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def emb_dim(self) -> int:
        return self.embedding_dim or self.d_model

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def buckets_for(self, padded_len: int) -> int:
        if self.n_buckets is not None:
            return self.n_buckets
        return max(2, 2 * (padded_len // self.chunk_size))

    def validate(self) -> None:
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}", key=key)

        for key in ("vocab_size", "d_model", "n_heads", "n_layers", "d_ffn", "max_seq_len",
                    "n_hash_rounds", "chunk_size"):
            v = getattr(self, key)
            need(isinstance(v, int) and not isinstance(v, bool), key, "must be an integer")
        need(self.vocab_size >= 1, "vocab_size", "must be positive")
        need(self.d_model >= 1, "d_model", "must be positive")
        need(self.n_heads >= 1 and self.d_model % self.n_heads == 0, "n_heads",
             f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}")
        need(self.n_layers >= 0, "n_layers", "must be non-negative")
        need(self.d_ffn >= 1, "d_ffn", "must be positive")
        need(self.max_seq_len >= 1, "max_seq_len", "must be positive")
        need(self.n_hash_rounds >= 1, "n_hash_rounds", "must be at least 1")
        need(self.chunk_size >= 1, "chunk_size", "must be at least 1")
        if self.n_buckets is not None:
            need(isinstance(self.n_buckets, int) and self.n_buckets >= 2 and self.n_buckets % 2 == 0,
                 "n_buckets", "must be an even integer >= 2")
        for key in ("attention_dropout", "hidden_dropout"):
            need(0.0 <= getattr(self, key) < 1.0, key, "must be in [0, 1)")
        need(self.attention in ("lsh", "full"), "attention", "must be 'lsh' or 'full'")
        need(self.dtype in ("float32", "float64"), "dtype", "must be float32 or float64")
        if self.embedding_dim is not None:
            need(self.embedding_dim >= 1, "embedding_dim", "must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttentionInstrumentation:
    pairs_computed: int = 0
    peak_score_buffer: int = 0
    calls: int = field(default=0, repr=False)

    def record(self, pairs: int, buffer: int) -> None:
        self.pairs_computed += int(pairs)
        self.peak_score_buffer = max(self.peak_score_buffer, int(buffer))
        self.calls += 1


def round_seed(seed: int, layer: int, round_index: int) -> int:
    return derive_seed(seed, "lsh", layer, round_index)


def random_rotation(d: int, n_buckets: int, seed: int) -> np.ndarray:
    """A (d, n_buckets/2) projection with orthonormal columns when d allows it."""
    if n_buckets < 2 or n_buckets % 2:
        raise ConfigError(f"n_buckets must be even and >= 2, got {n_buckets}", key="n_buckets")
    half = n_buckets // 2
    g = np.random.default_rng(seed).standard_normal((d, half))
    if d >= half:
        q, r = np.linalg.qr(g)
        g = q * np.sign(np.diag(r))
    return g


def hash_vectors(x, n_buckets: int, round_seed: int) -> np.ndarray:
    """Bucket ids for the rows of ``x`` (..., L, d) by random-rotation argmax."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x)
    rot = random_rotation(xd.shape[-1], n_buckets, round_seed)
    proj = xd.astype(np.float64) @ rot
    return np.argmax(np.concatenate([proj, -proj], axis=-1), axis=-1)


def full_attention(qk: Tensor, v: Tensor, exclude_self: bool = True) -> Tensor:
    """Dense shared-QK attention over the rows of ``qk`` (L, d)."""
    qk, v = T.as_tensor(qk), T.as_tensor(v)
    return _full_core(qk, v, None, exclude_self=exclude_self)


def _full_core(qk: Tensor, v: Tensor, key_valid, exclude_self: bool = True,
               instr: Optional[AttentionInstrumentation] = None,
               dropout_p: float = 0.0, rng=None) -> Tensor:
    L, d = qk.shape[-2], qk.shape[-1]
    scores = T.matmul(qk, T.swap_last(qk)) * (1.0 / math.sqrt(d))
    allowed = np.ones(scores.shape, dtype=bool)
    if key_valid is not None:
        allowed &= np.asarray(key_valid, dtype=bool)[..., None, :]
    if exclude_self and L > 1:
        eye = np.eye(L, dtype=bool)
        others = allowed & ~eye
        lonely = ~others.any(axis=-1, keepdims=True)
        allowed = others | (eye & lonely)
    if not allowed.all():
        scores = scores + Tensor(np.where(allowed, 0.0, MASKED).astype(scores.dtype))
    if instr is not None:
        instr.record(scores.data.size, scores.data.size)
    p = T.dropout(T.softmax_rows(scores), dropout_p, rng)
    return T.matmul(p, v)


def _look_one_back(x: Tensor, n_chunks: int) -> Tensor:
    """Concatenate each chunk with its predecessor along the chunk-row axis.

    ``x`` is (R, B, nc, m, d); the first chunk wraps around to the last one.
    """
    prev = T.concat([x[:, :, n_chunks - 1:], x[:, :, :n_chunks - 1]], axis=2)
    return T.concat([prev, x], axis=3)


def lsh_attention(qk: Tensor, v: Tensor, cfg: ReformerConfig,
                  instr: Optional[AttentionInstrumentation] = None, layer: int = 0,
                  key_valid=None, dropout_p: float = 0.0, rng=None) -> Tensor:
    """LSH attention for a single sequence ``qk``/``v`` of shape (L, d_head).

    A (B, L, d_head) batch is accepted too; ``key_valid`` (B, L) marks real
    (non-pad) positions.
    """
    qk, v = T.as_tensor(qk), T.as_tensor(v)
    single = qk.ndim == 2
    if single:
        qk = T.reshape(qk, (1,) + qk.shape)
        v = T.reshape(v, (1,) + v.shape)
        if key_valid is not None:
            key_valid = np.asarray(key_valid, dtype=bool)[None]
    if qk.shape[1] > cfg.max_seq_len:
        raise LengthError(f"sequence length {qk.shape[1]} exceeds max_seq_len {cfg.max_seq_len}")
    out = _lsh_core(qk, v, key_valid, cfg, layer, instr, dropout_p, rng)
    return T.reshape(out, out.shape[1:]) if single else out


def _lsh_core(qk: Tensor, v: Tensor, key_valid, cfg: ReformerConfig, layer: int,
              instr: Optional[AttentionInstrumentation], dropout_p: float, rng) -> Tensor:
    B, L, d = qk.shape
    m = cfg.chunk_size
    n_chunks = max(1, -(-L // m))
    Lp = n_chunks * m
    valid = np.ones((B, L), dtype=bool) if key_valid is None else np.asarray(key_valid, dtype=bool).reshape(B, L)
    if Lp > L:
        pad = Tensor(np.zeros((B, Lp - L, d), dtype=qk.dtype))
        qk = T.concat([qk, pad], axis=1)
        v = T.concat([v, pad], axis=1)
        valid = np.concatenate([valid, np.zeros((B, Lp - L), dtype=bool)], axis=1)
    R = cfg.n_hash_rounds
    nb = cfg.buckets_for(Lp)

    pos = np.arange(Lp)
    buckets = np.stack([hash_vectors(qk.data, nb, round_seed(cfg.seed, layer, r)) for r in range(R)])
    buckets = np.where(valid[None], buckets, nb)  # padding sorts after every real bucket
    perm = np.argsort(buckets * Lp + pos, axis=-1, kind="stable")  # (R, B, Lp)
    s_bucket = np.take_along_axis(buckets, perm, axis=-1)
    s_valid = np.take_along_axis(np.broadcast_to(valid, perm.shape), perm, axis=-1)

    sqk = T.permute_rows(qk, perm)
    sv = T.permute_rows(v, perm)
    chunked = (R, B, n_chunks, m, d)
    q = T.reshape(sqk, chunked)
    kv_v = T.reshape(sv, chunked)
    q_pos = perm.reshape(R, B, n_chunks, m)
    q_bucket = s_bucket.reshape(R, B, n_chunks, m)
    q_valid = s_valid.reshape(R, B, n_chunks, m)
    if n_chunks > 1:
        k = _look_one_back(q, n_chunks)
        kv_v = _look_one_back(kv_v, n_chunks)

        def back(a):
            return np.concatenate([np.roll(a, 1, axis=2), a], axis=3)

        k_pos, k_bucket, k_valid = back(q_pos), back(q_bucket), back(q_valid)
    else:
        k, k_pos, k_bucket, k_valid = q, q_pos, q_bucket, q_valid

    scores = T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(d))  # (R, B, nc, m, w)
    same = (q_bucket[..., :, None] == k_bucket[..., None, :]) & k_valid[..., None, :]
    is_self = q_pos[..., :, None] == k_pos[..., None, :]
    others = same & ~is_self
    has_target = others.any(axis=-1)
    allowed = others | (is_self & ~has_target[..., None])
    scores = scores + Tensor(np.where(allowed, 0.0, MASKED).astype(scores.dtype))

    if instr is not None:
        pairs = int((q_valid[..., :, None] & k_valid[..., None, :]).sum())
        instr.record(pairs, scores.data.size)

    lse = T.logsumexp(scores)  # (R, B, nc, m, 1)
    p = T.dropout(T.softmax_rows(scores), dropout_p, rng)
    o = T.matmul(p, kv_v)  # (R, B, nc, m, d)

    inv = np.argsort(perm, axis=-1, kind="stable")
    o = T.permute_along(T.reshape(o, (R, B, Lp, d)), inv)
    if R == 1:
        out = T.reshape(o, (B, Lp, d))
    else:
        lse = T.permute_along(T.reshape(lse, (R, B, Lp, 1)), inv)
        has = np.take_along_axis(has_target.reshape(R, B, Lp), inv, axis=-1)
        # a round that offered no real target only counts when no round did
        usable = has | ~has.any(axis=0, keepdims=True)
        logits = T.reshape(lse, (R, B, Lp)) + Tensor(np.where(usable, 0.0, MASKED).astype(lse.dtype))
        w = T.softmax_rows(T.permute(logits, (1, 2, 0)))  # (B, Lp, R)
        w = T.reshape(w, (B, Lp, 1, R))
        o = T.permute(o, (1, 2, 0, 3))  # (B, Lp, R, d)
        out = T.reshape(T.matmul(w, o), (B, Lp, d))
    if Lp > L:
        out = out[:, :L]
    return out


# -- parameters and forward pass -----------------------------------------------------

def init_params(cfg: ReformerConfig, rng: Optional[np.random.Generator] = None,
                prefix: str = "") -> Dict[str, Tensor]:
    """Fresh parameters under the checkpoint naming contract."""
    rng = rng if rng is not None else np.random.default_rng(derive_seed(cfg.seed, "init"))
    dt = cfg.np_dtype
    D, F = cfg.d_model, cfg.d_ffn

    def normal(*shape):
        return Tensor((rng.standard_normal(shape) * 0.02).astype(dt), requires_grad=True)

    def const(value, *shape):
        return Tensor(np.full(shape, value, dtype=dt), requires_grad=True)

    p: Dict[str, Tensor] = {
        "embed.tok": normal(cfg.vocab_size, cfg.emb_dim),
        "embed.pos": normal(cfg.max_seq_len, D),
    }
    if cfg.emb_dim != D:
        p["embed.proj"] = normal(cfg.emb_dim, D)
    for i in range(cfg.n_layers):
        pre = f"layer.{i}."
        p[pre + "attn.qk"] = normal(D, D)
        p[pre + "attn.v"] = normal(D, D)
        p[pre + "attn.out"] = normal(D, D)
        p[pre + "ffn.w1"] = normal(D, F)
        p[pre + "ffn.b1"] = const(0.0, F)
        p[pre + "ffn.w2"] = normal(F, D)
        p[pre + "ffn.b2"] = const(0.0, D)
        p[pre + "ln1.gamma"] = const(1.0, D)
        p[pre + "ln1.beta"] = const(0.0, D)
        p[pre + "ln2.gamma"] = const(1.0, D)
        p[pre + "ln2.beta"] = const(0.0, D)
    if prefix:
        p = {prefix + k: t for k, t in p.items()}
    return p


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    B, L, D = x.shape
    x = T.reshape(x, (B, L, n_heads, D // n_heads))
    return T.reshape(T.permute(x, (0, 2, 1, 3)), (B * n_heads, L, D // n_heads))


def _merge_heads(x: Tensor, batch: int, n_heads: int) -> Tensor:
    BH, L, dh = x.shape
    x = T.permute(T.reshape(x, (batch, n_heads, L, dh)), (0, 2, 1, 3))
    return T.reshape(x, (batch, L, n_heads * dh))


def reformer_forward(ids, params: Dict[str, Tensor], cfg: ReformerConfig, mode: str = "eval",
                     rng: Optional[np.random.Generator] = None, pad_mask=None,
                     instr: Optional[AttentionInstrumentation] = None) -> Tensor:
    """Encode token ids into hidden states.

    ``ids`` is (L,) or (B, L); the result is (L, d_model) or (B, L, d_model).
    ``pad_mask`` marks real tokens with True; padded keys get zero weight.
    Dropout is applied only in ``"train"`` mode and needs ``rng``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
        if pad_mask is not None:
            pad_mask = np.asarray(pad_mask, dtype=bool)[None]
    B, L = ids.shape
    if L > cfg.max_seq_len:
        raise LengthError(f"sequence length {L} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise IndexError(f"token id out of range for vocab_size {cfg.vocab_size}")
    train = mode == "train"
    p_hidden = cfg.hidden_dropout if train else 0.0
    p_attn = cfg.attention_dropout if train else 0.0
    if train and (p_hidden > 0 or p_attn > 0) and rng is None:
        raise ValueError("train mode with dropout needs an rng")

    x = T.embedding(params["embed.tok"], ids)
    if "embed.proj" in params:
        x = T.matmul(x, params["embed.proj"])
    x = x + params["embed.pos"][:L]
    x = T.dropout(x, p_hidden, rng)
    valid = None if pad_mask is None else np.repeat(np.asarray(pad_mask, dtype=bool), cfg.n_heads, axis=0)
    H = cfg.n_heads
    for i in range(cfg.n_layers):
        pre = f"layer.{i}."
        qk = _split_heads(T.matmul(x, params[pre + "attn.qk"]), H)
        v = _split_heads(T.matmul(x, params[pre + "attn.v"]), H)
        if cfg.attention == "full":
            a = _full_core(qk, v, valid, True, instr, p_attn, rng)
        else:
            a = _lsh_core(qk, v, valid, cfg, i, instr, p_attn, rng)
        a = T.matmul(_merge_heads(a, B, H), params[pre + "attn.out"])
        x = T.layer_norm(x + T.dropout(a, p_hidden, rng), params[pre + "ln1.gamma"], params[pre + "ln1.beta"])
        h = T.gelu(T.apply_linear(x, params[pre + "ffn.w1"], params[pre + "ffn.b1"]))
        h = T.apply_linear(h, params[pre + "ffn.w2"], params[pre + "ffn.b2"])
        x = T.layer_norm(x + T.dropout(h, p_hidden, rng), params[pre + "ln2.gamma"], params[pre + "ln2.beta"])
    return T.reshape(x, x.shape[1:]) if single else x
