"""
Hashed attention on long sequences
==================================

Angular LSH puts similar vectors in the same bucket; attention is then
computed only inside sorted chunks and their predecessor. This script shows
the bucket balance, the agreement with full attention when everything hashes
together, and how the amount of work grows with length.
"""

import time

import numpy as np

from relectra.reformer import (AttentionInstrumentation, ReformerConfig, full_attention, hash_vectors,
                               lsh_attention, random_rotation, round_seed)
from relectra.tensor import Tensor

rng = np.random.default_rng(0)

# buckets are roughly balanced for random directions
x = rng.standard_normal((20_000, 32))
counts = np.bincount(hash_vectors(x, 8, 1), minlength=8)
print("bucket fractions:", np.round(counts / counts.sum(), 3))

# slightly perturbed copies of a vector land in its bucket
v = rng.standard_normal((1, 32))
near = v + 0.05 * rng.standard_normal((200, 32))
print("near copies sharing the bucket:", np.mean(hash_vectors(near, 8, 1) == hash_vectors(v, 8, 1)[0]))


def cfg(L, **kw):
    base = dict(vocab_size=8, d_model=16, n_heads=1, n_layers=1, d_ffn=16, max_seq_len=max(L, 64),
                chunk_size=64, n_hash_rounds=2, attention_dropout=0.0, hidden_dropout=0.0, seed=3)
    base.update(kw)
    return ReformerConfig(**base)


# with one bucket and one chunk, hashed attention is ordinary attention
L = 48
c = cfg(L, n_buckets=2, n_hash_rounds=1)
qk = rng.standard_normal((L, 16))
qk *= np.where(qk @ random_rotation(16, 2, round_seed(c.seed, 0, 0))[:, 0] < 0, -1.0, 1.0)[:, None]
vals = rng.standard_normal((L, 16))
gap = np.abs(lsh_attention(Tensor(qk), Tensor(vals), c).data - full_attention(Tensor(qk), Tensor(vals)).data).max()
print(f"max |lsh - full| with a single bucket: {gap:.2e}")

# scored pairs grow linearly with length, unlike the L^2 of full attention
print(f"{'length':>7s} {'pairs':>10s} {'full L^2':>12s} {'seconds':>8s}")
for L in (512, 1024, 2048, 4096, 8192):
    x = rng.standard_normal((L, 16))
    instr = AttentionInstrumentation()
    t0 = time.perf_counter()
    lsh_attention(Tensor(x), Tensor(x), cfg(L), instr)
    print(f"{L:7d} {instr.pairs_computed:10d} {L * L:12d} {time.perf_counter() - t0:8.2f}")
