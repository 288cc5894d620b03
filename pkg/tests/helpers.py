"""Small fixtures shared by several test modules."""

import numpy as np

from relectra.electra import ElectraConfig, RelectraModel, generator_config
from relectra.reformer import ReformerConfig


class TinyVocab:
    """Stand-in vocabulary: ids 0..4 are [PAD] [UNK] [CLS] [SEP] [MASK]."""

    pad_id, unk_id, cls_id, sep_id, mask_id = 0, 1, 2, 3, 4
    special_ids = {0, 1, 2, 3, 4}

    def __init__(self, size=32):
        self.size = size

    def __len__(self):
        return self.size


def tiny_model(seed=0, vocab_size=32, d_model=8, max_seq_len=8, chunk_size=4, mask_prob=0.15,
               disc_weight=50.0, dtype="float64", n_layers=1, tie=True, dropout=0.0):
    d = ReformerConfig(vocab_size=vocab_size, d_model=d_model, n_heads=2, n_layers=n_layers, d_ffn=2 * d_model,
                       max_seq_len=max_seq_len, chunk_size=chunk_size, n_hash_rounds=2,
                       attention_dropout=dropout, hidden_dropout=dropout, seed=seed, dtype=dtype)
    cfg = ElectraConfig(generator_config(d), d, mask_prob=mask_prob, disc_weight=disc_weight,
                        tie_embeddings=tie, seed=seed)
    return RelectraModel.create(cfg)


def random_batch(rng, batch=2, length=8, vocab_size=32, min_len=3):
    """[CLS] body [SEP] rows padded with [PAD]; returns (ids, pad_mask)."""
    ids = np.zeros((batch, length), dtype=np.int64)
    for b in range(batch):
        n = int(rng.integers(min_len, length + 1))
        ids[b, 0] = 2
        ids[b, 1:n - 1] = rng.integers(5, vocab_size, n - 2)
        ids[b, n - 1] = 3
    return ids, ids != 0
