"""Flat ``key = value`` run configuration covering model, objective, schedule and paths."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Union

from .electra import ElectraConfig, TrainSchedule, generator_config
from .errors import ConfigError
from .reformer import ReformerConfig
from .seeding import derive_seed


@dataclass
class RunConfig:
    # tokenizer
    vocab_size: int = 30_522
    lowercase: bool = True
    # discriminator encoder (the generator is derived from it)
    d_model: int = 256
    n_heads: int = 4
    n_layers: int = 6
    d_ffn: int = 1024
    max_seq_len: int = 8192
    n_buckets: Optional[int] = None  # none: 2 * padded length / chunk_size
    n_hash_rounds: int = 4
    chunk_size: int = 64
    attention_dropout: float = 0.1
    hidden_dropout: float = 0.1
    attention: str = "lsh"
    dtype: str = "float32"
    # objective
    mask_prob: float = 0.15
    disc_weight: float = 50.0
    tie_embeddings: bool = True
    generator_divisor: int = 4
    # schedule and optimiser
    total_steps: int = 120_000
    warmup_steps: int = 20_000
    lr_phase1: float = 1e-5
    lr_phase2: float = 1e-6
    phase_switch_step: int = 80_000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 4
    # pretraining bookkeeping
    segment_len: int = 512  # longest pretraining segment, [CLS]/[SEP] included
    eval_every: int = 100
    eval_docs: int = 32
    checkpoint_every: int = 0  # 0: only at the end
    # NER
    labels: str = "mixed"
    ner_epochs: int = 10
    ner_lr: float = 3e-5
    ner_max_len: int = 1536
    ner_stride: Optional[int] = None  # none: ner_max_len // 2
    # paths and seeding
    manifest: Optional[str] = None
    out_dir: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def reformer(self) -> ReformerConfig:
        return ReformerConfig(
            vocab_size=self.vocab_size, d_model=self.d_model, n_heads=self.n_heads, n_layers=self.n_layers,
            d_ffn=self.d_ffn, max_seq_len=self.max_seq_len, n_buckets=self.n_buckets,
            n_hash_rounds=self.n_hash_rounds, chunk_size=self.chunk_size,
            attention_dropout=self.attention_dropout, hidden_dropout=self.hidden_dropout,
            seed=derive_seed(self.seed, "discriminator"), attention=self.attention, dtype=self.dtype)

    def electra(self, vocab_size: Optional[int] = None) -> ElectraConfig:
        disc = self.reformer()
        if vocab_size is not None:
            disc = dataclasses.replace(disc, vocab_size=vocab_size)
        return ElectraConfig(generator_config(disc, self.generator_divisor), disc, mask_prob=self.mask_prob,
                             disc_weight=self.disc_weight, tie_embeddings=self.tie_embeddings,
                             seed=derive_seed(self.seed, "electra"))

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(total_steps=self.total_steps, warmup_steps=self.warmup_steps,
                             lr_phase1=self.lr_phase1, lr_phase2=self.lr_phase2,
                             phase_switch_step=self.phase_switch_step, beta1=self.beta1, beta2=self.beta2,
                             eps=self.adam_eps, weight_decay=self.weight_decay, batch_size=self.batch_size)

    def validate(self) -> None:
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}", key=key)

        need(0.0 <= self.mask_prob <= 1.0, "mask_prob", "must be in [0, 1]")
        need(self.disc_weight >= 0, "disc_weight", "must be non-negative")
        need(self.generator_divisor >= 1, "generator_divisor", "must be at least 1")
        need(self.labels in ("legal", "mixed"), "labels", "must be legal or mixed")
        need(self.ner_epochs >= 0, "ner_epochs", "must be non-negative")
        need(self.ner_lr >= 0, "ner_lr", "must be non-negative")
        need(self.ner_max_len >= 2, "ner_max_len", "must be at least 2")
        if self.ner_stride is not None:
            need(0 < self.ner_stride < self.ner_max_len, "ner_stride", "must satisfy 0 < ner_stride < ner_max_len")
        need(3 <= self.segment_len <= self.max_seq_len, "segment_len", "must be in [3, max_seq_len]")
        need(self.eval_every >= 1, "eval_every", "must be positive")
        need(self.checkpoint_every >= 0, "checkpoint_every", "must be non-negative")
        need(self.eval_docs >= 1, "eval_docs", "must be positive")
        need(self.ner_max_len <= self.max_seq_len, "ner_max_len", "must not exceed max_seq_len")
        # constituent invariants, reported under the offending key
        self.reformer()
        self.schedule()

    def snapshot(self) -> str:
        """Every resolved value, in the same format :func:`parse_config` reads."""
        lines = ["# effective configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(key: str, raw: str, typ: str):
    text = raw.strip()
    optional = typ.startswith("Optional[")
    base = typ[len("Optional["):-1] if optional else typ
    if optional and text.lower() in ("none", ""):
        return None
    try:
        if base == "bool":
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if base == "int":
            value = float(text) if any(c in text for c in ".eE") else int(text)
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValueError(text)
                value = int(value)
            return value
        if base == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: expected {base}, got {raw.strip()!r}", key=key) from None


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'", key=line)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}", key=key)
        values[key] = _coerce(key, value, _TYPES[key])
    return RunConfig(**values)


def parse_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Load a config file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist", key="config")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))
