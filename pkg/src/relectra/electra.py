"""Replaced-token-detection pretraining over two Reformer encoders.

The generator fills ``[MASK]`` positions (masked-LM loss on those positions
only); its samples replace the masked tokens and the discriminator labels
every non-pad token as original (0) or replaced (1).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .errors import ConfigError, LengthError, NumericError
from .reformer import ReformerConfig, init_params, reformer_forward
from .seeding import derive_seed
from .tensor import Tensor


# -- configuration ------------------------------------------------------------------

def generator_config(disc: ReformerConfig, divisor: int = 4, seed: Optional[int] = None) -> ReformerConfig:
    """A generator ``divisor`` times narrower than ``disc``, sharing its embedding width.

    The width never drops below ``min(disc.d_model, 4)``: layer norm over two
    features is constant up to sign and blocks gradients.
    """
    heads = max(1, disc.n_heads // divisor)
    d = max(heads, disc.d_model // divisor, min(disc.d_model, 4))
    d -= d % heads
    return dataclasses.replace(
        disc,
        d_model=d,
        n_heads=heads,
        d_ffn=max(1, disc.d_ffn // divisor),
        embedding_dim=disc.emb_dim,
        seed=derive_seed(disc.seed, "generator") if seed is None else seed,
    )


@dataclass
class ElectraConfig:
    generator_cfg: ReformerConfig
    discriminator_cfg: ReformerConfig
    mask_prob: float = 0.15
    disc_weight: float = 50.0
    tie_embeddings: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        g, d = self.generator_cfg, self.discriminator_cfg
        if g.vocab_size != d.vocab_size:
            raise ConfigError("generator and discriminator vocab_size differ", key="vocab_size")
        if g.max_seq_len != d.max_seq_len:
            raise ConfigError("generator and discriminator max_seq_len differ", key="max_seq_len")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError(f"mask_prob must be in [0, 1], got {self.mask_prob}", key="mask_prob")
        if not self.disc_weight >= 0.0:
            raise ConfigError(f"disc_weight must be non-negative, got {self.disc_weight}", key="disc_weight")
        if self.tie_embeddings and g.emb_dim != d.emb_dim:
            raise ConfigError("tied embeddings need equal embedding widths", key="tie_embeddings")


@dataclass
class TrainSchedule:
    total_steps: int = 120_000
    warmup_steps: int = 20_000
    lr_phase1: float = 1e-5
    lr_phase2: float = 1e-6
    phase_switch_step: int = 80_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 < self.warmup_steps < self.phase_switch_step < self.total_steps:
            key = "warmup_steps" if self.warmup_steps >= self.phase_switch_step or self.warmup_steps <= 0 \
                else "phase_switch_step"
            raise ConfigError(
                f"need 0 < warmup_steps ({self.warmup_steps}) < phase_switch_step "
                f"({self.phase_switch_step}) < total_steps ({self.total_steps})", key=key)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive", key="batch_size")
        if self.lr_phase1 < 0 or self.lr_phase2 < 0:
            raise ConfigError("learning rates must be non-negative", key="lr_phase1")

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainSchedule":
        """The 120k/20k/80k schedule scaled to 2,000/200/1,400 steps."""
        base = dict(total_steps=2_000, warmup_steps=200, phase_switch_step=1_400)
        base.update(overrides)
        return cls(**base)


def lr_at(step: int, s: TrainSchedule) -> float:
    """Piecewise base rate times a global linear warm-up / linear decay factor."""
    if not 0 <= step <= s.total_steps:
        raise ValueError(f"step {step} outside [0, {s.total_steps}]")
    base = s.lr_phase1 if step < s.phase_switch_step else s.lr_phase2
    if step < s.warmup_steps:
        factor = step / s.warmup_steps
    else:
        factor = (s.total_steps - step) / (s.total_steps - s.warmup_steps)
    return base * factor


def smooth_accuracy_curve(points: Sequence[Tuple[float, float]], window: int = 200) -> List[Tuple[float, float]]:
    """Centered moving average: each value becomes the mean over steps within ``window/2``."""
    if not points:
        return []
    steps = np.asarray([p[0] for p in points], dtype=np.float64)
    vals = [float(p[1]) for p in points]
    half = window / 2
    lo = np.searchsorted(steps, steps - half, side="left")
    hi = np.searchsorted(steps, steps + half, side="right")
    # averaging deviations from the window's first value keeps a constant series exact
    means = [vals[a] + math.fsum(v - vals[a] for v in vals[a:b]) / (b - a) for a, b in zip(lo, hi)]
    return list(zip(steps.tolist(), means))


# -- masking and replacement --------------------------------------------------------

def mask_tokens(ids, mask_prob: float, vocab, rng: np.random.Generator):
    """Replace each non-special position by ``[MASK]`` with probability ``mask_prob``.

    Returns ``(corrupt_ids, masked_positions)`` where the positions are a sorted
    index array. One uniform draw is consumed per position.
    """
    ids = np.asarray(ids, dtype=np.int64)
    draws = rng.random(ids.shape)
    special = np.isin(ids, np.fromiter(vocab.special_ids, dtype=np.int64))
    selected = (draws < mask_prob) & ~special
    corrupt = np.where(selected, vocab.mask_id, ids)
    return corrupt, np.flatnonzero(selected) if ids.ndim == 1 else np.argwhere(selected)


def _sample_rows(logits: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical sampling from softmax(logits) row by row."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    cdf = np.cumsum(np.exp(z), axis=-1)
    target = uniforms * cdf[:, -1]
    idx = np.array([np.searchsorted(c, t, side="right") for c, t in zip(cdf, target)], dtype=np.int64)
    return np.minimum(idx, logits.shape[-1] - 1)


def sample_replacements(gen_logits, corrupt_input, masked_positions, rng: np.random.Generator,
                        original=None) -> np.ndarray:
    """Sample a token at each masked position; other positions keep their token.

    ``gen_logits`` is (L, V). Unmasked positions of ``corrupt_input`` already hold
    the original ids; pass ``original`` to copy from it explicitly.
    """
    logits = gen_logits.data if isinstance(gen_logits, Tensor) else np.asarray(gen_logits)
    out = np.array(original if original is not None else corrupt_input, dtype=np.int64, copy=True)
    pos = np.asarray(masked_positions, dtype=np.int64).reshape(-1)
    if pos.size:
        out[pos] = _sample_rows(logits[pos], rng.random(pos.size))
    return out


def discriminator_labels(original, replaced_input) -> np.ndarray:
    original = np.asarray(original)
    replaced_input = np.asarray(replaced_input)
    if original.shape != replaced_input.shape:
        raise T.ShapeError(f"labels: original {original.shape} vs replaced {replaced_input.shape}")
    return (replaced_input != original).astype(np.int64)


# -- model ---------------------------------------------------------------------------

class RelectraModel:
    """Generator and discriminator parameters with optional tied token embeddings.

    Parameter names follow the checkpoint contract with a ``gen.`` or
    ``disc.`` prefix; a tied embedding is stored once as ``disc.embed.tok``.
    """

    def __init__(self, cfg: ElectraConfig, gen: Dict[str, Tensor], disc: Dict[str, Tensor]):
        self.cfg = cfg
        self.gen = gen
        self.disc = disc
        if cfg.tie_embeddings:
            self.gen["embed.tok"] = self.disc["embed.tok"]

    @classmethod
    def create(cls, cfg: ElectraConfig) -> "RelectraModel":
        gcfg, dcfg = cfg.generator_cfg, cfg.discriminator_cfg
        gen = init_params(gcfg, np.random.default_rng(derive_seed(cfg.seed, "init", "gen")))
        disc = init_params(dcfg, np.random.default_rng(derive_seed(cfg.seed, "init", "disc")))
        rng = np.random.default_rng(derive_seed(cfg.seed, "init", "heads"))
        dt = dcfg.np_dtype
        gen["head.proj"] = Tensor((rng.standard_normal((gcfg.d_model, gcfg.emb_dim)) * 0.02).astype(dt),
                                  requires_grad=True)
        gen["head.bias"] = Tensor(np.zeros(gcfg.vocab_size, dtype=dt), requires_grad=True)
        disc["head.w"] = Tensor((rng.standard_normal((dcfg.d_model, 1)) * 0.02).astype(dt), requires_grad=True)
        disc["head.b"] = Tensor(np.zeros(1, dtype=dt), requires_grad=True)
        return cls(cfg, gen, disc)

    def named_parameters(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        seen = set()
        for prefix, group in (("disc.", self.disc), ("gen.", self.gen)):
            for k, t in group.items():
                if id(t) in seen:
                    continue
                seen.add(id(t))
                out[prefix + k] = t
        return dict(sorted(out.items()))

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.grad = None

    def records(self) -> Dict[str, np.ndarray]:
        return {k: t.data for k, t in self.named_parameters().items()}

    def load_records(self, records: Dict[str, np.ndarray]) -> None:
        for k, t in self.named_parameters().items():
            if k not in records:
                raise KeyError(f"checkpoint is missing {k}")
            if records[k].shape != t.shape:
                raise ValueError(f"shape mismatch for {k}: {records[k].shape} vs {t.shape}")
            t.data = records[k].astype(t.dtype)

    # -- forward pieces --------------------------------------------------------
    def generator_logits(self, ids, mode="eval", rng=None, pad_mask=None, rows=None) -> Tensor:
        """Generator logits (B, L, V), or (n, V) for flat ``rows`` of the (B*L) grid."""
        gcfg = self.cfg.generator_cfg
        h = reformer_forward(ids, self.gen, gcfg, mode, rng, pad_mask)
        h = T.reshape(h, (-1, h.shape[-1]))
        if rows is not None:
            h = T.embedding(h, rows)
        h = T.matmul(h, self.gen["head.proj"])
        logits = T.matmul(h, T.swap_last(self.gen["embed.tok"])) + self.gen["head.bias"]
        if rows is None:
            ids = np.asarray(ids)
            logits = T.reshape(logits, ids.shape + (gcfg.vocab_size,))
        return logits

    def discriminator_logits(self, ids, mode="eval", rng=None, pad_mask=None) -> Tensor:
        h = reformer_forward(ids, self.disc, self.cfg.discriminator_cfg, mode, rng, pad_mask)
        z = T.matmul(h, self.disc["head.w"]) + self.disc["head.b"]
        return T.reshape(z, z.shape[:-1])


@dataclass
class StepMetrics:
    step: int
    gen_loss: float
    disc_loss: float
    combined_loss: float
    gen_mlm_accuracy: float
    disc_accuracy: float
    disc_positions: int = 0
    masked_positions: int = 0

    def line(self) -> str:
        return (f"{self.step},{self.gen_loss:.6f},{self.disc_loss:.6f},"
                f"{self.gen_mlm_accuracy:.6f},{self.disc_accuracy:.6f}")


METRICS_HEADER = "step,gen_loss,disc_loss,gen_acc,disc_acc"


@dataclass
class ElectraOutput:
    combined: Tensor
    gen_loss: Tensor
    disc_loss: Tensor
    metrics: StepMetrics
    replaced: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)


def electra_loss(model: RelectraModel, ids, pad_mask, vocab, rng: np.random.Generator,
                 mode: str = "train", step: int = 0) -> ElectraOutput:
    """Forward both models on a padded batch ``ids`` (B, L) and build the combined loss.

    ``rng`` drives masking, generator sampling and dropout, in that order.
    """
    cfg = model.cfg
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    B, L = ids.shape
    if L > cfg.discriminator_cfg.max_seq_len:
        raise LengthError(f"sequence length {L} exceeds max_seq_len {cfg.discriminator_cfg.max_seq_len}")
    pad_mask = np.ones_like(ids, dtype=bool) if pad_mask is None else np.atleast_2d(np.asarray(pad_mask, dtype=bool))

    corrupt, _ = mask_tokens(ids, cfg.mask_prob, vocab, rng)
    masked = corrupt != ids
    rows = np.flatnonzero(masked.reshape(-1))
    drop_rng = rng if mode == "train" else None

    if rows.size:
        g_logits = model.generator_logits(corrupt, mode, drop_rng, pad_mask, rows=rows)
        targets = ids.reshape(-1)[rows]
        gen_loss = T.cross_entropy_loss(g_logits, targets)
        flat = ids.reshape(-1).copy()
        flat[rows] = _sample_rows(g_logits.data, rng.random(rows.size))
        replaced = flat.reshape(B, L)
        gen_acc = float(np.mean(g_logits.data.argmax(axis=-1) == targets))
    else:
        dt = cfg.discriminator_cfg.np_dtype
        gen_loss = Tensor(np.zeros((), dtype=dt))
        replaced = ids.copy()
        gen_acc = 0.0

    labels = discriminator_labels(ids, replaced)
    d_logits = model.discriminator_logits(replaced, mode, drop_rng, pad_mask)
    disc_loss = T.binary_cross_entropy_with_logits(d_logits, labels, mask=pad_mask)
    combined = gen_loss + disc_loss * cfg.disc_weight
    n_disc = int(pad_mask.sum())
    pred = (d_logits.data > 0).astype(np.int64)
    disc_acc = float(((pred == labels) & pad_mask).sum() / n_disc) if n_disc else 0.0
    metrics = StepMetrics(
        step=step,
        gen_loss=float(gen_loss.data),
        disc_loss=float(disc_loss.data),
        combined_loss=float(combined.data),
        gen_mlm_accuracy=gen_acc,
        disc_accuracy=disc_acc,
        disc_positions=n_disc,
        masked_positions=int(rows.size),
    )
    return ElectraOutput(combined, gen_loss, disc_loss, metrics, replaced, labels)


# -- optimisation --------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay; 1-D tensors (biases, norms) are not decayed."""

    def __init__(self, params: Dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.params = params
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    @classmethod
    def from_schedule(cls, params, s: TrainSchedule) -> "AdamW":
        return cls(params, s.beta1, s.beta2, s.eps, s.weight_decay)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.weight_decay and p.data.ndim > 1:
                p.data *= (1.0 - lr * self.weight_decay)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (lr * update).astype(p.data.dtype)

    def records(self) -> Dict[str, np.ndarray]:
        out = {f"opt.m.{k}": a for k, a in self.m.items()}
        out.update({f"opt.v.{k}": a for k, a in self.v.items()})
        out["opt.t"] = np.asarray(self.t, dtype=np.float32)
        return out

    def load_records(self, records: Dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.m[k] = records[f"opt.m.{k}"].astype(self.params[k].dtype)
            self.v[k] = records[f"opt.v.{k}"].astype(self.params[k].dtype)
        self.t = int(records["opt.t"])


def electra_step(batch, model: RelectraModel, optimizer: AdamW, schedule: TrainSchedule, step: int,
                 vocab, rng: np.random.Generator, pad_mask=None) -> StepMetrics:
    """One optimisation step at schedule position ``step`` (1-based)."""
    optimizer.zero_grad()
    out = electra_loss(model, batch, pad_mask, vocab, rng, mode="train", step=step)
    if not math.isfinite(out.metrics.combined_loss):
        raise NumericError(f"non-finite loss at step {step}")
    out.combined.backward()
    optimizer.step(lr_at(min(step, schedule.total_steps), schedule))
    return out.metrics


def evaluate_batch(model: RelectraModel, ids, pad_mask, vocab, seed: int, step: int) -> StepMetrics:
    """Metrics on a fixed batch with fixed masking/sampling draws and no dropout."""
    with T.no_grad():
        return electra_loss(model, ids, pad_mask, vocab, np.random.default_rng(seed), mode="eval",
                            step=step).metrics


# -- checkpoints --------------------------------------------------------------------

@dataclass
class Checkpoint:
    step: int
    tensors: Dict[str, np.ndarray]
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_words: Optional[np.ndarray] = None
    version: int = ckpt.FORMAT_VERSION

    def records(self) -> Dict[str, np.ndarray]:
        out = {"meta.step": np.asarray(self.step, dtype=np.float32)}
        out.update(self.tensors)
        out.update(self.optimizer)
        if self.rng_words is not None:
            out["meta.rng"] = self.rng_words
        return out

    @classmethod
    def from_records(cls, records: Dict[str, np.ndarray]) -> "Checkpoint":
        step = int(records.get("meta.step", np.float32(0)))
        tensors = {k: v for k, v in records.items() if not k.startswith(("meta.", "opt."))}
        optimizer = {k: v for k, v in records.items() if k.startswith("opt.")}
        return cls(step=step, tensors=tensors, optimizer=optimizer, rng_words=records.get("meta.rng"))

    def save(self, path) -> None:
        ckpt.save(path, self.records())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_records(ckpt.load(path))

    def equals(self, other: "Checkpoint") -> bool:
        a, b = self.records(), other.records()
        return a.keys() == b.keys() and all(
            a[k].shape == b[k].shape and np.asarray(a[k], np.float32).tobytes() == np.asarray(b[k], np.float32).tobytes()
            for k in a)


def make_checkpoint(model: RelectraModel, optimizer: Optional[AdamW], step: int,
                    rng: Optional[np.random.Generator] = None) -> Checkpoint:
    return Checkpoint(
        step=step,
        # copies: training updates parameters and moments in place
        tensors={k: np.array(v, dtype=np.float32) for k, v in model.records().items()},
        optimizer={k: np.array(v, dtype=np.float32) for k, v in optimizer.records().items()} if optimizer else {},
        rng_words=ckpt.rng_to_words(rng) if rng is not None else None,
    )


# -- training loop -------------------------------------------------------------------

@dataclass
class PretrainResult:
    history: List[StepMetrics]
    evals: List[StepMetrics]
    checkpoint: Checkpoint


def pretrain(model: RelectraModel, batches: Iterator, schedule: TrainSchedule, vocab, seed: int,
             eval_batch=None, eval_every: int = 10, metrics_out=None, start_step: int = 0,
             optimizer: Optional[AdamW] = None, rng: Optional[np.random.Generator] = None,
             progress=None, checkpoint_every: int = 0, on_checkpoint=None) -> PretrainResult:
    """Run ``schedule.total_steps - start_step`` optimisation steps.

    ``batches`` yields ``(ids, pad_mask)`` pairs. When ``eval_batch`` is given,
    fixed-draw evaluation metrics are recorded every ``eval_every`` steps and
    written to ``metrics_out`` (a text stream) as CSV lines. Every
    ``checkpoint_every`` steps a resumable checkpoint goes to ``on_checkpoint``.
    """
    params = model.named_parameters()
    optimizer = optimizer or AdamW.from_schedule(params, schedule)
    rng = rng or np.random.default_rng(derive_seed(seed, "pretrain"))
    history: List[StepMetrics] = []
    evals: List[StepMetrics] = []
    eval_seed = derive_seed(seed, "eval")
    if metrics_out is not None and start_step == 0:
        metrics_out.write(METRICS_HEADER + "\n")

    def do_eval(step):
        ids, mask = eval_batch
        m = evaluate_batch(model, ids, mask, vocab, eval_seed, step)
        if not math.isfinite(m.combined_loss):
            raise NumericError(f"non-finite evaluation loss at step {step}")
        evals.append(m)
        if metrics_out is not None:
            metrics_out.write(m.line() + "\n")

    if eval_batch is not None and start_step == 0:
        do_eval(0)
    for step in range(start_step + 1, schedule.total_steps + 1):
        ids, mask = next(batches)
        m = electra_step(ids, model, optimizer, schedule, step, vocab, rng, pad_mask=mask)
        history.append(m)
        if eval_batch is not None and step % eval_every == 0:
            do_eval(step)
        if progress is not None:
            progress(m)
        if checkpoint_every and on_checkpoint is not None and step % checkpoint_every == 0:
            on_checkpoint(make_checkpoint(model, optimizer, step, rng))
    return PretrainResult(history, evals, make_checkpoint(model, optimizer, schedule.total_steps, rng))
