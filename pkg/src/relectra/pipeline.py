"""End-to-end runs with on-disk artifacts: pretraining and NER fine-tuning.

Output directory layout::

    effective_config.txt   every resolved config value
    vocab.txt              tokenizer
    metrics.csv            step,gen_loss,disc_loss,gen_acc,disc_acc
    checkpoint.rlct        model, optimizer moments, RNG state
    ner.rlct               fine-tuned tagger (NER runs)
    ner_dev.csv            per-epoch dev f1 (NER runs)
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import checkpoint as ckpt
from .config import RunConfig
from .corpus import CorpusSource, make_batches, mix_corpora, pad_rows, segment
from .electra import AdamW, Checkpoint, PretrainResult, RelectraModel, StepMetrics, pretrain
from .errors import DataError
from .ner import (MetricsReport, NerExample, NerTagger, FinetuneResult, LABEL_SETS, evaluate_ner, finetune,
                  predict_examples)
from .seeding import rng_for
from .tokenizer import Vocab, encode, save_vocab, train_bpe

log = logging.getLogger("relectra")

CONFIG_FILE = "effective_config.txt"
VOCAB_FILE = "vocab.txt"
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.rlct"
NER_CHECKPOINT_FILE = "ner.rlct"
NER_DEV_FILE = "ner_dev.csv"


def train_tokenizer(sources: Sequence[CorpusSource], cfg: RunConfig) -> Vocab:
    docs = [d for s in sources for d in s.documents]
    return train_bpe(docs, cfg.vocab_size, lowercase=cfg.lowercase)


def eval_batch_from(docs: Sequence[str], vocab: Vocab, segment_len: int):
    rows = [segment(encode(d, vocab).ids, vocab, segment_len)[0] for d in docs]
    b = pad_rows(rows, vocab.pad_id)
    return b.ids, b.pad_mask


@dataclass
class PretrainRun:
    model: RelectraModel
    result: PretrainResult
    vocab: Vocab
    out_dir: Optional[Path]


def pretrain_run(cfg: RunConfig, sources: Sequence[CorpusSource], vocab: Vocab,
                 out_dir: Optional[Path] = None, resume: Optional[Checkpoint] = None,
                 eval_docs: Optional[Sequence[str]] = None) -> PretrainRun:
    """Pretrain from ``sources``; with ``resume`` continue from a saved step.

    Batches come from one seeded stream, so a resumed run skips the batches
    already consumed and then proceeds exactly as the uninterrupted run.
    ``eval_docs`` defaults to ``cfg.eval_docs`` documents drawn from a
    separate stream.
    """
    if not any(s.documents for s in sources):
        raise DataError("no documents in any corpus source")
    model = RelectraModel.create(cfg.electra(vocab_size=len(vocab)))
    schedule = cfg.schedule()
    stream = mix_corpora(sources, rng_for(cfg.seed, "corpus", "mix"))
    batches = ((b.ids, b.pad_mask) for b in make_batches(stream, vocab, cfg.batch_size, cfg.segment_len))
    if eval_docs is None:
        eval_docs = list(itertools.islice(mix_corpora(sources, rng_for(cfg.seed, "corpus", "eval")), cfg.eval_docs))
    eval_batch = eval_batch_from(eval_docs, vocab, cfg.segment_len)

    start, optimizer, rng = 0, None, None
    if resume is not None:
        model.load_records(resume.tensors)
        optimizer = AdamW.from_schedule(model.named_parameters(), schedule)
        optimizer.load_records(resume.optimizer)
        if resume.rng_words is None:
            raise DataError("checkpoint has no RNG state; it cannot be resumed")
        rng = ckpt.rng_from_words(resume.rng_words)
        start = resume.step
        for _ in range(start):
            next(batches)
        log.info("resuming at step %d", start)

    metrics = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / CONFIG_FILE).write_text(cfg.snapshot(), encoding="utf-8")
        save_vocab(vocab, out_dir / VOCAB_FILE)
        metrics = open(out_dir / METRICS_FILE, "a" if resume is not None else "w", encoding="utf-8")

    def progress(m: StepMetrics):
        if m.step % cfg.eval_every == 0:
            log.info("step=%d gen_loss=%.4f disc_loss=%.4f gen_acc=%.4f disc_acc=%.4f",
                     m.step, m.gen_loss, m.disc_loss, m.gen_mlm_accuracy, m.disc_accuracy)

    def save(c: Checkpoint):
        if out_dir is not None:
            c.save(out_dir / CHECKPOINT_FILE)

    try:
        result = pretrain(model, batches, schedule, vocab, cfg.seed, eval_batch=eval_batch,
                          eval_every=cfg.eval_every, metrics_out=metrics, start_step=start,
                          optimizer=optimizer, rng=rng, progress=progress,
                          checkpoint_every=cfg.checkpoint_every, on_checkpoint=save)
    finally:
        if metrics is not None:
            metrics.close()
    save(result.checkpoint)
    return PretrainRun(model, result, vocab, out_dir)


@dataclass
class FinetuneRun:
    result: FinetuneResult
    test_report: Optional[MetricsReport]


def finetune_run(cfg: RunConfig, pretrained: Checkpoint, vocab: Vocab, train: Sequence[NerExample],
                 dev: Sequence[NerExample], test: Sequence[NerExample] = (),
                 out_dir: Optional[Path] = None) -> FinetuneRun:
    labels = LABEL_SETS[cfg.labels]
    rcfg = cfg.electra(vocab_size=len(vocab)).discriminator_cfg
    tagger = NerTagger.from_checkpoint(pretrained, rcfg, labels, cfg.seed)
    res = finetune(tagger, train, dev, epochs=cfg.ner_epochs, lr=cfg.ner_lr, seed=cfg.seed,
                   max_len=cfg.ner_max_len, stride=cfg.ner_stride, progress=log.info)
    report = None
    if test:
        preds = predict_examples(res.tagger, test, cfg.ner_max_len, cfg.ner_stride)
        report = evaluate_ner(preds, [ex.spans for ex in test], labels)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / CONFIG_FILE).write_text(cfg.snapshot(), encoding="utf-8")
        res.checkpoint.save(out_dir / NER_CHECKPOINT_FILE)
        lines = ["epoch,dev_f1"] + [f"{i},{f:.6f}" for i, f in enumerate(res.dev_history, 1)]
        (out_dir / NER_DEV_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
        if report is not None:
            (out_dir / "ner_test.csv").write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    return FinetuneRun(res, report)
