"""Desk-scale experiments on synthetic data, used by the demos and acceptance tests."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

from . import synthetic
from .config import RunConfig
from .corpus import CorpusSource
from .electra import StepMetrics, smooth_accuracy_curve
from .ner import MetricsReport, NerExample, to_subwords, word_example
from .pipeline import FinetuneRun, PretrainRun, finetune_run, pretrain_run
from .seeding import derive_seed
from .tokenizer import Vocab, train_bpe

# 2-layer, d_model 64 models on the 2,000-step scaled schedule
TOY_PRETRAIN = RunConfig(
    vocab_size=600, d_model=64, n_heads=4, n_layers=2, d_ffn=256, max_seq_len=64, chunk_size=32,
    n_hash_rounds=2, total_steps=2_000, warmup_steps=200, phase_switch_step=1_400, segment_len=64,
    eval_every=25, eval_docs=200, ner_max_len=64,
)
NER_BENCHMARK = dataclasses.replace(
    TOY_PRETRAIN, vocab_size=1000, max_seq_len=2048, chunk_size=64, segment_len=256, eval_every=100,
    eval_docs=32, labels="mixed", ner_max_len=1536,
)
TOY_DOCS = 3000
TOY_HELD_OUT = 200


@dataclass
class ToyPretraining:
    run: PretrainRun
    chance: float

    @property
    def evals(self) -> List[StepMetrics]:
        return self.run.result.evals

    def curves(self, window: int = 200) -> Tuple[List[Tuple[float, float]], List[Tuple[float, float]]]:
        """Smoothed (step, accuracy) curves for the generator and the discriminator."""
        gen = [(m.step, m.gen_mlm_accuracy) for m in self.evals]
        disc = [(m.step, m.disc_accuracy) for m in self.evals]
        return smooth_accuracy_curve(gen, window), smooth_accuracy_curve(disc, window)


def toy_pretraining(seed: int = 0, out_dir: Optional[Path] = None, cfg: RunConfig = TOY_PRETRAIN) -> ToyPretraining:
    """Pretrain on grammar-generated text over the 200-word toy vocabulary.

    Metrics come from a fixed batch of held-out documents. Chance accuracy for
    the generator is one over the number of word types.
    """
    cfg = dataclasses.replace(cfg, seed=seed)
    docs = synthetic.toy_corpus(TOY_DOCS, derive_seed(seed, "toy", "corpus"))
    held_out, train_docs = docs[:TOY_HELD_OUT], docs[TOY_HELD_OUT:]
    vocab = train_bpe(train_docs, cfg.vocab_size, lowercase=cfg.lowercase)
    run = pretrain_run(cfg, [CorpusSource("toy", "mixed", documents=train_docs)], vocab, out_dir,
                       eval_docs=held_out)
    return ToyPretraining(run, 1.0 / len(synthetic.TOY_WORDS))


@dataclass
class NerData:
    vocab: Vocab
    unlabeled: List[str]
    train: List[NerExample]
    dev: List[NerExample]
    test: List[NerExample]


def ner_data(seed: int = 0, cfg: RunConfig = NER_BENCHMARK, n_train: int = 1000, n_dev: int = 200,
             n_test: int = 200, n_unlabeled: int = 2000) -> NerData:
    labels = ("PLT", "DEF", "TYPE", "PROB") if cfg.labels == "mixed" else ("PLT", "DEF", "TYPE")
    unlabeled = [d.text for d in synthetic.case_corpus(n_unlabeled, derive_seed(seed, "ner", "unlabeled"))]
    vocab = train_bpe(unlabeled, cfg.vocab_size, lowercase=cfg.lowercase)
    docs = synthetic.case_corpus(n_train + n_dev + n_test, derive_seed(seed, "ner", "labeled"), labels)
    exs = [to_subwords(word_example(d.text, d.spans, f"case-{i}"), vocab) for i, d in enumerate(docs)]
    return NerData(vocab, unlabeled, exs[:n_train], exs[n_train:n_train + n_dev], exs[n_train + n_dev:])


@dataclass
class NerBenchmark:
    data: NerData
    pretraining: PretrainRun
    finetuning: FinetuneRun

    @property
    def report(self) -> MetricsReport:
        return self.finetuning.test_report


def ner_benchmark(seed: int = 0, out_dir: Optional[Path] = None, cfg: RunConfig = NER_BENCHMARK) -> NerBenchmark:
    """Pretrain on unlabeled case text, fine-tune on 1,000 labelled cases, score 200 held-out cases."""
    cfg = dataclasses.replace(cfg, seed=seed)
    data = ner_data(seed, cfg)
    out = Path(out_dir) if out_dir is not None else None
    pre = pretrain_run(cfg, [CorpusSource("cases", "legal", documents=data.unlabeled)], data.vocab,
                       out / "pretrain" if out else None)
    ft = finetune_run(cfg, pre.result.checkpoint, data.vocab, data.train, data.dev, data.test,
                      out / "ner" if out else None)
    return NerBenchmark(data, pre, ft)
